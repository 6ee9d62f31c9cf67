//! Records exchanged with clients and persisted in the review log.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use triage_core::corpus::{Label, LabeledText, RubricCategory, Source};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmittedResponse {
    pub response_id: String,
    pub item_id: String,
    pub text: String,
    pub received_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentSpan {
    pub start: usize,
    pub length: usize,
}

/// One scored fragment of a response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FragmentRecord {
    pub fragment_id: String,
    pub response_id: String,
    pub index: usize,
    pub text: String,
    pub score: f64,
    pub flagged: bool,
    pub segment_scores: Vec<f64>,
    pub best_segment: SegmentSpan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlagDecision {
    pub fragment_id: String,
    pub score: f64,
    pub cutoff: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewStatus {
    Pending,
    Adjudicated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    TrueAsr,
    FalsePositive,
}

/// Body of an adjudication request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdjudicationRequest {
    pub outcome: Outcome,
    #[serde(default)]
    pub category: Option<RubricCategory>,
    #[serde(default)]
    pub reviewer_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Adjudication {
    pub outcome: Outcome,
    pub category: Option<RubricCategory>,
    pub reviewer_id: String,
    pub adjudicated_at: DateTime<Utc>,
}

impl Adjudication {
    pub fn matches(&self, req: &AdjudicationRequest) -> bool {
        self.outcome == req.outcome && self.category == req.category && self.reviewer_id == req.reviewer_id
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub fragment_id: String,
    pub response_id: String,
    pub item_id: String,
    pub text: String,
    pub score: f64,
    pub cutoff: f64,
    pub segment_scores: Vec<f64>,
    pub best_segment: SegmentSpan,
    pub received_at: DateTime<Utc>,
    pub status: ReviewStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adjudication: Option<Adjudication>,
}

impl ReviewItem {
    /// Export form: true alarming responses carry label 1 and their category.
    pub fn to_labeled(&self) -> Option<LabeledText> {
        let adj = self.adjudication.as_ref()?;
        let (label, category) = match adj.outcome {
            Outcome::TrueAsr => (Label::ASR, adj.category),
            Outcome::FalsePositive => (Label::NORMAL, None),
        };
        Some(LabeledText {
            id: self.fragment_id.clone(),
            text: self.text.clone(),
            label,
            source: Source::Student,
            category,
        })
    }
}
