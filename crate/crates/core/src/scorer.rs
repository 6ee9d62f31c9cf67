//! The scoring contract shared by every model family.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bow::BowScorer;
use crate::error::{Error, Result};
use crate::rnn::RnnScorer;
use crate::transformer::TransformerScorer;
use crate::weights::WeightFile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    Bow,
    Rnn,
    Transformer,
}

impl ScorerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScorerKind::Bow => "bow",
            ScorerKind::Rnn => "rnn",
            ScorerKind::Transformer => "transformer",
        }
    }
}

impl fmt::Display for ScorerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScorerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bow" => Ok(ScorerKind::Bow),
            "rnn" => Ok(ScorerKind::Rnn),
            "transformer" => Ok(ScorerKind::Transformer),
            other => Err(Error::InvalidArgument(format!(
                "unknown scorer {other:?} (expected bow, rnn or transformer)"
            ))),
        }
    }
}

/// Score of one scored window. For word-level scorers the whole fragment is
/// a single window measured in words; for the transformer it is a sub-word
/// segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentScore {
    pub start: usize,
    pub length: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FragmentScore {
    /// Maximum over `segments`; 0.0 when there are none.
    pub score: f64,
    pub segments: Vec<SegmentScore>,
}

impl FragmentScore {
    pub fn from_segments(segments: Vec<SegmentScore>) -> Self {
        let score = segments.iter().map(|s| s.score).fold(None, |acc: Option<f64>, s| {
            Some(acc.map_or(s, |a| a.max(s)))
        });
        FragmentScore {
            score: score.unwrap_or(0.0),
            segments,
        }
    }

    pub fn single(length: usize, score: f64) -> Self {
        FragmentScore {
            score,
            segments: vec![SegmentScore {
                start: 0,
                length,
                score,
            }],
        }
    }

    /// First segment attaining the maximum.
    pub fn best_segment(&self) -> Option<&SegmentScore> {
        self.segments.iter().find(|s| s.score == self.score)
    }
}

pub trait Scorer: Send + Sync {
    /// Stable identifier: kind plus a digest of the weights.
    fn model_id(&self) -> &str;

    fn score_fragment(&self, text: &str) -> FragmentScore;

    fn score(&self, text: &str) -> f64 {
        self.score_fragment(text).score
    }
}

impl<S: Scorer + ?Sized> Scorer for Arc<S> {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }
    fn score_fragment(&self, text: &str) -> FragmentScore {
        (**self).score_fragment(text)
    }
    fn score(&self, text: &str) -> f64 {
        (**self).score(text)
    }
}

impl<S: Scorer + ?Sized> Scorer for Box<S> {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }
    fn score_fragment(&self, text: &str) -> FragmentScore {
        (**self).score_fragment(text)
    }
    fn score(&self, text: &str) -> f64 {
        (**self).score(text)
    }
}

pub fn model_id_for(kind: ScorerKind, weights: &WeightFile) -> String {
    let digest = Sha256::digest(weights.to_bytes());
    format!("{kind}-{}", &hex::encode(digest)[..12])
}

/// Reconstruct whichever scorer a weight file holds.
pub fn scorer_from_weights(weights: &WeightFile) -> Result<Arc<dyn Scorer>> {
    let kind: ScorerKind = weights.model.parse()?;
    Ok(match kind {
        ScorerKind::Bow => Arc::new(BowScorer::from_weights(weights)?),
        ScorerKind::Rnn => Arc::new(RnnScorer::from_weights(weights)?),
        ScorerKind::Transformer => Arc::new(TransformerScorer::from_weights(weights)?),
    })
}

pub fn load_scorer(path: impl AsRef<Path>) -> Result<Arc<dyn Scorer>> {
    scorer_from_weights(&WeightFile::load(path)?)
}
