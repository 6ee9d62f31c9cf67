//! Review-percentage cutoffs from a threshold corpus and efficacy curves on
//! a validation set of known alarming texts.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{ThresholdCorpus, ValidationSet};
use crate::error::{Error, Result};
use crate::scorer::Scorer;

pub const DEFAULT_PERCENTS: [f64; 7] = [0.05, 0.1, 0.3, 0.5, 1.0, 2.0, 4.0];

/// Texts the smallest percentage must flag for the corpus to be large enough.
pub const MIN_FLAGGED_AT_SMALLEST_P: f64 = 20.0;

pub const CSV_HEADER: &str = "model,p,cutoff,flagged_fraction,efficacy";

/// Threshold-corpus scores, sorted ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreDistribution {
    scores: Vec<f64>,
}

impl ScoreDistribution {
    pub fn from_scores(mut scores: Vec<f64>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::InvalidArgument("score distribution needs at least one score".into()));
        }
        if let Some(bad) = scores.iter().find(|s| s.is_nan()) {
            return Err(Error::Validation(format!("score distribution contains {bad}")));
        }
        scores.sort_by(f64::total_cmp);
        Ok(ScoreDistribution { scores })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn max(&self) -> f64 {
        *self.scores.last().expect("non-empty")
    }

    /// Number of scores `>= cutoff`.
    pub fn count_at_least(&self, cutoff: f64) -> usize {
        self.scores.len() - self.scores.partition_point(|&s| s < cutoff)
    }
}

/// Score every threshold text (in parallel) and sort.
pub fn build_distribution(scorer: &(impl Scorer + ?Sized), corpus: &ThresholdCorpus) -> Result<ScoreDistribution> {
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("threshold corpus is empty".into()));
    }
    let scores: Vec<f64> = corpus.texts().par_iter().map(|t| scorer.score(t)).collect();
    ScoreDistribution::from_scores(scores)
}

fn check_percent(p: f64) -> Result<()> {
    if !(p > 0.0 && p <= 100.0) {
        return Err(Error::InvalidArgument(format!("review percentage {p} must lie in (0, 100]")));
    }
    Ok(())
}

/// Largest flag count allowed at `p` percent of `n` texts.
pub fn allowed_flags(n: usize, p: f64) -> usize {
    (p * n as f64 / 100.0 + 1e-9).floor() as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cutoff {
    pub cutoff: f64,
    pub flagged: usize,
}

/// Smallest distribution score `c` with `|{s >= c}| / n <= p / 100`. When no
/// score qualifies the cutoff sits just above the maximum and flags nothing.
pub fn cutoff_for_percent(dist: &ScoreDistribution, p: f64) -> Result<Cutoff> {
    check_percent(p)?;
    let n = dist.len();
    let s = dist.scores();
    let allowed = allowed_flags(n, p).min(n);
    let mut i = n - allowed;
    // Skip forward to the first index of a run of equal values.
    while i < n && i > 0 && s[i - 1] == s[i] {
        i += 1;
    }
    Ok(if i >= n {
        Cutoff {
            cutoff: dist.max().next_up(),
            flagged: 0,
        }
    } else {
        Cutoff {
            cutoff: s[i],
            flagged: n - i,
        }
    })
}

/// Percentage of validation texts scoring at or above `cutoff`.
pub fn efficacy(scorer: &(impl Scorer + ?Sized), validation: &ValidationSet, cutoff: f64) -> Result<f64> {
    let scores = validation_scores(scorer, validation)?;
    Ok(efficacy_from_scores(&scores, cutoff))
}

pub fn validation_scores(scorer: &(impl Scorer + ?Sized), validation: &ValidationSet) -> Result<Vec<f64>> {
    if validation.is_empty() {
        return Err(Error::InvalidArgument("validation set is empty".into()));
    }
    Ok(validation.texts().par_iter().map(|r| scorer.score(&r.text)).collect())
}

pub fn efficacy_from_scores(scores: &[f64], cutoff: f64) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    100.0 * scores.iter().filter(|&&s| s >= cutoff).count() as f64 / scores.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutoffEntry {
    pub p: f64,
    pub cutoff: f64,
    pub flagged: usize,
    pub flagged_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutoffTable {
    pub model: String,
    /// Content hash of the threshold corpus.
    pub fingerprint: String,
    pub corpus_size: usize,
    /// Ascending in `p`.
    pub entries: Vec<CutoffEntry>,
}

impl CutoffTable {
    pub fn from_distribution(model: &str, fingerprint: &str, dist: &ScoreDistribution, percents: &[f64]) -> Result<Self> {
        if percents.is_empty() {
            return Err(Error::InvalidArgument("no review percentages given".into()));
        }
        let mut ps = percents.to_vec();
        for &p in &ps {
            check_percent(p)?;
        }
        ps.sort_by(f64::total_cmp);
        ps.dedup();
        let entries = ps
            .into_iter()
            .map(|p| {
                let c = cutoff_for_percent(dist, p)?;
                Ok(CutoffEntry {
                    p,
                    cutoff: c.cutoff,
                    flagged: c.flagged,
                    flagged_fraction: c.flagged as f64 / dist.len() as f64,
                })
            })
            .collect::<Result<_>>()?;
        Ok(CutoffTable {
            model: model.to_string(),
            fingerprint: fingerprint.to_string(),
            corpus_size: dist.len(),
            entries,
        })
    }

    pub fn entry(&self, p: f64) -> Option<&CutoffEntry> {
        self.entries.iter().find(|e| (e.p - p).abs() < 1e-12)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self).expect("serializable");
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            message: format!("cutoff table {}: {e}", path.display()),
        })
    }
}

/// Score the threshold corpus and derive a cutoff per percentage.
pub fn calibrate(scorer: &(impl Scorer + ?Sized), corpus: &ThresholdCorpus, percents: &[f64]) -> Result<CutoffTable> {
    let dist = build_distribution(scorer, corpus)?;
    CutoffTable::from_distribution(scorer.model_id(), &corpus.fingerprint(), &dist, percents)
}

/// Warning text when the corpus is too small for the smallest percentage.
pub fn sizing_warning(n: usize, percents: &[f64]) -> Option<String> {
    let p_min = percents.iter().copied().fold(f64::INFINITY, f64::min);
    if !p_min.is_finite() {
        return None;
    }
    let needed = (MIN_FLAGGED_AT_SMALLEST_P / (p_min / 100.0)).ceil() as usize;
    (n < needed).then(|| {
        format!(
            "threshold corpus has {n} texts; p = {p_min}% needs at least {needed} to flag {MIN_FLAGGED_AT_SMALLEST_P} texts"
        )
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficacyPoint {
    pub p: f64,
    pub cutoff: f64,
    pub flagged_fraction: f64,
    pub efficacy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficacyCurve {
    pub model: String,
    pub points: Vec<EfficacyPoint>,
}

impl EfficacyCurve {
    pub fn from_table(table: &CutoffTable, validation_scores: &[f64]) -> Self {
        EfficacyCurve {
            model: table.model.clone(),
            points: table
                .entries
                .iter()
                .map(|e| EfficacyPoint {
                    p: e.p,
                    cutoff: e.cutoff,
                    flagged_fraction: e.flagged_fraction,
                    efficacy: efficacy_from_scores(validation_scores, e.cutoff),
                })
                .collect(),
        }
    }

    pub fn at(&self, p: f64) -> Option<f64> {
        self.points.iter().find(|e| (e.p - p).abs() < 1e-12).map(|e| e.efficacy)
    }

    pub fn is_monotone(&self) -> bool {
        self.points.windows(2).all(|w| w[0].efficacy <= w[1].efficacy)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for e in &self.points {
            let _ = writeln!(out, "{},{},{:.4},{:.6},{:.2}", self.model, e.p, e.cutoff, e.flagged_fraction, e.efficacy);
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }
}

/// Efficacy at every percentage, calibrating on the threshold corpus first.
pub fn efficacy_curve(
    scorer: &(impl Scorer + ?Sized),
    corpus: &ThresholdCorpus,
    validation: &ValidationSet,
    percents: &[f64],
) -> Result<EfficacyCurve> {
    let table = calibrate(scorer, corpus, percents)?;
    Ok(EfficacyCurve::from_table(&table, &validation_scores(scorer, validation)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(v: &[f64]) -> ScoreDistribution {
        ScoreDistribution::from_scores(v.to_vec()).unwrap()
    }

    #[test]
    fn ten_values_twenty_percent() {
        let d = dist(&[0.3, 0.1, 0.2, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]);
        let c = cutoff_for_percent(&d, 20.0).unwrap();
        assert_eq!(c.cutoff, 0.9);
        assert_eq!(c.flagged, 2);
        assert_eq!(cutoff_for_percent(&d, 100.0).unwrap().cutoff, 0.1);
    }

    #[test]
    fn too_small_percentage_flags_nothing() {
        let d = dist(&(0..1000).map(|i| i as f64 / 1000.0).collect::<Vec<_>>());
        let c = cutoff_for_percent(&d, 0.05).unwrap();
        assert_eq!(c.flagged, 0);
        assert!(c.cutoff > d.max());
        assert_eq!(d.count_at_least(c.cutoff), 0);
    }

    #[test]
    fn ties_are_never_split() {
        let d = dist(&[0.1, 0.5, 0.5, 0.5, 0.9]);
        // Two flags allowed at 40%, but the 0.5 run has three members.
        let c = cutoff_for_percent(&d, 40.0).unwrap();
        assert_eq!((c.cutoff, c.flagged), (0.9, 1));
        let c = cutoff_for_percent(&d, 20.0).unwrap();
        assert_eq!((c.cutoff, c.flagged), (0.9, 1));
        let d = dist(&[0.7; 4]);
        assert_eq!(cutoff_for_percent(&d, 50.0).unwrap().flagged, 0);
        assert_eq!(cutoff_for_percent(&d, 100.0).unwrap().flagged, 4);
    }

    #[test]
    fn percent_range_checked() {
        let d = dist(&[0.5]);
        assert!(cutoff_for_percent(&d, 0.0).is_err());
        assert!(cutoff_for_percent(&d, 100.5).is_err());
        assert!(cutoff_for_percent(&d, f64::NAN).is_err());
        assert!(ScoreDistribution::from_scores(vec![]).is_err());
    }

    #[test]
    fn efficacy_bounds() {
        let s = [0.2, 0.4, 0.6, 0.8];
        assert_eq!(efficacy_from_scores(&s, 0.0), 100.0);
        assert_eq!(efficacy_from_scores(&s, 0.9), 0.0);
        assert_eq!(efficacy_from_scores(&s, 0.6), 50.0);
    }

    #[test]
    fn sizing_rule() {
        assert!(sizing_warning(39_999, &DEFAULT_PERCENTS).is_some());
        assert!(sizing_warning(40_000, &DEFAULT_PERCENTS).is_none());
    }

    #[test]
    fn csv_layout() {
        let d = dist(&[0.1, 0.2, 0.3, 0.4]);
        let t = CutoffTable::from_distribution("m", "f", &d, &[50.0, 25.0]).unwrap();
        let csv = EfficacyCurve::from_table(&t, &[0.35, 0.05]).to_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines[1], "m,25,0.4000,0.250000,0.00");
        assert_eq!(lines[2], "m,50,0.3000,0.500000,50.00");
    }
}
