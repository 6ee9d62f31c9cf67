use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use triage_core::calibration::{
    calibrate, cutoff_for_percent, validation_scores, EfficacyCurve, ScoreDistribution, DEFAULT_PERCENTS,
};
use triage_core::corpus::{Label, LabeledText, RubricCategory, Source};
use triage_core::scorer::{FragmentScore, Scorer};
use triage_core::{ThresholdCorpus, ValidationSet};

use crate::benchmark;
use crate::{ensure, Outcome};

/// Review percentages in hundredths of a percent, so allowed counts are exact integers.
const HUNDREDTHS: [u64; 7] = [5, 10, 30, 50, 100, 200, 400];

/// Smallest candidate cutoff whose flagged count does not exceed the
/// allowance; candidates are the distinct scores, then "above the maximum".
fn brute_force(scores: &[f64], hundredths: u64) -> (f64, usize) {
    let allowed = (hundredths * scores.len() as u64 / 10_000) as usize;
    let mut candidates: Vec<f64> = scores.to_vec();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    for c in candidates {
        let flagged = scores.iter().filter(|&&s| s >= c).count();
        if flagged <= allowed {
            return (c, flagged);
        }
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (max.next_up(), 0)
}

pub fn calibration() -> Outcome {
    let n = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(10_000);
    let distributions: Vec<(&str, Vec<f64>)> = vec![
        ("uniform", (0..n).map(|_| rng.random::<f64>()).collect()),
        ("skewed", (0..n).map(|_| rng.random::<f64>().powi(8)).collect()),
        ("tied", (0..n).map(|_| (rng.random::<f64>() * 50.0).floor() / 50.0).collect()),
        ("constant-tail", (0..n).map(|i| if i % 10 == 0 { 1.0 } else { rng.random::<f64>() * 0.9 }).collect()),
    ];
    for (name, scores) in &distributions {
        let dist = ScoreDistribution::from_scores(scores.clone()).map_err(|e| e.to_string())?;
        let distinct = {
            let mut s = scores.clone();
            s.sort_by(f64::total_cmp);
            s.dedup();
            s.len() == scores.len()
        };
        for (&p, &h) in DEFAULT_PERCENTS.iter().zip(&HUNDREDTHS) {
            let got = cutoff_for_percent(&dist, p).map_err(|e| e.to_string())?;
            let (cutoff, flagged) = brute_force(scores, h);
            ensure(got.cutoff == cutoff && got.flagged == flagged, || {
                format!("{name} p={p}: got ({}, {}), brute force ({cutoff}, {flagged})", got.cutoff, got.flagged)
            })?;
            let fraction = flagged as f64 / n as f64;
            ensure(fraction <= p / 100.0, || format!("{name} p={p}: flagged fraction {fraction} above p"))?;
            if distinct {
                ensure(fraction > p / 100.0 - 1.0 / n as f64, || {
                    format!("{name} p={p}: flagged fraction {fraction} too far below p")
                })?;
            }
        }
    }

    let bench = benchmark::fixture()?;
    let mut curves = Vec::new();
    for (name, curve) in &bench.curves {
        ensure(curve.is_monotone(), || format!("{name} efficacy is not monotone: {}", curve.to_csv()))?;
        curves.push(name.as_str());
    }
    Ok(format!(
        "{} distributions x 7 percentages match brute force; E(p) monotone for {}",
        distributions.len(),
        curves.join(", ")
    ))
}

/// Scores are a hash of the text mapped to [0, 1).
struct UniformScorer;

impl Scorer for UniformScorer {
    fn model_id(&self) -> &str {
        "uniform"
    }
    fn score_fragment(&self, text: &str) -> FragmentScore {
        let d = Sha256::digest(text.as_bytes());
        let bits = u64::from_le_bytes(d[..8].try_into().unwrap()) >> 11;
        FragmentScore::single(1, bits as f64 / (1u64 << 53) as f64)
    }
}

pub fn uniform_scorer() -> Outcome {
    let threshold = ThresholdCorpus::new((0..10_000).map(|i| format!("threshold text {i}")).collect());
    let validation = ValidationSet::new(
        (0..1000)
            .map(|i| LabeledText {
                id: format!("v{i}"),
                text: format!("validation text {i}"),
                label: Label::ASR,
                source: Source::Student,
                category: Some(RubricCategory::HarmToSelf),
            })
            .collect(),
    )
    .map_err(|e| e.to_string())?;
    let table = calibrate(&UniformScorer, &threshold, &DEFAULT_PERCENTS).map_err(|e| e.to_string())?;
    let scores = validation_scores(&UniformScorer, &validation).map_err(|e| e.to_string())?;
    let curve = EfficacyCurve::from_table(&table, &scores);
    let mut report = Vec::new();
    for point in &curve.points {
        let q = point.p / 100.0;
        // The cutoff is itself estimated from the threshold corpus, so both samples contribute.
        let sigma = (q * (1.0 - q) * (1.0 / 1000.0 + 1.0 / 10_000.0)).sqrt() * 100.0;
        let dev = (point.efficacy - point.p).abs();
        ensure(dev <= 3.0 * sigma, || {
            format!("p={}: E={} deviates {dev:.3} > 3 sigma = {:.3}", point.p, point.efficacy, 3.0 * sigma)
        })?;
        report.push(format!("{}:{:.1}", point.p, point.efficacy));
    }
    Ok(format!("E(p) within 3 sigma of p [{}]", report.join(" ")))
}
