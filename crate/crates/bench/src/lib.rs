//! Shared fixtures for the benchmarks: small scorers trained on synthetic data.

use triage_core::synth::generate_synthetic;
use triage_core::transformer::EncoderConfig;
use triage_core::{train_bow, train_transformer, BowConfig, BowScorer, TransformerScorer, TransformerTrainConfig};

/// Labeled synthetic texts and their labels.
pub fn corpus(n_normal: usize, n_asr: usize, seed: u64) -> (Vec<String>, Vec<u8>) {
    let records = generate_synthetic(n_normal, n_asr, seed).expect("synthetic corpus");
    records.into_iter().map(|r| (r.text, r.label.value())).unzip()
}

pub fn bow_scorer() -> BowScorer {
    let (texts, labels) = corpus(1500, 100, 7);
    train_bow(
        &texts,
        &labels,
        &BowConfig {
            k: 50,
            ..Default::default()
        },
    )
    .expect("bow training")
}

/// An encoder at toy size, trained for one short epoch.
pub fn transformer_scorer() -> TransformerScorer {
    let (texts, labels) = corpus(300, 60, 11);
    let mut cfg = TransformerTrainConfig {
        encoder: EncoderConfig::toy(500),
        ..Default::default()
    };
    cfg.fine_tune.epochs = 1;
    train_transformer(&texts, &labels, &cfg).expect("transformer training")
}

/// A text of roughly `words` words drawn from the synthetic generator.
pub fn long_text(words: usize, seed: u64) -> String {
    let (texts, _) = corpus(words / 8 + 1, 0, seed);
    let joined = texts.join(" ");
    joined.split_whitespace().take(words).collect::<Vec<_>>().join(" ")
}
