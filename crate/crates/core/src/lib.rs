//! Alarming-response triage: three interchangeable text scorers, cutoff
//! calibration against a threshold corpus, and the shared data model.

pub mod autodiff;
pub mod bow;
pub mod calibration;
pub mod corpus;
pub mod error;
pub mod linalg;
pub mod optim;
pub mod rnn;
pub mod scorer;
pub mod synth;
pub mod textprep;
pub mod transformer;
pub mod weights;

pub use bow::{train_bow, BowConfig, BowScorer};
pub use calibration::{CutoffTable, EfficacyCurve, ScoreDistribution};
pub use corpus::{LabeledText, RubricCategory, Source, ThresholdCorpus, ValidationSet};
pub use error::{Error, Result};
pub use rnn::{train_rnn, RnnScorer, RnnTrainConfig};
pub use scorer::{load_scorer, scorer_from_weights, FragmentScore, Scorer, ScorerKind, SegmentScore};
pub use transformer::{train_transformer, TransformerScorer, TransformerTrainConfig};
pub use weights::WeightFile;
