//! Bag-of-words scorer: tf-idf, truncated spectral projection, logistic
//! regression.

pub mod lsa;
pub mod logreg;
pub mod tfidf;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use serde_json::json;

pub use lsa::{fit_lsa, LinearOperator, LsaOptions, LsaProjection, SparseColumns};
pub use logreg::{loss_and_grad, sigmoid, train_logreg, LogRegConfig, LogisticClassifier};
pub use tfidf::{fit_tfidf, SparseVec, TfIdfModel, VocabularyIndex};

use crate::error::{Error, Result};
use crate::scorer::{model_id_for, FragmentScore, Scorer, ScorerKind};
use crate::textprep::tokenize_words;
use crate::weights::WeightFile;

pub const DEFAULT_LSA_DIM: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BowConfig {
    /// Retained LSA dimension; clamped to `min(|V|, |D|)` when larger.
    pub k: usize,
    pub logreg: LogRegConfig,
    pub lsa_tolerance: f64,
    pub lsa_max_iterations: usize,
}

impl Default for BowConfig {
    fn default() -> Self {
        BowConfig {
            k: DEFAULT_LSA_DIM,
            logreg: LogRegConfig::default(),
            lsa_tolerance: 1e-10,
            lsa_max_iterations: 500,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BowScorer {
    pub tfidf: TfIdfModel,
    pub lsa: LsaProjection,
    pub classifier: LogisticClassifier,
    config: BowConfig,
    model_id: String,
}

impl BowScorer {
    pub fn new(tfidf: TfIdfModel, lsa: LsaProjection, classifier: LogisticClassifier, config: BowConfig) -> Self {
        let mut s = BowScorer {
            tfidf,
            lsa,
            classifier,
            config,
            model_id: String::new(),
        };
        s.model_id = model_id_for(ScorerKind::Bow, &s.to_weights());
        s
    }

    /// LSA embedding of raw text.
    pub fn embed(&self, text: &str) -> Array1<f64> {
        let words = tokenize_words(text);
        self.lsa.project_sparse(&self.tfidf.transform_sparse(&words))
    }

    pub fn bow_score(&self, text: &str) -> f64 {
        self.classifier.predict(self.embed(text).view())
    }

    pub fn config(&self) -> &BowConfig {
        &self.config
    }

    pub fn to_weights(&self) -> WeightFile {
        let mut w = WeightFile::new(
            ScorerKind::Bow.as_str(),
            json!({
                "k": self.lsa.k(),
                "doc_count": self.tfidf.doc_count,
                "config": self.config,
            }),
        );
        w.metadata = json!({ "vocab": self.tfidf.vocab.words() });
        w.put_vector("idf", &self.tfidf.idf).expect("fresh tensor");
        w.put_matrix("lsa.components", &self.lsa.components).expect("fresh tensor");
        w.put_vector("lsa.singular_values", &self.lsa.singular_values).expect("fresh tensor");
        w.put_vector("logreg.w", &self.classifier.weights).expect("fresh tensor");
        w.put_scalar("logreg.b", self.classifier.bias).expect("fresh tensor");
        w
    }

    pub fn from_weights(w: &WeightFile) -> Result<Self> {
        if w.model != ScorerKind::Bow.as_str() {
            return Err(Error::WeightFormat(format!("expected a bow weight file, found {:?}", w.model)));
        }
        let words: Vec<String> = serde_json::from_value(w.metadata["vocab"].clone())
            .map_err(|e| Error::WeightFormat(format!("vocab: {e}")))?;
        let config: BowConfig = serde_json::from_value(w.hyperparameters["config"].clone())
            .map_err(|e| Error::WeightFormat(format!("config: {e}")))?;
        let doc_count = w.hyperparameters["doc_count"].as_u64().unwrap_or(1) as usize;
        let idf = w.vector("idf")?;
        let components = w.matrix("lsa.components")?;
        let weights = w.vector("logreg.w")?;
        if idf.len() != words.len() || components.ncols() != words.len() || weights.len() != components.nrows() {
            return Err(Error::WeightFormat("bow tensor dimensions disagree".into()));
        }
        Ok(BowScorer::new(
            TfIdfModel {
                vocab: VocabularyIndex::new(words)?,
                idf,
                doc_count,
            },
            LsaProjection {
                components,
                singular_values: w.vector("lsa.singular_values")?,
                iterations: 0,
                converged: true,
            },
            LogisticClassifier {
                weights,
                bias: w.scalar("logreg.b")?,
                l2: config.logreg.l2,
            },
            config,
        ))
    }
}

impl Scorer for BowScorer {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn score_fragment(&self, text: &str) -> FragmentScore {
        let words = tokenize_words(text);
        let z = self.lsa.project_sparse(&self.tfidf.transform_sparse(&words));
        FragmentScore::single(words.len(), self.classifier.predict(z.view()))
    }
}

/// Fit the full pipeline on labeled texts. The returned scorer holds
/// float32-rounded parameters, so it scores identically after a save/load.
pub fn train_bow<S: AsRef<str>>(texts: &[S], labels: &[u8], config: &BowConfig) -> Result<BowScorer> {
    if texts.len() != labels.len() {
        return Err(Error::Dimension(format!("{} texts vs {} labels", texts.len(), labels.len())));
    }
    let docs: Vec<Vec<String>> = texts.iter().map(|t| tokenize_words(t.as_ref())).collect();
    let tfidf = fit_tfidf(&docs)?;
    let columns = SparseColumns {
        rows: tfidf.dim(),
        columns: docs.iter().map(|d| tfidf.transform_sparse(d)).collect(),
    };
    let k_max = columns.rows.min(columns.columns.len());
    let k = config.k.min(k_max);
    if k < config.k {
        tracing::warn!(requested = config.k, used = k, "LSA dimension clamped to matrix rank bound");
    }
    let lsa = fit_lsa(
        &columns,
        k,
        &LsaOptions {
            tolerance: config.lsa_tolerance,
            max_iterations: config.lsa_max_iterations,
            ..LsaOptions::default()
        },
    )?;
    let rows: Vec<Array1<f64>> = columns.columns.iter().map(|c| lsa.project_sparse(c)).collect();
    let features: Array2<f64> = lsa::stack_rows(rows, k);
    let classifier = train_logreg(&features, labels, &config.logreg)?;
    let mut cfg = config.clone();
    cfg.k = k;
    let trained = BowScorer::new(tfidf, lsa, classifier, cfg);
    BowScorer::from_weights(&trained.to_weights())
}
