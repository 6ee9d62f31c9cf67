use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogRegConfig {
    pub l2: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        LogRegConfig {
            l2: 1e-4,
            lr: 0.1,
            epochs: 100,
            batch: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticClassifier {
    pub weights: Array1<f64>,
    pub bias: f64,
    pub l2: f64,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl LogisticClassifier {
    pub fn zeros(k: usize, l2: f64) -> Self {
        LogisticClassifier {
            weights: Array1::zeros(k),
            bias: 0.0,
            l2,
        }
    }

    pub fn decision(&self, x: ArrayView1<f64>) -> f64 {
        self.weights.dot(&x) + self.bias
    }

    pub fn predict(&self, x: ArrayView1<f64>) -> f64 {
        sigmoid(self.decision(x))
    }
}

/// Mean negative log-likelihood plus `l2/2 · ‖w‖²`, with its gradient
/// `(∂/∂w, ∂/∂b)`. The bias is not regularized.
pub fn loss_and_grad(
    features: ArrayView2<f64>,
    labels: &[u8],
    weights: ArrayView1<f64>,
    bias: f64,
    l2: f64,
) -> (f64, Array1<f64>, f64) {
    let n = features.nrows() as f64;
    let z = features.dot(&weights) + bias;
    let mut loss = 0.0;
    let mut residual = Array1::zeros(z.len());
    for (i, (&zi, &y)) in z.iter().zip(labels).enumerate() {
        let y = y as f64;
        // -[y ln σ(z) + (1-y) ln(1-σ(z))] = softplus(z) - y z
        loss += softplus(zi) - y * zi;
        residual[i] = sigmoid(zi) - y;
    }
    loss = loss / n + 0.5 * l2 * weights.dot(&weights);
    let gw = features.t().dot(&residual) / n + &(weights.to_owned() * l2);
    let gb = residual.sum() / n;
    (loss, gw, gb)
}

/// Mini-batch gradient descent from zero initialization.
pub fn train_logreg(features: &Array2<f64>, labels: &[u8], cfg: &LogRegConfig) -> Result<LogisticClassifier> {
    if features.nrows() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} feature rows vs {} labels",
            features.nrows(),
            labels.len()
        )));
    }
    if labels.len() < 2 || !labels.contains(&0) || !labels.contains(&1) {
        return Err(Error::InvalidArgument("logistic regression needs both classes present".into()));
    }
    if cfg.batch == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let mut model = LogisticClassifier::zeros(features.ncols(), cfg.l2);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..labels.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch) {
            let x = features.select(Axis(0), chunk);
            let y: Vec<u8> = chunk.iter().map(|&i| labels[i]).collect();
            let (_, gw, gb) = loss_and_grad(x.view(), &y, model.weights.view(), model.bias, cfg.l2);
            model.weights.scaled_add(-cfg.lr, &gw);
            model.bias -= cfg.lr * gb;
        }
    }
    Ok(model)
}
