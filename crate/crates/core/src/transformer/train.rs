use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{frame, EncoderConfig, EncoderStack, TransformerScorer};
use crate::autodiff::{Gradients, ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::optim::{linear_decay, AdamW, AdamWConfig};
use crate::textprep::{segment, subword_encode, SubwordVocabulary, TokenId, DEFAULT_OVERLAP, DEFAULT_WINDOW};
use crate::weights::WeightFile;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FineTuneConfig {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        FineTuneConfig {
            lr: 2.5e-5,
            batch: 32,
            epochs: 2,
            weight_decay: 0.01,
            seed: 0,
        }
    }
}

impl FineTuneConfig {
    fn validate(&self) -> Result<()> {
        if self.lr < 0.0 || !self.lr.is_finite() || self.batch == 0 || self.epochs == 0 {
            return Err(Error::Config(format!(
                "fine-tuning needs lr >= 0, batch >= 1, epochs >= 1 (got {}, {}, {})",
                self.lr, self.batch, self.epochs
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FineTuneReport {
    /// Mean batch loss at every optimizer step.
    pub step_losses: Vec<f64>,
    pub steps: usize,
}

/// Parameter ids laid out in [`EncoderStack::named_params`] order.
struct StackIds {
    tok: ParamId,
    pos: ParamId,
    emb_w: ParamId,
    emb_b: ParamId,
    layers: Vec<[ParamId; 16]>,
    head_w: ParamId,
    head_b: ParamId,
}

fn to_store(stack: &EncoderStack) -> (ParamStore, StackIds) {
    let mut store = ParamStore::new();
    let ids: Vec<ParamId> = stack
        .named_params()
        .into_iter()
        .map(|(name, m)| store.add(name, m))
        .collect();
    let n = ids.len();
    let layers = (0..stack.layers.len())
        .map(|l| std::array::from_fn(|k| ids[4 + 16 * l + k]))
        .collect();
    let s = StackIds {
        tok: ids[0],
        pos: ids[1],
        emb_w: ids[2],
        emb_b: ids[3],
        layers,
        head_w: ids[n - 2],
        head_b: ids[n - 1],
    };
    (store, s)
}

fn from_store(stack: &mut EncoderStack, store: &ParamStore) {
    stack.for_each_param_mut(|name, slot| {
        let id = store.find(name).expect("same parameter names");
        slot.assign_matrix(store.get(id));
    });
}

fn tape_linear(t: &mut Tape, x: Var, w: ParamId, b: ParamId) -> Var {
    let w = t.param(w);
    let b = t.param(b);
    let y = t.matmul_t(x, w);
    t.add_row(y, b)
}

/// Logits (1×2) of a framed sequence on the tape.
fn tape_logits(t: &mut Tape, ids: &StackIds, cfg: &EncoderConfig, tokens: &[usize]) -> Var {
    let tok = t.param(ids.tok);
    let pos = t.param(ids.pos);
    let e = t.gather_rows(tok, tokens);
    let positions: Vec<usize> = (0..tokens.len()).collect();
    let p = t.gather_rows(pos, &positions);
    let e = t.add(e, p);
    let mut x = tape_linear(t, e, ids.emb_w, ids.emb_b);
    let d = cfg.head_dim();
    let scale = 1.0 / (d as f64).sqrt();
    for l in &ids.layers {
        let q = tape_linear(t, x, l[0], l[1]);
        let k = tape_linear(t, x, l[2], l[3]);
        let v = tape_linear(t, x, l[4], l[5]);
        let mut heads = Vec::with_capacity(cfg.heads);
        for h in 0..cfg.heads {
            let qh = t.slice_cols(q, h * d, d);
            let kh = t.slice_cols(k, h * d, d);
            let vh = t.slice_cols(v, h * d, d);
            let logits = t.matmul_t(qh, kh);
            let logits = t.scale(logits, scale);
            let a = t.softmax_rows(logits);
            heads.push(t.matmul(a, vh));
        }
        let cat = t.concat_cols(&heads);
        let attn = tape_linear(t, cat, l[6], l[7]);
        let res = t.add(x, attn);
        let g1 = t.param(l[8]);
        let b1 = t.param(l[9]);
        let x1 = t.layer_norm(res, g1, b1);
        let f = tape_linear(t, x1, l[10], l[11]);
        let f = t.gelu(f);
        let f = tape_linear(t, f, l[12], l[13]);
        let res = t.add(x1, f);
        let g2 = t.param(l[14]);
        let b2 = t.param(l[15]);
        x = t.layer_norm(res, g2, b2);
    }
    let first = t.slice_rows(x, 0, 1);
    tape_linear(t, first, ids.head_w, ids.head_b)
}

fn framed(ids: &[TokenId], vocab: &SubwordVocabulary) -> Vec<usize> {
    frame(ids, vocab).into_iter().map(|t| t as usize).collect()
}

fn batch_grad(
    store: &ParamStore,
    ids: &StackIds,
    cfg: &EncoderConfig,
    vocab: &SubwordVocabulary,
    batch: &[&(Vec<TokenId>, u8)],
) -> Result<(f64, Gradients)> {
    let mut t = Tape::new(store);
    let mut total: Option<Var> = None;
    for (seg, label) in batch {
        if seg.len() + 2 > cfg.max_positions {
            return Err(Error::InvalidArgument(format!("training segment of {} tokens is too long", seg.len())));
        }
        let logits = tape_logits(&mut t, ids, cfg, &framed(seg, vocab));
        let l = t.cross_entropy(logits, *label as usize)?;
        total = Some(match total {
            Some(acc) => t.add(acc, l),
            None => l,
        });
    }
    let total = total.ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    let mean = t.scale(total, 1.0 / batch.len() as f64);
    Ok((t.scalar(mean), t.backward(mean)))
}

/// Mean cross-entropy of labeled segments under the plain forward pass.
pub fn dataset_loss(stack: &EncoderStack, vocab: &SubwordVocabulary, examples: &[(Vec<TokenId>, u8)]) -> Result<f64> {
    let mut sum = 0.0;
    for (seg, label) in examples {
        let logits = stack.forward_tokens(&frame(seg, vocab), None)?;
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        sum += lse - logits[*label as usize];
    }
    Ok(sum / examples.len().max(1) as f64)
}

/// Analytic gradient of [`dataset_loss`] with respect to the classifier head.
pub fn head_gradients(
    stack: &EncoderStack,
    vocab: &SubwordVocabulary,
    examples: &[(Vec<TokenId>, u8)],
) -> Result<(Array2<f64>, Array1<f64>)> {
    let (store, ids) = to_store(stack);
    let batch: Vec<_> = examples.iter().collect();
    let (_, g) = batch_grad(&store, &ids, &stack.config, vocab, &batch)?;
    let gw = g.get(ids.head_w).cloned().unwrap_or_else(|| Array2::zeros(stack.head_w.raw_dim()));
    let gb = g
        .get(ids.head_b)
        .map(|m| m.row(0).to_owned())
        .unwrap_or_else(|| Array1::zeros(2));
    Ok((gw, gb))
}

fn decays(name: &str) -> bool {
    name.ends_with(".W") || name.ends_with("_emb")
}

/// Cross-entropy fine-tuning with Adam, decoupled weight decay on weight
/// matrices and embeddings, and a learning rate decaying linearly to zero.
pub fn fine_tune(
    corpus: &[(Vec<TokenId>, u8)],
    cfg: &FineTuneConfig,
    stack: &EncoderStack,
    vocab: &SubwordVocabulary,
) -> Result<(EncoderStack, FineTuneReport)> {
    cfg.validate()?;
    stack.validate()?;
    if !corpus.iter().any(|(_, y)| *y == 0) || !corpus.iter().any(|(_, y)| *y == 1) {
        return Err(Error::InvalidArgument("fine-tuning needs both classes present".into()));
    }
    let (mut store, ids) = to_store(stack);
    let mut opt = AdamW::new(
        &store,
        AdamWConfig {
            weight_decay: cfg.weight_decay,
            ..Default::default()
        },
        decays,
    );
    let steps_per_epoch = corpus.len().div_ceil(cfg.batch);
    let total = steps_per_epoch * cfg.epochs;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut report = FineTuneReport {
        steps: total,
        ..Default::default()
    };
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch) {
            let batch: Vec<_> = chunk.iter().map(|&i| &corpus[i]).collect();
            let (loss, grads) = batch_grad(&store, &ids, &stack.config, vocab, &batch)?;
            opt.step(&mut store, &grads, linear_decay(cfg.lr, step, total));
            report.step_losses.push(loss);
            step += 1;
        }
        let recent = &report.step_losses[report.step_losses.len() - steps_per_epoch..];
        tracing::info!(epoch, loss = recent.iter().sum::<f64>() / recent.len() as f64, "fine-tune epoch");
    }
    let mut out = stack.clone();
    from_store(&mut out, &store);
    Ok((out, report))
}

/// Segment every text; each segment inherits its text's label.
pub fn label_segments<S: AsRef<str>>(
    texts: &[S],
    labels: &[u8],
    vocab: &SubwordVocabulary,
    window: usize,
    overlap: usize,
) -> Result<Vec<(Vec<TokenId>, u8)>> {
    let mut out = Vec::new();
    for (t, &y) in texts.iter().zip(labels) {
        for seg in segment(&subword_encode(t.as_ref(), vocab), window, overlap)? {
            out.push((seg.ids, y));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransformerTrainConfig {
    /// `vocab_size` is the target size for the sub-word vocabulary builder.
    pub encoder: EncoderConfig,
    pub window: usize,
    pub overlap: usize,
    pub fine_tune: FineTuneConfig,
    pub init_seed: u64,
}

impl Default for TransformerTrainConfig {
    fn default() -> Self {
        TransformerTrainConfig {
            encoder: EncoderConfig::toy(2000),
            window: DEFAULT_WINDOW,
            overlap: DEFAULT_OVERLAP,
            fine_tune: FineTuneConfig {
                lr: 1e-3,
                ..Default::default()
            },
            init_seed: 0,
        }
    }
}

/// Build a vocabulary, initialize an encoder and fine-tune it on `texts`.
pub fn train_transformer<S: AsRef<str>>(texts: &[S], labels: &[u8], cfg: &TransformerTrainConfig) -> Result<TransformerScorer> {
    if texts.len() != labels.len() {
        return Err(Error::Dimension(format!("{} texts vs {} labels", texts.len(), labels.len())));
    }
    let vocab = SubwordVocabulary::build(texts.iter().map(|t| t.as_ref()), cfg.encoder.vocab_size)?;
    let mut enc = cfg.encoder.clone();
    enc.vocab_size = vocab.len();
    let stack = EncoderStack::init(enc, cfg.init_seed)?;
    let corpus = label_segments(texts, labels, &vocab, cfg.window, cfg.overlap)?;
    let (stack, _) = fine_tune(&corpus, &cfg.fine_tune, &stack, &vocab)?;
    let trained = TransformerScorer::new(
        stack,
        vocab,
        cfg.window,
        cfg.overlap,
        serde_json::to_value(cfg).expect("serializable"),
    )?;
    TransformerScorer::from_weights(&WeightFile::from_bytes(&trained.to_weights().to_bytes())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorer::Scorer;
    use rand::Rng;

    fn setup(seed: u64) -> (EncoderStack, SubwordVocabulary) {
        let vocab = SubwordVocabulary::new(["i", "want", "to", "die", "like", "cats", "dogs", "and"].map(String::from)).unwrap();
        let mut cfg = EncoderConfig::toy(vocab.len());
        cfg.hidden = 8;
        cfg.ffn = 12;
        cfg.embed = 4;
        cfg.max_positions = 16;
        (EncoderStack::init(cfg, seed).unwrap(), vocab)
    }

    fn random_examples(rng: &mut ChaCha8Rng, n: usize) -> Vec<(Vec<TokenId>, u8)> {
        (0..n)
            .map(|i| {
                let len = rng.random_range(1..8);
                ((0..len).map(|_| rng.random_range(4..12)).collect(), (i % 2) as u8)
            })
            .collect()
    }

    #[test]
    fn tape_matches_plain_forward() {
        let (mut stack, vocab) = setup(1);
        stack.for_each_param_mut(|_, p| {
            let m = p.as_matrix() * 30.0;
            p.assign_matrix(&m);
        });
        let (store, ids) = to_store(&stack);
        let seg = vec![4, 9, 5, 11];
        let mut t = Tape::new(&store);
        let logits = tape_logits(&mut t, &ids, &stack.config, &framed(&seg, &vocab));
        let plain = stack.forward_tokens(&frame(&seg, &vocab), None).unwrap();
        for (a, b) in t.value(logits).iter().zip(plain.iter()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn full_gradient_matches_finite_differences() {
        let (mut stack, vocab) = setup(2);
        stack.for_each_param_mut(|_, p| {
            let m = p.as_matrix() * 20.0;
            p.assign_matrix(&m);
        });
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let examples = random_examples(&mut rng, 3);
        let (mut store, ids) = to_store(&stack);
        let batch: Vec<_> = examples.iter().collect();
        let (_, grads) = batch_grad(&store, &ids, &stack.config, &vocab, &batch).unwrap();
        let loss_at = |s: &ParamStore| batch_grad(s, &ids, &stack.config, &vocab, &batch).unwrap().0;
        let h = 1e-6;
        for id in store.ids().collect::<Vec<_>>() {
            let Some(g) = grads.get(id).cloned() else { continue };
            // A handful of entries per tensor keeps the test quick.
            for idx in (0..g.len()).step_by(g.len().div_ceil(5)) {
                let (r, c) = (idx / g.ncols(), idx % g.ncols());
                let orig = store.get(id)[[r, c]];
                store.get_mut(id)[[r, c]] = orig + h;
                let up = loss_at(&store);
                store.get_mut(id)[[r, c]] = orig - h;
                let down = loss_at(&store);
                store.get_mut(id)[[r, c]] = orig;
                let numeric = (up - down) / (2.0 * h);
                let a = g[[r, c]];
                let scale = a.abs().max(numeric.abs());
                assert!(
                    (a - numeric).abs() <= 1e-4 * scale + 1e-8,
                    "{}[{r},{c}]: {a} vs {numeric}",
                    store.name(id)
                );
            }
        }
    }

    #[test]
    fn head_gradient_against_plain_loss() {
        let (stack, vocab) = setup(3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let examples = random_examples(&mut rng, 4);
        let (gw, gb) = head_gradients(&stack, &vocab, &examples).unwrap();
        let h = 1e-6;
        for r in 0..2 {
            for c in 0..stack.config.hidden {
                let mut up = stack.clone();
                up.head_w[[r, c]] += h;
                let mut down = stack.clone();
                down.head_w[[r, c]] -= h;
                let numeric = (dataset_loss(&up, &vocab, &examples).unwrap() - dataset_loss(&down, &vocab, &examples).unwrap()) / (2.0 * h);
                assert!((numeric - gw[[r, c]]).abs() <= 1e-3 * numeric.abs().max(gw[[r, c]].abs()).max(1e-6));
            }
            let mut up = stack.clone();
            up.head_b[r] += h;
            let mut down = stack.clone();
            down.head_b[r] -= h;
            let numeric = (dataset_loss(&up, &vocab, &examples).unwrap() - dataset_loss(&down, &vocab, &examples).unwrap()) / (2.0 * h);
            assert!((numeric - gb[r]).abs() < 1e-3 * numeric.abs().max(1e-6));
        }
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let (stack, vocab) = setup(4);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let examples = random_examples(&mut rng, 10);
        let cfg = FineTuneConfig { lr: 0.0, batch: 4, epochs: 1, ..Default::default() };
        let (out, _) = fine_tune(&examples, &cfg, &stack, &vocab).unwrap();
        assert_eq!(out, stack);
    }

    #[test]
    fn single_class_rejected() {
        let (stack, vocab) = setup(5);
        let examples = vec![(vec![4], 1u8), (vec![5], 1u8)];
        assert!(fine_tune(&examples, &FineTuneConfig::default(), &stack, &vocab).is_err());
    }

    #[test]
    fn learns_a_separable_task_deterministically() {
        let texts: Vec<String> = (0..40)
            .map(|i| if i % 4 == 0 { "i want to die".to_string() } else { "i like cats and dogs".to_string() })
            .collect();
        let labels: Vec<u8> = (0..40).map(|i| (i % 4 == 0) as u8).collect();
        let (stack, vocab) = setup(6);
        let corpus = label_segments(&texts, &labels, &vocab, 6, 1).unwrap();
        let cfg = FineTuneConfig { lr: 5e-3, batch: 8, epochs: 1, seed: 1, ..Default::default() };
        let before = dataset_loss(&stack, &vocab, &corpus).unwrap();
        let (a, _) = fine_tune(&corpus, &cfg, &stack, &vocab).unwrap();
        let (b, _) = fine_tune(&corpus, &cfg, &stack, &vocab).unwrap();
        assert_eq!(a, b);
        assert!(dataset_loss(&a, &vocab, &corpus).unwrap() < before);
        let scorer = TransformerScorer::new(a, vocab, 6, 1, serde_json::Value::Null).unwrap();
        let _ = scorer.score("i want to die");
    }
}
