use std::collections::BTreeMap;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{AttentionParams, BiLstmLayer, BiLstmStack, EmbeddingTable, LstmCellParams, RnnModel, RnnScorer};
use crate::autodiff::{Gradients, ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::optim::{AdamW, AdamWConfig};
use crate::textprep::tokenize_words;
use crate::weights::WeightFile;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RnnTrainConfig {
    pub embed: usize,
    pub hidden: usize,
    pub attention: usize,
    pub layers: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    /// Words seen fewer times are left out of the vocabulary.
    pub min_count: usize,
    pub max_vocab: usize,
    pub seed: u64,
}

impl Default for RnnTrainConfig {
    fn default() -> Self {
        RnnTrainConfig {
            embed: 32,
            hidden: 16,
            attention: 16,
            layers: 2,
            epochs: 3,
            batch: 16,
            lr: 0.01,
            min_count: 1,
            max_vocab: 30_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RnnParamIds {
    pub emb: ParamId,
    /// Per layer: forward then backward (W, U, b).
    pub cells: Vec<[[ParamId; 3]; 2]>,
    pub attn_w: ParamId,
    pub attn_v: ParamId,
    pub head_w: ParamId,
    pub head_b: ParamId,
}

impl RnnModel {
    /// Trainable copy of the model; vectors become 1×n rows.
    pub fn to_params(&self) -> (ParamStore, RnnParamIds) {
        let mut s = ParamStore::new();
        let row = |v: &ndarray::Array1<f64>| v.clone().insert_axis(ndarray::Axis(0));
        let emb = s.add("emb", self.embedding.matrix.clone());
        let mut cells = Vec::new();
        for (l, layer) in self.stack.layers.iter().enumerate() {
            let mut pair = [[ParamId(0); 3]; 2];
            for (d, (dir, cell)) in [("fwd", &layer.fwd), ("bwd", &layer.bwd)].into_iter().enumerate() {
                pair[d] = [
                    s.add(format!("l{}.{dir}.W", l + 1), cell.w.clone()),
                    s.add(format!("l{}.{dir}.U", l + 1), cell.u.clone()),
                    s.add(format!("l{}.{dir}.b", l + 1), row(&cell.b)),
                ];
            }
            cells.push(pair);
        }
        let ids = RnnParamIds {
            emb,
            cells,
            attn_w: s.add("attn.W", self.attention.w.clone()),
            attn_v: s.add("attn.v", row(&self.attention.v)),
            head_w: s.add("head.W", self.head_w.clone()),
            head_b: s.add("head.b", row(&self.head_b)),
        };
        (s, ids)
    }

    /// Copy trained values back.
    pub fn load_params(&mut self, s: &ParamStore, ids: &RnnParamIds) {
        let row = |id: ParamId| s.get(id).row(0).to_owned();
        self.embedding.matrix = s.get(ids.emb).clone();
        for (layer, pair) in self.stack.layers.iter_mut().zip(&ids.cells) {
            for (cell, [w, u, b]) in [&mut layer.fwd, &mut layer.bwd].into_iter().zip(pair) {
                cell.w = s.get(*w).clone();
                cell.u = s.get(*u).clone();
                cell.b = row(*b);
            }
        }
        self.attention.w = s.get(ids.attn_w).clone();
        self.attention.v = row(ids.attn_v);
        self.head_w = s.get(ids.head_w).clone();
        self.head_b = row(ids.head_b);
    }

    /// Randomly initialized model over `words`.
    pub fn init(words: Vec<String>, cfg: &RnnTrainConfig, pretrained: Option<&EmbeddingTable>) -> Result<Self> {
        if cfg.layers == 0 || cfg.hidden == 0 || cfg.embed == 0 || cfg.attention == 0 {
            return Err(Error::InvalidArgument("rnn sizes must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let normal = Normal::new(0.0, 0.1).expect("valid std");
        let mut emb = Array2::from_shape_fn((words.len(), cfg.embed), |_| normal.sample(&mut rng));
        if let Some(pre) = pretrained {
            if pre.dim() != cfg.embed {
                return Err(Error::Dimension(format!(
                    "pretrained vectors have {} dims, config asks for {}",
                    pre.dim(),
                    cfg.embed
                )));
            }
            for (i, w) in words.iter().enumerate() {
                if let Some(r) = pre.row(w) {
                    emb.row_mut(i).assign(&pre.matrix.row(r));
                }
            }
        }
        let h = cfg.hidden;
        let bound = 1.0 / (h as f64).sqrt();
        let mut uniform = |rows: usize, cols: usize, b: f64| Array2::from_shape_fn((rows, cols), |_| rng.random_range(-b..b));
        let mut cell = |input: usize| {
            let mut b = ndarray::Array1::zeros(4 * h);
            b.slice_mut(ndarray::s![h..2 * h]).fill(1.0);
            LstmCellParams {
                w: uniform(4 * h, input, bound),
                u: uniform(4 * h, h, bound),
                b,
            }
        };
        let layers = (0..cfg.layers)
            .map(|l| {
                let input = if l == 0 { cfg.embed } else { 2 * h };
                BiLstmLayer { fwd: cell(input), bwd: cell(input) }
            })
            .collect();
        let attn_bound = (6.0 / (cfg.attention + 2 * h) as f64).sqrt();
        Ok(RnnModel {
            embedding: EmbeddingTable::new(words, emb)?,
            stack: BiLstmStack { layers },
            attention: AttentionParams {
                w: uniform(cfg.attention, 2 * h, attn_bound),
                v: uniform(1, cfg.attention, attn_bound).row(0).to_owned(),
            },
            head_w: uniform(2, 2 * h, (6.0 / (2 + 2 * h) as f64).sqrt()),
            head_b: ndarray::Array1::zeros(2),
        })
    }
}

fn tape_direction(t: &mut Tape, x: Var, ids: &[ParamId; 3], hidden: usize, steps: usize, reverse: bool) -> Vec<Var> {
    let w = t.param(ids[0]);
    let u = t.param(ids[1]);
    let b = t.param(ids[2]);
    let xw = t.matmul_t(x, w);
    let xw = t.add_row(xw, b);
    let mut h: Option<Var> = None;
    let mut c: Option<Var> = None;
    let mut out = vec![xw; steps];
    for step in 0..steps {
        let pos = if reverse { steps - 1 - step } else { step };
        let mut z = t.slice_rows(xw, pos, 1);
        if let Some(hp) = h {
            let r = t.matmul_t(hp, u);
            z = t.add(z, r);
        }
        let zi = t.slice_cols(z, 0, hidden);
        let zf = t.slice_cols(z, hidden, hidden);
        let zg = t.slice_cols(z, 2 * hidden, hidden);
        let zo = t.slice_cols(z, 3 * hidden, hidden);
        let i = t.sigmoid(zi);
        let g = t.tanh(zg);
        let o = t.sigmoid(zo);
        let mut cn = t.mul(i, g);
        if let Some(cp) = c {
            let f = t.sigmoid(zf);
            let keep = t.mul(f, cp);
            cn = t.add(keep, cn);
        }
        let tc = t.tanh(cn);
        let hn = t.mul(o, tc);
        out[pos] = hn;
        h = Some(hn);
        c = Some(cn);
    }
    out
}

/// Logits (1×2) for one tokenized text; `rows[i] = None` marks an unknown word.
pub(crate) fn tape_logits(t: &mut Tape, ids: &RnnParamIds, hidden: usize, rows: &[Option<usize>]) -> Var {
    let emb = t.param(ids.emb);
    let gathered = t.gather_rows(emb, &rows.iter().map(|r| r.unwrap_or(0)).collect::<Vec<_>>());
    let mut x = if rows.iter().any(Option::is_none) {
        let width = t.value(gathered).ncols();
        let mask = Array2::from_shape_fn((rows.len(), width), |(i, _)| rows[i].map_or(0.0, |_| 1.0));
        let m = t.constant(mask);
        t.mul(gathered, m)
    } else {
        gathered
    };
    let steps = rows.len();
    for pair in &ids.cells {
        let f = tape_direction(t, x, &pair[0], hidden, steps, false);
        let b = tape_direction(t, x, &pair[1], hidden, steps, true);
        let per_step: Vec<Var> = (0..steps).map(|p| t.concat_cols(&[f[p], b[p]])).collect();
        x = t.concat_rows(&per_step);
    }
    let aw = t.param(ids.attn_w);
    let av = t.param(ids.attn_v);
    let proj = t.matmul_t(x, aw);
    let proj = t.tanh(proj);
    let e = t.matmul_t(proj, av);
    let e = t.transpose(e);
    let alpha = t.softmax_rows(e);
    let ctx = t.matmul(alpha, x);
    let hw = t.param(ids.head_w);
    let hb = t.param(ids.head_b);
    let logits = t.matmul_t(ctx, hw);
    t.add_row(logits, hb)
}

/// Mean cross-entropy over a batch and its gradient.
pub(crate) fn batch_loss_and_grad(
    store: &ParamStore,
    ids: &RnnParamIds,
    hidden: usize,
    batch: &[(Vec<Option<usize>>, u8)],
) -> (f64, Gradients) {
    let mut total = Gradients::zeros_like(store);
    let mut loss = 0.0;
    for (rows, label) in batch {
        let mut t = Tape::new(store);
        let logits = tape_logits(&mut t, ids, hidden, rows);
        let l = t.cross_entropy(logits, *label as usize).expect("two logits");
        loss += t.scalar(l);
        total.accumulate(&t.backward(l));
    }
    let n = batch.len().max(1) as f64;
    total.scale(1.0 / n);
    (loss / n, total)
}

fn build_vocabulary(docs: &[Vec<String>], cfg: &RnnTrainConfig) -> Vec<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for d in docs {
        for w in d {
            *counts.entry(w).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().filter(|&(_, c)| c >= cfg.min_count).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    ranked.truncate(cfg.max_vocab);
    let mut words: Vec<String> = ranked.into_iter().map(|(w, _)| w.to_string()).collect();
    words.sort();
    words
}

/// Train the recurrent scorer from scratch with Adam.
pub fn train_rnn<S: AsRef<str>>(
    texts: &[S],
    labels: &[u8],
    cfg: &RnnTrainConfig,
    pretrained: Option<&EmbeddingTable>,
) -> Result<RnnScorer> {
    if texts.len() != labels.len() {
        return Err(Error::Dimension(format!("{} texts vs {} labels", texts.len(), labels.len())));
    }
    if !labels.contains(&0) || !labels.contains(&1) {
        return Err(Error::InvalidArgument("rnn training needs both classes present".into()));
    }
    if cfg.batch == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let docs: Vec<Vec<String>> = texts.iter().map(|t| tokenize_words(t.as_ref())).collect();
    let words = build_vocabulary(&docs, cfg);
    let mut model = RnnModel::init(words, cfg, pretrained)?;
    let examples: Vec<(Vec<Option<usize>>, u8)> = docs
        .iter()
        .zip(labels)
        .filter(|(d, _)| !d.is_empty())
        .map(|(d, &y)| (d.iter().map(|w| model.embedding.row(w)).collect(), y))
        .collect();

    let (mut store, ids) = model.to_params();
    let mut opt = AdamW::new(&store, AdamWConfig { weight_decay: 0.0, ..Default::default() }, |_| false);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch) {
            let batch: Vec<_> = chunk.iter().map(|&i| examples[i].clone()).collect();
            let (loss, grads) = batch_loss_and_grad(&store, &ids, cfg.hidden, &batch);
            epoch_loss += loss * chunk.len() as f64;
            opt.step(&mut store, &grads, cfg.lr);
        }
        tracing::info!(epoch, loss = epoch_loss / examples.len().max(1) as f64, "rnn epoch");
    }
    model.load_params(&store, &ids);
    let trained = RnnScorer::new(model, serde_json::to_value(cfg).expect("serializable"))?;
    RnnScorer::from_weights(&WeightFile::from_bytes(&trained.to_weights().to_bytes())?)
}
