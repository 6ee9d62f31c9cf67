//! Small post-norm transformer encoder with a two-logit head on the first
//! position, scored over overlapping sub-word windows.

pub mod onnx;
mod train;

use ndarray::{s, Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::json;

pub use onnx::{export_onnx, score_with_external, ExternalModelHandle, ExternalScorer};
pub use train::{
    dataset_loss, fine_tune, head_gradients, label_segments, train_transformer, FineTuneConfig, FineTuneReport,
    TransformerTrainConfig,
};

use crate::autodiff::{gelu, layer_norm, softmax_rows};
use crate::error::{Error, Result};
use crate::scorer::{model_id_for, FragmentScore, Scorer, ScorerKind, SegmentScore};
use crate::textprep::{segment, subword_encode, SubwordVocabulary, TokenId, DEFAULT_OVERLAP, DEFAULT_WINDOW};
use crate::weights::WeightFile;

/// Additive logit for masked key positions.
pub const MASK_LOGIT: f64 = -1e9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub hidden: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn: usize,
    pub embed: usize,
    pub max_positions: usize,
}

impl EncoderConfig {
    /// Small discriminator geometry: hidden 256, 4 heads, 12 layers.
    pub fn small(vocab_size: usize) -> Self {
        EncoderConfig {
            vocab_size,
            hidden: 256,
            heads: 4,
            layers: 12,
            ffn: 1024,
            embed: 128,
            max_positions: 512,
        }
    }

    pub fn toy(vocab_size: usize) -> Self {
        EncoderConfig {
            vocab_size,
            hidden: 32,
            heads: 2,
            layers: 2,
            ffn: 64,
            embed: 32,
            max_positions: 512,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.heads == 0 || self.hidden % self.heads != 0 {
            return Err(Error::Config(format!(
                "hidden size {} must be a positive multiple of the head count {}",
                self.hidden, self.heads
            )));
        }
        if self.vocab_size == 0 || self.embed == 0 || self.ffn == 0 || self.max_positions < 3 {
            return Err(Error::Config("vocab, embed, ffn must be positive and max_positions at least 3".into()));
        }
        Ok(())
    }
}

/// One encoder block. Linear maps are stored out×in and applied as `x Wᵀ + b`;
/// rows `[h·d, (h+1)·d)` of the query, key and value maps belong to head `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub wq: Array2<f64>,
    pub bq: Array1<f64>,
    pub wk: Array2<f64>,
    pub bk: Array1<f64>,
    pub wv: Array2<f64>,
    pub bv: Array1<f64>,
    pub wo: Array2<f64>,
    pub bo: Array1<f64>,
    pub ln1_gamma: Array1<f64>,
    pub ln1_beta: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub ln2_gamma: Array1<f64>,
    pub ln2_beta: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderStack {
    pub config: EncoderConfig,
    pub token_emb: Array2<f64>,
    pub pos_emb: Array2<f64>,
    /// hidden×embed
    pub emb_w: Array2<f64>,
    pub emb_b: Array1<f64>,
    pub layers: Vec<EncoderLayer>,
    /// 2×hidden
    pub head_w: Array2<f64>,
    pub head_b: Array1<f64>,
}

fn linear(x: &Array2<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    x.dot(&w.t()) + b
}

fn row(v: &Array1<f64>) -> Array2<f64> {
    v.clone().insert_axis(Axis(0))
}

/// `softmax(Q Kᵀ / √d) V` with a row-max shift.
pub fn attention(q: &Array2<f64>, k: &Array2<f64>, v: &Array2<f64>) -> Result<Array2<f64>> {
    attention_masked(q, k, v, None)
}

/// Attention where `key_mask[j] = false` adds a large negative logit to column `j`.
pub fn attention_masked(q: &Array2<f64>, k: &Array2<f64>, v: &Array2<f64>, key_mask: Option<&[bool]>) -> Result<Array2<f64>> {
    if v.nrows() != k.nrows() {
        return Err(Error::Dimension(format!("{} keys vs {} values", k.nrows(), v.nrows())));
    }
    Ok(attention_weights(q, k, key_mask)?.dot(v))
}

/// The row-stochastic attention matrix.
pub fn attention_weights(q: &Array2<f64>, k: &Array2<f64>, key_mask: Option<&[bool]>) -> Result<Array2<f64>> {
    let d = q.ncols();
    if d == 0 {
        return Err(Error::InvalidArgument("attention needs key dimension d > 0".into()));
    }
    if k.ncols() != d {
        return Err(Error::Dimension(format!("query width {d} vs key width {}", k.ncols())));
    }
    let mut logits = q.dot(&k.t()) / (d as f64).sqrt();
    if let Some(mask) = key_mask {
        if mask.len() != k.nrows() {
            return Err(Error::Dimension("mask length differs from key count".into()));
        }
        for (j, &keep) in mask.iter().enumerate() {
            if !keep {
                logits.column_mut(j).mapv_inplace(|x| x + MASK_LOGIT);
            }
        }
    }
    Ok(softmax_rows(&logits))
}

/// Multi-head self-attention including the output projection.
pub fn multi_head(x: &Array2<f64>, layer: &EncoderLayer, heads: usize, key_mask: Option<&[bool]>) -> Result<Array2<f64>> {
    let hidden = layer.wq.nrows();
    if heads == 0 || hidden % heads != 0 {
        return Err(Error::Dimension(format!("{hidden} is not divisible into {heads} heads")));
    }
    if x.ncols() != layer.wq.ncols() || layer.wo.dim() != (x.ncols(), hidden) {
        return Err(Error::Dimension(format!(
            "input width {} vs projections {:?} / {:?}",
            x.ncols(),
            layer.wq.dim(),
            layer.wo.dim()
        )));
    }
    let d = hidden / heads;
    let q = linear(x, &layer.wq, &layer.bq);
    let k = linear(x, &layer.wk, &layer.bk);
    let v = linear(x, &layer.wv, &layer.bv);
    let mut concat = Array2::zeros((x.nrows(), hidden));
    for h in 0..heads {
        let cols = s![.., h * d..(h + 1) * d];
        let out = attention_masked(
            &q.slice(cols).to_owned(),
            &k.slice(cols).to_owned(),
            &v.slice(cols).to_owned(),
            key_mask,
        )?;
        concat.slice_mut(cols).assign(&out);
    }
    Ok(linear(&concat, &layer.wo, &layer.bo))
}

fn layer_norm_1d(x: &Array2<f64>, gamma: &Array1<f64>, beta: &Array1<f64>) -> Array2<f64> {
    layer_norm(x, &row(gamma), &row(beta)).0
}

pub fn encoder_layer(x: &Array2<f64>, layer: &EncoderLayer, heads: usize, key_mask: Option<&[bool]>) -> Result<Array2<f64>> {
    let a = multi_head(x, layer, heads, key_mask)?;
    let x = layer_norm_1d(&(x + &a), &layer.ln1_gamma, &layer.ln1_beta);
    let f = linear(&linear(&x, &layer.w1, &layer.b1).mapv(gelu), &layer.w2, &layer.b2);
    Ok(layer_norm_1d(&(&x + &f), &layer.ln2_gamma, &layer.ln2_beta))
}

impl EncoderStack {
    /// Truncated-normal (±2σ, σ = 0.02) weights, zero biases, unit layer-norm scales.
    pub fn init(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 0.02).expect("valid std");
        let mut tn = |rows: usize, cols: usize| {
            Array2::from_shape_fn((rows, cols), |_| loop {
                let v: f64 = normal.sample(&mut rng);
                if v.abs() <= 0.04 {
                    break v;
                }
            })
        };
        let (h, f) = (config.hidden, config.ffn);
        let token_emb = tn(config.vocab_size, config.embed);
        let pos_emb = tn(config.max_positions, config.embed);
        let emb_w = tn(h, config.embed);
        let layers = (0..config.layers)
            .map(|_| EncoderLayer {
                wq: tn(h, h),
                bq: Array1::zeros(h),
                wk: tn(h, h),
                bk: Array1::zeros(h),
                wv: tn(h, h),
                bv: Array1::zeros(h),
                wo: tn(h, h),
                bo: Array1::zeros(h),
                ln1_gamma: Array1::ones(h),
                ln1_beta: Array1::zeros(h),
                w1: tn(f, h),
                b1: Array1::zeros(f),
                w2: tn(h, f),
                b2: Array1::zeros(h),
                ln2_gamma: Array1::ones(h),
                ln2_beta: Array1::zeros(h),
            })
            .collect();
        let head_w = tn(2, h);
        Ok(EncoderStack {
            token_emb,
            pos_emb,
            emb_w,
            emb_b: Array1::zeros(h),
            layers,
            head_w,
            head_b: Array1::zeros(2),
            config,
        })
    }

    /// Every parameter set to zero (layer-norm scales included).
    pub fn zeros(config: EncoderConfig) -> Result<Self> {
        let mut s = Self::init(config, 0)?;
        s.for_each_param_mut(|_, m| m.fill(0.0));
        Ok(s)
    }

    /// Visit every parameter as a matrix (vectors as 1×n), in a fixed order.
    pub fn named_params(&self) -> Vec<(String, Array2<f64>)> {
        let mut out = vec![
            ("tok_emb".to_string(), self.token_emb.clone()),
            ("pos_emb".to_string(), self.pos_emb.clone()),
            ("emb_proj.W".to_string(), self.emb_w.clone()),
            ("emb_proj.b".to_string(), row(&self.emb_b)),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            let p = |n: &str| format!("layer{i}.{n}");
            out.extend([
                (p("attn.q.W"), l.wq.clone()),
                (p("attn.q.b"), row(&l.bq)),
                (p("attn.k.W"), l.wk.clone()),
                (p("attn.k.b"), row(&l.bk)),
                (p("attn.v.W"), l.wv.clone()),
                (p("attn.v.b"), row(&l.bv)),
                (p("attn.o.W"), l.wo.clone()),
                (p("attn.o.b"), row(&l.bo)),
                (p("ln1.gamma"), row(&l.ln1_gamma)),
                (p("ln1.beta"), row(&l.ln1_beta)),
                (p("ffn.in.W"), l.w1.clone()),
                (p("ffn.in.b"), row(&l.b1)),
                (p("ffn.out.W"), l.w2.clone()),
                (p("ffn.out.b"), row(&l.b2)),
                (p("ln2.gamma"), row(&l.ln2_gamma)),
                (p("ln2.beta"), row(&l.ln2_beta)),
            ]);
        }
        out.push(("head.W".to_string(), self.head_w.clone()));
        out.push(("head.b".to_string(), row(&self.head_b)));
        out
    }

    /// Mutable visit in the same order as [`Self::named_params`].
    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(&str, &mut dyn ParamSlot)) {
        f("tok_emb", &mut self.token_emb);
        f("pos_emb", &mut self.pos_emb);
        f("emb_proj.W", &mut self.emb_w);
        f("emb_proj.b", &mut self.emb_b);
        for (i, l) in self.layers.iter_mut().enumerate() {
            let p = |n: &str| format!("layer{i}.{n}");
            f(&p("attn.q.W"), &mut l.wq);
            f(&p("attn.q.b"), &mut l.bq);
            f(&p("attn.k.W"), &mut l.wk);
            f(&p("attn.k.b"), &mut l.bk);
            f(&p("attn.v.W"), &mut l.wv);
            f(&p("attn.v.b"), &mut l.bv);
            f(&p("attn.o.W"), &mut l.wo);
            f(&p("attn.o.b"), &mut l.bo);
            f(&p("ln1.gamma"), &mut l.ln1_gamma);
            f(&p("ln1.beta"), &mut l.ln1_beta);
            f(&p("ffn.in.W"), &mut l.w1);
            f(&p("ffn.in.b"), &mut l.b1);
            f(&p("ffn.out.W"), &mut l.w2);
            f(&p("ffn.out.b"), &mut l.b2);
            f(&p("ln2.gamma"), &mut l.ln2_gamma);
            f(&p("ln2.beta"), &mut l.ln2_beta);
        }
        f("head.W", &mut self.head_w);
        f("head.b", &mut self.head_b);
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let c = &self.config;
        let expect = |name: &str, got: (usize, usize), want: (usize, usize)| {
            if got != want {
                Err(Error::Dimension(format!("{name} has shape {got:?}, expected {want:?}")))
            } else {
                Ok(())
            }
        };
        expect("tok_emb", self.token_emb.dim(), (c.vocab_size, c.embed))?;
        expect("pos_emb", self.pos_emb.dim(), (c.max_positions, c.embed))?;
        expect("emb_proj.W", self.emb_w.dim(), (c.hidden, c.embed))?;
        expect("head.W", self.head_w.dim(), (2, c.hidden))?;
        if self.layers.len() != c.layers {
            return Err(Error::Dimension(format!("{} layers, config says {}", self.layers.len(), c.layers)));
        }
        for l in &self.layers {
            expect("attn.q.W", l.wq.dim(), (c.hidden, c.hidden))?;
            expect("attn.k.W", l.wk.dim(), (c.hidden, c.hidden))?;
            expect("attn.v.W", l.wv.dim(), (c.hidden, c.hidden))?;
            expect("attn.o.W", l.wo.dim(), (c.hidden, c.hidden))?;
            expect("ffn.in.W", l.w1.dim(), (c.ffn, c.hidden))?;
            expect("ffn.out.W", l.w2.dim(), (c.hidden, c.ffn))?;
        }
        Ok(())
    }

    /// Logits for an already framed token sequence (CLS/SEP included).
    pub fn forward_tokens(&self, tokens: &[TokenId], key_mask: Option<&[bool]>) -> Result<Array1<f64>> {
        if tokens.is_empty() || tokens.len() > self.config.max_positions {
            return Err(Error::InvalidArgument(format!(
                "sequence of {} tokens outside 1..={}",
                tokens.len(),
                self.config.max_positions
            )));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(Error::InvalidArgument(format!("token id {bad} outside the vocabulary")));
        }
        let ids: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
        let e = self.token_emb.select(Axis(0), &ids) + &self.pos_emb.slice(s![..ids.len(), ..]);
        let mut x = linear(&e, &self.emb_w, &self.emb_b);
        for layer in &self.layers {
            x = encoder_layer(&x, layer, self.config.heads, key_mask)?;
        }
        Ok(self.head_w.dot(&x.row(0)) + &self.head_b)
    }

    /// Frame `ids` with CLS/SEP and return the logits and class-1 probability.
    pub fn encoder_forward(&self, ids: &[TokenId], vocab: &SubwordVocabulary) -> Result<(Array1<f64>, f64)> {
        if ids.len() + 2 > self.config.max_positions {
            return Err(Error::InvalidArgument(format!(
                "{} tokens plus CLS/SEP exceed {} positions; segment the input first",
                ids.len(),
                self.config.max_positions
            )));
        }
        let framed = frame(ids, vocab);
        let logits = self.forward_tokens(&framed, None)?;
        let p = softmax_rows(&logits.clone().insert_axis(Axis(0)))[[0, 1]];
        Ok((logits, p))
    }
}

/// Mutable access to a parameter regardless of rank.
pub trait ParamSlot {
    fn as_matrix(&self) -> Array2<f64>;
    fn assign_matrix(&mut self, m: &Array2<f64>);
    fn fill(&mut self, v: f64);
}

impl ParamSlot for Array2<f64> {
    fn as_matrix(&self) -> Array2<f64> {
        self.clone()
    }
    fn assign_matrix(&mut self, m: &Array2<f64>) {
        self.assign(m);
    }
    fn fill(&mut self, v: f64) {
        self.iter_mut().for_each(|x| *x = v);
    }
}

impl ParamSlot for Array1<f64> {
    fn as_matrix(&self) -> Array2<f64> {
        row(self)
    }
    fn assign_matrix(&mut self, m: &Array2<f64>) {
        self.assign(&m.row(0));
    }
    fn fill(&mut self, v: f64) {
        self.iter_mut().for_each(|x| *x = v);
    }
}

pub fn frame(ids: &[TokenId], vocab: &SubwordVocabulary) -> Vec<TokenId> {
    let mut out = Vec::with_capacity(ids.len() + 2);
    out.push(vocab.cls_id());
    out.extend_from_slice(ids);
    out.push(vocab.sep_id());
    out
}

#[derive(Debug, Clone)]
pub struct TransformerScorer {
    pub stack: EncoderStack,
    pub vocab: SubwordVocabulary,
    pub window: usize,
    pub overlap: usize,
    hyperparameters: serde_json::Value,
    model_id: String,
}

impl TransformerScorer {
    pub fn new(
        stack: EncoderStack,
        vocab: SubwordVocabulary,
        window: usize,
        overlap: usize,
        hyperparameters: serde_json::Value,
    ) -> Result<Self> {
        stack.validate()?;
        if vocab.len() != stack.config.vocab_size {
            return Err(Error::Dimension(format!(
                "vocabulary has {} pieces, encoder expects {}",
                vocab.len(),
                stack.config.vocab_size
            )));
        }
        if window == 0 || overlap >= window || window + 2 > stack.config.max_positions {
            return Err(Error::Config(format!(
                "window {window} / overlap {overlap} invalid for {} positions",
                stack.config.max_positions
            )));
        }
        let mut s = TransformerScorer {
            stack,
            vocab,
            window,
            overlap,
            hyperparameters,
            model_id: String::new(),
        };
        s.model_id = model_id_for(ScorerKind::Transformer, &s.to_weights());
        Ok(s)
    }

    pub fn with_defaults(stack: EncoderStack, vocab: SubwordVocabulary) -> Result<Self> {
        Self::new(stack, vocab, DEFAULT_WINDOW, DEFAULT_OVERLAP, serde_json::Value::Null)
    }

    pub fn segment_probability(&self, ids: &[TokenId]) -> f64 {
        self.stack.encoder_forward(ids, &self.vocab).expect("segment fits the encoder").1
    }

    pub fn to_weights(&self) -> WeightFile {
        let mut w = WeightFile::new(
            ScorerKind::Transformer.as_str(),
            json!({
                "encoder": self.stack.config,
                "window": self.window,
                "overlap": self.overlap,
                "training": self.hyperparameters,
            }),
        );
        w.metadata = json!({ "vocab": self.vocab.pieces() });
        for (name, m) in self.stack.named_params() {
            if m.nrows() == 1 && !name.ends_with("_emb") && !name.ends_with(".W") {
                w.put_vector(name, &m.row(0).to_owned()).expect("fresh tensor");
            } else {
                w.put_matrix(name, &m).expect("fresh tensor");
            }
        }
        w
    }

    pub fn from_weights(w: &WeightFile) -> Result<Self> {
        if w.model != ScorerKind::Transformer.as_str() {
            return Err(Error::WeightFormat(format!("expected a transformer weight file, found {:?}", w.model)));
        }
        let field = |k: &str| w.hyperparameters[k].clone();
        let config: EncoderConfig =
            serde_json::from_value(field("encoder")).map_err(|e| Error::WeightFormat(format!("encoder config: {e}")))?;
        let pieces: Vec<String> = serde_json::from_value(w.metadata["vocab"].clone())
            .map_err(|e| Error::WeightFormat(format!("vocab: {e}")))?;
        let vocab = SubwordVocabulary::from_pieces(pieces)?;
        let mut stack = EncoderStack::zeros(config)?;
        let mut failure = None;
        stack.for_each_param_mut(|name, slot| {
            if failure.is_some() {
                return;
            }
            match w.matrix_or_row(name) {
                Ok(m) if m.dim() == slot.as_matrix().dim() => slot.assign_matrix(&m),
                Ok(m) => failure = Some(Error::WeightFormat(format!("tensor {name} has shape {:?}", m.dim()))),
                Err(e) => failure = Some(e),
            }
        });
        if let Some(e) = failure {
            return Err(e);
        }
        let as_usize = |k: &str| {
            w.hyperparameters[k]
                .as_u64()
                .map(|v| v as usize)
                .ok_or_else(|| Error::WeightFormat(format!("missing {k}")))
        };
        Self::new(stack, vocab, as_usize("window")?, as_usize("overlap")?, field("training"))
    }
}

impl Scorer for TransformerScorer {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn score_fragment(&self, text: &str) -> FragmentScore {
        let ids = subword_encode(text, &self.vocab);
        let segments = segment(&ids, self.window, self.overlap).expect("window validated on construction");
        FragmentScore::from_segments(
            segments
                .iter()
                .map(|seg| SegmentScore {
                    start: seg.start,
                    length: seg.length,
                    score: self.segment_probability(&seg.ids),
                })
                .collect(),
        )
    }
}
