//! Recurrent baseline: word embeddings, a stacked bidirectional LSTM,
//! additive attention over the top layer and a two-logit classifier.

mod train;

use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};
use serde_json::json;

pub use train::{train_rnn, RnnParamIds, RnnTrainConfig};

use crate::autodiff::{sigmoid, softmax_rows};
use crate::error::{Error, Result};
use crate::scorer::{model_id_for, FragmentScore, Scorer, ScorerKind};
use crate::textprep::tokenize_words;
use crate::weights::WeightFile;

pub const DEFAULT_HIDDEN: usize = 512;

/// Word vectors, one row per known word.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub matrix: Array2<f64>,
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl EmbeddingTable {
    pub fn new(words: Vec<String>, matrix: Array2<f64>) -> Result<Self> {
        if words.len() != matrix.nrows() {
            return Err(Error::Dimension(format!("{} words vs {} embedding rows", words.len(), matrix.nrows())));
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate embedding word {w:?}")));
            }
        }
        Ok(EmbeddingTable { matrix, words, index })
    }

    /// GloVe text format: a word followed by its floats, space separated.
    pub fn read_glove(reader: impl BufRead) -> Result<Self> {
        let mut words = Vec::new();
        let mut values = Vec::new();
        let mut dim = None;
        for (n, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::Parse {
                line: n + 1,
                message: e.to_string(),
            })?;
            let mut parts = line.split_whitespace();
            let Some(word) = parts.next() else { continue };
            let row: Vec<f64> = parts
                .map(|p| p.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse {
                    line: n + 1,
                    message: format!("bad float: {e}"),
                })?;
            match dim {
                None if row.is_empty() => {
                    return Err(Error::Parse {
                        line: n + 1,
                        message: "word has no vector".into(),
                    })
                }
                None => dim = Some(row.len()),
                Some(d) if d != row.len() => {
                    return Err(Error::Parse {
                        line: n + 1,
                        message: format!("expected {d} values, found {}", row.len()),
                    })
                }
                _ => {}
            }
            words.push(word.to_string());
            values.extend(row);
        }
        let dim = dim.ok_or_else(|| Error::Validation("empty embedding file".into()))?;
        let matrix = Array2::from_shape_vec((words.len(), dim), values).expect("row lengths checked");
        Self::new(words, matrix)
    }

    pub fn load_glove(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_glove(std::io::BufReader::new(f))
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn row(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    /// T×e matrix of word vectors; unknown words become zero rows.
    pub fn lookup<S: AsRef<str>>(&self, tokens: &[S]) -> Array2<f64> {
        let mut out = Array2::zeros((tokens.len(), self.dim()));
        for (t, tok) in tokens.iter().enumerate() {
            if let Some(r) = self.row(tok.as_ref()) {
                out.row_mut(t).assign(&self.matrix.row(r));
            }
        }
        out
    }
}

/// One LSTM direction. Gate blocks are stacked in the order i, f, g, o.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCellParams {
    pub w: Array2<f64>,
    pub u: Array2<f64>,
    pub b: Array1<f64>,
}

impl LstmCellParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        LstmCellParams {
            w: Array2::zeros((4 * hidden, input)),
            u: Array2::zeros((4 * hidden, hidden)),
            b: Array1::zeros(4 * hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.u.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.w.ncols()
    }

    fn validate(&self) -> Result<()> {
        let h = self.hidden();
        if self.u.nrows() != 4 * h || self.w.nrows() != 4 * h || self.b.len() != 4 * h {
            return Err(Error::Dimension(format!(
                "LSTM cell shapes W {:?}, U {:?}, b {} are inconsistent",
                self.w.dim(),
                self.u.dim(),
                self.b.len()
            )));
        }
        Ok(())
    }
}

pub fn lstm_cell(
    x: ArrayView1<f64>,
    h_prev: ArrayView1<f64>,
    c_prev: ArrayView1<f64>,
    p: &LstmCellParams,
) -> Result<(Array1<f64>, Array1<f64>)> {
    p.validate()?;
    let h = p.hidden();
    if x.len() != p.input_dim() || h_prev.len() != h || c_prev.len() != h {
        return Err(Error::Dimension(format!(
            "lstm_cell: x {} / h {} / c {} against input {} hidden {h}",
            x.len(),
            h_prev.len(),
            c_prev.len(),
            p.input_dim()
        )));
    }
    Ok(cell_step(&(p.w.dot(&x) + &p.b), h_prev, c_prev, p))
}

/// Cell update given the precomputed input contribution `W x + b`.
fn cell_step(xw: &Array1<f64>, h_prev: ArrayView1<f64>, c_prev: ArrayView1<f64>, p: &LstmCellParams) -> (Array1<f64>, Array1<f64>) {
    let h = p.hidden();
    let z = xw + &p.u.dot(&h_prev);
    let mut c = Array1::zeros(h);
    let mut out = Array1::zeros(h);
    for j in 0..h {
        let i = sigmoid(z[j]);
        let f = sigmoid(z[h + j]);
        let g = z[2 * h + j].tanh();
        let o = sigmoid(z[3 * h + j]);
        c[j] = f * c_prev[j] + i * g;
        out[j] = o * c[j].tanh();
    }
    (out, c)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiLstmLayer {
    pub fwd: LstmCellParams,
    pub bwd: LstmCellParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiLstmStack {
    pub layers: Vec<BiLstmLayer>,
}

impl BiLstmStack {
    pub fn hidden(&self) -> usize {
        self.layers[0].fwd.hidden()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Dimension("stack has no layers".into()));
        }
        let h = self.hidden();
        for (l, layer) in self.layers.iter().enumerate() {
            layer.fwd.validate()?;
            layer.bwd.validate()?;
            if layer.fwd.hidden() != h || layer.bwd.hidden() != h {
                return Err(Error::Dimension(format!("layer {} hidden size differs", l + 1)));
            }
            if l > 0 && (layer.fwd.input_dim() != 2 * h || layer.bwd.input_dim() != 2 * h) {
                return Err(Error::Dimension(format!("layer {} must take 2h = {} inputs", l + 1, 2 * h)));
            }
        }
        Ok(())
    }
}

fn run_direction(x: &Array2<f64>, p: &LstmCellParams, reverse: bool) -> Array2<f64> {
    let h = p.hidden();
    let t_len = x.nrows();
    let xw = x.dot(&p.w.t()) + &p.b;
    let mut out = Array2::zeros((t_len, h));
    let mut hs = Array1::zeros(h);
    let mut cs = Array1::zeros(h);
    for step in 0..t_len {
        let t = if reverse { t_len - 1 - step } else { step };
        let (hn, cn) = cell_step(&xw.row(t).to_owned(), hs.view(), cs.view(), p);
        out.row_mut(t).assign(&hn);
        hs = hn;
        cs = cn;
    }
    out
}

/// T×e inputs to T×2h outputs of the top layer; row t is `[fwd_t, bwd_t]`.
pub fn bilstm_forward(embedded: &Array2<f64>, stack: &BiLstmStack) -> Result<Array2<f64>> {
    stack.validate()?;
    if embedded.nrows() == 0 {
        return Err(Error::InvalidArgument("bilstm_forward needs a non-empty sequence".into()));
    }
    if embedded.ncols() != stack.layers[0].fwd.input_dim() {
        return Err(Error::Dimension(format!(
            "inputs have {} features, layer 1 expects {}",
            embedded.ncols(),
            stack.layers[0].fwd.input_dim()
        )));
    }
    let mut x = embedded.clone();
    for layer in &stack.layers {
        let f = run_direction(&x, &layer.fwd, false);
        let b = run_direction(&x, &layer.bwd, true);
        x = concatenate![Axis(1), f, b];
    }
    Ok(x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    /// a×2h
    pub w: Array2<f64>,
    pub v: Array1<f64>,
}

/// Returns the context vector and the attention weights.
pub fn additive_attention(states: &Array2<f64>, p: &AttentionParams) -> Result<(Array1<f64>, Array1<f64>)> {
    if states.nrows() == 0 {
        return Err(Error::InvalidArgument("attention over an empty sequence".into()));
    }
    if p.w.ncols() != states.ncols() || p.w.nrows() != p.v.len() {
        return Err(Error::Dimension(format!(
            "attention W {:?}, v {} against states of width {}",
            p.w.dim(),
            p.v.len(),
            states.ncols()
        )));
    }
    let e = states.dot(&p.w.t()).mapv(f64::tanh).dot(&p.v);
    let alpha = softmax_rows(&e.insert_axis(Axis(0))).row(0).to_owned();
    Ok((alpha.dot(states), alpha))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RnnGeometry {
    pub embed: usize,
    pub hidden: usize,
    pub attention: usize,
    pub layers: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RnnModel {
    pub embedding: EmbeddingTable,
    pub stack: BiLstmStack,
    pub attention: AttentionParams,
    /// 2×2h
    pub head_w: Array2<f64>,
    pub head_b: Array1<f64>,
}

impl RnnModel {
    pub fn geometry(&self) -> RnnGeometry {
        RnnGeometry {
            embed: self.embedding.dim(),
            hidden: self.stack.hidden(),
            attention: self.attention.v.len(),
            layers: self.stack.layers.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.stack.validate()?;
        let h2 = 2 * self.stack.hidden();
        if self.stack.layers[0].fwd.input_dim() != self.embedding.dim() {
            return Err(Error::Dimension("layer 1 input width differs from the embedding size".into()));
        }
        if self.attention.w.ncols() != h2 || self.attention.w.nrows() != self.attention.v.len() {
            return Err(Error::Dimension("attention shapes disagree with the stack".into()));
        }
        if self.head_w.dim() != (2, h2) || self.head_b.len() != 2 {
            return Err(Error::Dimension("classifier head must be 2x2h with 2 biases".into()));
        }
        Ok(())
    }

    /// Two class probabilities, or `None` for a text without words.
    pub fn probabilities(&self, text: &str) -> Option<Array1<f64>> {
        let tokens = tokenize_words(text);
        if tokens.is_empty() {
            return None;
        }
        let states = bilstm_forward(&self.embedding.lookup(&tokens), &self.stack).expect("validated model");
        let (ctx, _) = additive_attention(&states, &self.attention).expect("validated model");
        let logits = self.head_w.dot(&ctx) + &self.head_b;
        Some(softmax_rows(&logits.insert_axis(Axis(0))).row(0).to_owned())
    }

    pub fn rnn_score(&self, text: &str) -> f64 {
        self.probabilities(text).map_or(0.0, |p| p[1])
    }

    pub fn to_weights(&self, hyperparameters: serde_json::Value) -> WeightFile {
        let mut w = WeightFile::new(
            ScorerKind::Rnn.as_str(),
            json!({ "geometry": self.geometry(), "training": hyperparameters }),
        );
        w.metadata = json!({ "words": self.embedding.words() });
        let put = |w: &mut WeightFile, name: String, m: &Array2<f64>| w.put_matrix(name, m).expect("fresh tensor");
        put(&mut w, "emb".into(), &self.embedding.matrix);
        for (l, layer) in self.stack.layers.iter().enumerate() {
            for (dir, cell) in [("fwd", &layer.fwd), ("bwd", &layer.bwd)] {
                put(&mut w, format!("l{}.{dir}.W", l + 1), &cell.w);
                put(&mut w, format!("l{}.{dir}.U", l + 1), &cell.u);
                w.put_vector(format!("l{}.{dir}.b", l + 1), &cell.b).expect("fresh tensor");
            }
        }
        put(&mut w, "attn.W".into(), &self.attention.w);
        w.put_vector("attn.v", &self.attention.v).expect("fresh tensor");
        put(&mut w, "head.W".into(), &self.head_w);
        w.put_vector("head.b", &self.head_b).expect("fresh tensor");
        w
    }

    pub fn from_weights(w: &WeightFile) -> Result<Self> {
        if w.model != ScorerKind::Rnn.as_str() {
            return Err(Error::WeightFormat(format!("expected an rnn weight file, found {:?}", w.model)));
        }
        let words: Vec<String> = serde_json::from_value(w.metadata["words"].clone())
            .map_err(|e| Error::WeightFormat(format!("words: {e}")))?;
        let layers = w.hyperparameters["geometry"]["layers"]
            .as_u64()
            .ok_or_else(|| Error::WeightFormat("missing geometry.layers".into()))? as usize;
        let cell = |l: usize, dir: &str| -> Result<LstmCellParams> {
            Ok(LstmCellParams {
                w: w.matrix(&format!("l{l}.{dir}.W"))?,
                u: w.matrix(&format!("l{l}.{dir}.U"))?,
                b: w.vector(&format!("l{l}.{dir}.b"))?,
            })
        };
        let model = RnnModel {
            embedding: EmbeddingTable::new(words, w.matrix("emb")?)?,
            stack: BiLstmStack {
                layers: (1..=layers)
                    .map(|l| Ok(BiLstmLayer { fwd: cell(l, "fwd")?, bwd: cell(l, "bwd")? }))
                    .collect::<Result<_>>()?,
            },
            attention: AttentionParams {
                w: w.matrix("attn.W")?,
                v: w.vector("attn.v")?,
            },
            head_w: w.matrix("head.W")?,
            head_b: w.vector("head.b")?,
        };
        model.validate()?;
        Ok(model)
    }
}

#[derive(Debug, Clone)]
pub struct RnnScorer {
    pub model: RnnModel,
    hyperparameters: serde_json::Value,
    model_id: String,
}

impl RnnScorer {
    pub fn new(model: RnnModel, hyperparameters: serde_json::Value) -> Result<Self> {
        model.validate()?;
        let mut s = RnnScorer {
            model,
            hyperparameters,
            model_id: String::new(),
        };
        s.model_id = model_id_for(ScorerKind::Rnn, &s.to_weights());
        Ok(s)
    }

    pub fn to_weights(&self) -> WeightFile {
        self.model.to_weights(self.hyperparameters.clone())
    }

    pub fn from_weights(w: &WeightFile) -> Result<Self> {
        Self::new(RnnModel::from_weights(w)?, w.hyperparameters["training"].clone())
    }
}

impl Scorer for RnnScorer {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn score_fragment(&self, text: &str) -> FragmentScore {
        let words = tokenize_words(text).len();
        if words == 0 {
            return FragmentScore::from_segments(Vec::new());
        }
        FragmentScore::single(words, self.model.rnn_score(text))
    }
}

/// Split the stacked i,f,g,o rows of a gate matrix into its four blocks.
pub fn gate_blocks(m: &Array2<f64>) -> [Array2<f64>; 4] {
    let h = m.nrows() / 4;
    std::array::from_fn(|k| m.slice(s![k * h..(k + 1) * h, ..]).to_owned())
}
