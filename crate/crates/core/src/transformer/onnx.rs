//! Interchange-format path: export a native encoder as an ONNX graph and
//! score text through an external runtime with the same windowing and
//! max-pooling contract as the native scorer.
//!
//! Graph contract: inputs `input_ids` and `attention_mask` (int64, 1×L),
//! output `logits` (float, 1×2). Sequences are padded to L with `[PAD]`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::TransformerScorer;
use crate::error::{Error, Result};
use crate::scorer::{FragmentScore, Scorer, SegmentScore};
use crate::textprep::{segment, subword_encode, SubwordVocabulary, TokenId, DEFAULT_OVERLAP, DEFAULT_WINDOW};

pub const INPUT_IDS: &str = "input_ids";
pub const ATTENTION_MASK: &str = "attention_mask";
pub const LOGITS: &str = "logits";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalModelHandle {
    pub graph: PathBuf,
    pub vocab: PathBuf,
    pub input_ids: String,
    pub attention_mask: String,
    pub logits: String,
    /// Padded sequence length the graph is run at (content window + CLS/SEP).
    pub seq_len: usize,
    pub window: usize,
    pub overlap: usize,
}

impl ExternalModelHandle {
    pub fn new(graph: impl Into<PathBuf>, vocab: impl Into<PathBuf>) -> Self {
        ExternalModelHandle {
            graph: graph.into(),
            vocab: vocab.into(),
            input_ids: INPUT_IDS.into(),
            attention_mask: ATTENTION_MASK.into(),
            logits: LOGITS.into(),
            seq_len: DEFAULT_WINDOW + 2,
            window: DEFAULT_WINDOW,
            overlap: DEFAULT_OVERLAP,
        }
    }

    fn check_files(&self) -> Result<()> {
        for (what, p) in [("graph", &self.graph), ("vocabulary", &self.vocab)] {
            if !p.is_file() {
                return Err(Error::Config(format!(
                    "external model {what} {} not found; export one with `asr export-onnx --weights W --out DIR` \
                     or point the handle at an existing ONNX graph and its vocabulary file",
                    p.display()
                )));
            }
        }
        if self.window + 2 > self.seq_len || self.overlap >= self.window {
            return Err(Error::Config(format!(
                "window {} / overlap {} do not fit sequence length {}",
                self.window, self.overlap, self.seq_len
            )));
        }
        Ok(())
    }
}

/// A loaded external graph plus its vocabulary.
pub struct ExternalScorer {
    handle: ExternalModelHandle,
    vocab: SubwordVocabulary,
    model_id: String,
    #[cfg(feature = "onnx")]
    plan: std::sync::Arc<tract_onnx::prelude::TypedRunnableModel>,
}

impl std::fmt::Debug for ExternalScorer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalScorer").field("handle", &self.handle).finish_non_exhaustive()
    }
}

impl ExternalScorer {
    pub fn open(handle: &ExternalModelHandle) -> Result<Self> {
        handle.check_files()?;
        let vocab = SubwordVocabulary::load(&handle.vocab)?;
        let bytes = std::fs::read(&handle.graph).map_err(|e| Error::io(&handle.graph, e))?;
        use sha2::Digest;
        let model_id = format!("onnx-{}", &hex::encode(sha2::Sha256::digest(&bytes))[..12]);
        #[cfg(feature = "onnx")]
        {
            let plan = runtime::load(handle, &bytes)?;
            Ok(ExternalScorer {
                handle: handle.clone(),
                vocab,
                model_id,
                plan,
            })
        }
        #[cfg(not(feature = "onnx"))]
        {
            let _ = (vocab, model_id);
            Err(Error::Config(
                "this build has no ONNX runtime; rebuild triage-core with `--features onnx`".into(),
            ))
        }
    }

    pub fn handle(&self) -> &ExternalModelHandle {
        &self.handle
    }

    /// Class-1 probability of one content segment.
    pub fn segment_probability(&self, ids: &[TokenId]) -> Result<f64> {
        let l = self.handle.seq_len;
        if ids.len() + 2 > l {
            return Err(Error::InvalidArgument(format!("segment of {} tokens exceeds graph length {l}", ids.len())));
        }
        let mut tokens = vec![self.vocab.pad_id() as i64; l];
        let mut mask = vec![0i64; l];
        tokens[0] = self.vocab.cls_id() as i64;
        for (i, &t) in ids.iter().enumerate() {
            tokens[i + 1] = t as i64;
        }
        tokens[ids.len() + 1] = self.vocab.sep_id() as i64;
        mask[..ids.len() + 2].fill(1);
        #[cfg(feature = "onnx")]
        {
            let logits = runtime::run(&self.plan, &tokens, &mask)?;
            let m = logits[0].max(logits[1]);
            let (e0, e1) = ((logits[0] - m).exp(), (logits[1] - m).exp());
            Ok(e1 / (e0 + e1))
        }
        #[cfg(not(feature = "onnx"))]
        {
            let _ = (tokens, mask);
            unreachable!("an ExternalScorer cannot be opened without the onnx feature")
        }
    }

    pub fn try_score_fragment(&self, text: &str) -> Result<FragmentScore> {
        let ids = subword_encode(text, &self.vocab);
        let mut out = Vec::new();
        for seg in segment(&ids, self.handle.window, self.handle.overlap)? {
            out.push(SegmentScore {
                start: seg.start,
                length: seg.length,
                score: self.segment_probability(&seg.ids)?,
            });
        }
        Ok(FragmentScore::from_segments(out))
    }
}

impl Scorer for ExternalScorer {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn score_fragment(&self, text: &str) -> FragmentScore {
        self.try_score_fragment(text).expect("external runtime failed on a validated graph")
    }
}

/// One-shot scoring through an external graph.
pub fn score_with_external(text: &str, handle: &ExternalModelHandle) -> Result<f64> {
    Ok(ExternalScorer::open(handle)?.try_score_fragment(text)?.score)
}

/// Write `model.onnx` and `vocab.txt` into `dir` and return a handle to them.
pub fn export_onnx(scorer: &TransformerScorer, dir: impl AsRef<Path>) -> Result<ExternalModelHandle> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut handle = ExternalModelHandle::new(dir.join("model.onnx"), dir.join("vocab.txt"));
    handle.window = scorer.window;
    handle.overlap = scorer.overlap;
    handle.seq_len = scorer.window + 2;
    scorer.vocab.save(&handle.vocab)?;
    #[cfg(feature = "onnx")]
    {
        let bytes = export::graph_bytes(&scorer.stack, handle.seq_len)?;
        std::fs::write(&handle.graph, bytes).map_err(|e| Error::io(&handle.graph, e))?;
        Ok(handle)
    }
    #[cfg(not(feature = "onnx"))]
    {
        Err(Error::Config("ONNX export needs the `onnx` feature of triage-core".into()))
    }
}

#[cfg(feature = "onnx")]
mod runtime {
    use std::sync::Arc;

    use tract_onnx::prelude::*;

    use super::ExternalModelHandle;
    use crate::error::{Error, Result};

    fn config_err(handle: &ExternalModelHandle, e: impl std::fmt::Display) -> Error {
        Error::Config(format!(
            "could not load ONNX graph {}: {e}; the graph must take int64 `{}` and `{}` of shape [1, {}] \
             and produce float `{}` of shape [1, 2]",
            handle.graph.display(),
            handle.input_ids,
            handle.attention_mask,
            handle.seq_len,
            handle.logits
        ))
    }

    pub(super) fn load(handle: &ExternalModelHandle, bytes: &[u8]) -> Result<Arc<TypedRunnableModel>> {
        let err = |e: TractError| config_err(handle, e);
        let mut model = tract_onnx::onnx().model_for_read(&mut std::io::Cursor::new(bytes)).map_err(err)?;
        let names: Vec<String> = model
            .input_outlets()
            .map_err(err)?
            .iter()
            .map(|o| model.node(o.node).name.clone())
            .collect();
        for (i, name) in names.iter().enumerate() {
            if *name != handle.input_ids && *name != handle.attention_mask {
                return Err(config_err(handle, format!("unexpected input {name:?}")));
            }
            model = model
                .with_input_fact(i, InferenceFact::dt_shape(i64::datum_type(), tvec!(1, handle.seq_len)))
                .map_err(err)?;
        }
        if names.len() != 2 || names[0] != handle.input_ids {
            return Err(config_err(handle, format!("inputs {names:?}")));
        }
        model.into_optimized().map_err(err)?.into_runnable().map_err(err)
    }

    pub(super) fn run(plan: &Arc<TypedRunnableModel>, tokens: &[i64], mask: &[i64]) -> Result<[f64; 2]> {
        let err = |e: TractError| Error::Config(format!("ONNX runtime failure: {e}"));
        let ids = Tensor::from_shape(&[1, tokens.len()], tokens).map_err(err)?;
        let m = Tensor::from_shape(&[1, mask.len()], mask).map_err(err)?;
        let out = plan.run(tvec!(ids.into(), m.into())).map_err(err)?;
        let logits = out[0].to_plain_array_view::<f32>().map_err(err)?;
        let flat: Vec<f32> = logits.iter().copied().collect();
        match flat[..] {
            [a, b] => Ok([a as f64, b as f64]),
            _ => Err(Error::Config(format!("expected 2 logits, graph produced {}", flat.len()))),
        }
    }
}

#[cfg(feature = "onnx")]
mod export {
    use ndarray::{s, Array2};
    use prost::Message;
    use tract_onnx::pb::{
        attribute_proto::AttributeType, tensor_proto::DataType, tensor_shape_proto, type_proto, AttributeProto,
        GraphProto, ModelProto, NodeProto, OperatorSetIdProto, TensorProto, TensorShapeProto, TypeProto,
        ValueInfoProto,
    };

    use super::{ATTENTION_MASK, INPUT_IDS, LOGITS};
    use crate::autodiff::LAYER_NORM_EPS;
    use crate::error::{Error, Result};
    use crate::transformer::{EncoderStack, MASK_LOGIT};

    #[derive(Default)]
    struct Builder {
        nodes: Vec<NodeProto>,
        inits: Vec<TensorProto>,
        counter: usize,
    }

    fn attr_int(name: &str, v: i64) -> AttributeProto {
        AttributeProto {
            name: name.into(),
            r#type: AttributeType::Int as i32,
            i: v,
            ..Default::default()
        }
    }

    fn attr_float(name: &str, v: f32) -> AttributeProto {
        AttributeProto {
            name: name.into(),
            r#type: AttributeType::Float as i32,
            f: v,
            ..Default::default()
        }
    }

    fn attr_ints(name: &str, v: &[i64]) -> AttributeProto {
        AttributeProto {
            name: name.into(),
            r#type: AttributeType::Ints as i32,
            ints: v.to_vec(),
            ..Default::default()
        }
    }

    fn value_info(name: &str, elem: DataType, dims: &[i64]) -> ValueInfoProto {
        ValueInfoProto {
            name: name.into(),
            r#type: Some(TypeProto {
                value: Some(type_proto::Value::TensorType(type_proto::Tensor {
                    elem_type: elem as i32,
                    shape: Some(TensorShapeProto {
                        dim: dims
                            .iter()
                            .map(|&d| tensor_shape_proto::Dimension {
                                value: Some(tensor_shape_proto::dimension::Value::DimValue(d)),
                                ..Default::default()
                            })
                            .collect(),
                    }),
                })),
                ..Default::default()
            }),
            ..Default::default()
        }
    }

    impl Builder {
        fn fresh(&mut self, hint: &str) -> String {
            self.counter += 1;
            format!("{hint}_{}", self.counter)
        }

        fn float(&mut self, name: &str, dims: &[usize], data: impl IntoIterator<Item = f64>) -> String {
            self.inits.push(TensorProto {
                name: name.into(),
                dims: dims.iter().map(|&d| d as i64).collect(),
                data_type: DataType::Float as i32,
                float_data: data.into_iter().map(|v| v as f32).collect(),
                ..Default::default()
            });
            name.to_string()
        }

        fn int64(&mut self, name: &str, dims: &[usize], data: &[i64]) -> String {
            self.inits.push(TensorProto {
                name: name.into(),
                dims: dims.iter().map(|&d| d as i64).collect(),
                data_type: DataType::Int64 as i32,
                int64_data: data.to_vec(),
                ..Default::default()
            });
            name.to_string()
        }

        fn node(&mut self, op: &str, inputs: &[&str], attrs: Vec<AttributeProto>) -> String {
            let out = self.fresh(&op.to_lowercase());
            self.nodes.push(NodeProto {
                name: out.clone(),
                op_type: op.into(),
                input: inputs.iter().map(|s| s.to_string()).collect(),
                output: vec![out.clone()],
                attribute: attrs,
                ..Default::default()
            });
            out
        }

        /// `x Wᵀ + b` with W stored out×in.
        fn linear(&mut self, x: &str, name: &str, w: &Array2<f64>, b: &ndarray::Array1<f64>) -> String {
            let wt = w.t();
            let wn = self.float(&format!("{name}.Wt"), &[wt.nrows(), wt.ncols()], wt.iter().copied());
            let bn = self.float(&format!("{name}.b"), &[b.len()], b.iter().copied());
            let y = self.node("MatMul", &[x, &wn], vec![]);
            self.node("Add", &[&y, &bn], vec![])
        }

        fn layer_norm(&mut self, x: &str, name: &str, g: &ndarray::Array1<f64>, b: &ndarray::Array1<f64>) -> String {
            let gn = self.float(&format!("{name}.gamma"), &[g.len()], g.iter().copied());
            let bn = self.float(&format!("{name}.beta"), &[b.len()], b.iter().copied());
            self.node(
                "LayerNormalization",
                &[x, &gn, &bn],
                vec![attr_int("axis", -1), attr_float("epsilon", LAYER_NORM_EPS as f32)],
            )
        }
    }

    pub(super) fn graph_bytes(stack: &EncoderStack, seq_len: usize) -> Result<Vec<u8>> {
        let c = &stack.config;
        if seq_len > c.max_positions {
            return Err(Error::Config(format!("sequence length {seq_len} exceeds {} positions", c.max_positions)));
        }
        let (l, h, heads, d) = (seq_len, c.hidden, c.heads, c.head_dim());
        let mut g = Builder::default();

        let tok = g.float("tok_emb", &[c.vocab_size, c.embed], stack.token_emb.iter().copied());
        let pos = g.float("pos_emb", &[l, c.embed], stack.pos_emb.slice(s![..l, ..]).iter().copied());
        let one = g.float("one", &[], [1.0]);
        let half = g.float("half", &[], [0.5]);
        let mask_logit = g.float("mask_logit", &[], [MASK_LOGIT]);
        let scale = g.float("scale", &[], [1.0 / (d as f64).sqrt()]);
        let sqrt2 = g.float("sqrt2", &[], [std::f64::consts::SQRT_2]);
        let split_shape = g.int64("split_shape", &[4], &[1, l as i64, heads as i64, d as i64]);
        let merge_shape = g.int64("merge_shape", &[3], &[1, l as i64, h as i64]);
        let mask_shape = g.int64("mask_shape", &[4], &[1, 1, 1, l as i64]);
        let first = g.int64("first", &[], &[0]);

        let e = g.node("Gather", &[&tok, INPUT_IDS], vec![attr_int("axis", 0)]);
        let e = g.node("Add", &[&e, &pos], vec![]);
        let mut x = g.linear(&e, "emb_proj", &stack.emb_w, &stack.emb_b);

        let m = g.node("Cast", &[ATTENTION_MASK], vec![attr_int("to", DataType::Float as i64)]);
        let inv = g.node("Sub", &[&one, &m], vec![]);
        let bias = g.node("Mul", &[&inv, &mask_logit], vec![]);
        let bias = g.node("Reshape", &[&bias, &mask_shape], vec![]);

        for (i, layer) in stack.layers.iter().enumerate() {
            let p = |n: &str| format!("layer{i}.{n}");
            let split = |g: &mut Builder, name: &str, w: &Array2<f64>, b: &ndarray::Array1<f64>, perm: &[i64]| {
                let y = g.linear(&x, name, w, b);
                let y = g.node("Reshape", &[&y, &split_shape], vec![]);
                g.node("Transpose", &[&y], vec![attr_ints("perm", perm)])
            };
            let q = split(&mut g, &p("attn.q"), &layer.wq, &layer.bq, &[0, 2, 1, 3]);
            let k = split(&mut g, &p("attn.k"), &layer.wk, &layer.bk, &[0, 2, 3, 1]);
            let v = split(&mut g, &p("attn.v"), &layer.wv, &layer.bv, &[0, 2, 1, 3]);
            let scores = g.node("MatMul", &[&q, &k], vec![]);
            let scores = g.node("Mul", &[&scores, &scale], vec![]);
            let scores = g.node("Add", &[&scores, &bias], vec![]);
            let probs = g.node("Softmax", &[&scores], vec![attr_int("axis", -1)]);
            let ctx = g.node("MatMul", &[&probs, &v], vec![]);
            let ctx = g.node("Transpose", &[&ctx], vec![attr_ints("perm", &[0, 2, 1, 3])]);
            let ctx = g.node("Reshape", &[&ctx, &merge_shape], vec![]);
            let attn = g.linear(&ctx, &p("attn.o"), &layer.wo, &layer.bo);
            let res = g.node("Add", &[&x, &attn], vec![]);
            let x1 = g.layer_norm(&res, &p("ln1"), &layer.ln1_gamma, &layer.ln1_beta);
            let f = g.linear(&x1, &p("ffn.in"), &layer.w1, &layer.b1);
            let scaled = g.node("Div", &[&f, &sqrt2], vec![]);
            let erf = g.node("Erf", &[&scaled], vec![]);
            let erf = g.node("Add", &[&erf, &one], vec![]);
            let f = g.node("Mul", &[&f, &erf], vec![]);
            let f = g.node("Mul", &[&f, &half], vec![]);
            let f = g.linear(&f, &p("ffn.out"), &layer.w2, &layer.b2);
            let res = g.node("Add", &[&x1, &f], vec![]);
            x = g.layer_norm(&res, &p("ln2"), &layer.ln2_gamma, &layer.ln2_beta);
        }
        let cls = g.node("Gather", &[&x, &first], vec![attr_int("axis", 1)]);
        let logits = g.linear(&cls, "head", &stack.head_w, &stack.head_b);
        g.nodes.push(NodeProto {
            name: LOGITS.into(),
            op_type: "Identity".into(),
            input: vec![logits],
            output: vec![LOGITS.into()],
            ..Default::default()
        });

        let model = ModelProto {
            ir_version: 8,
            producer_name: "triage-core".into(),
            opset_import: vec![OperatorSetIdProto {
                domain: String::new(),
                version: 17,
            }],
            graph: Some(GraphProto {
                name: "encoder".into(),
                node: g.nodes,
                initializer: g.inits,
                input: vec![
                    value_info(INPUT_IDS, DataType::Int64, &[1, l as i64]),
                    value_info(ATTENTION_MASK, DataType::Int64, &[1, l as i64]),
                ],
                output: vec![value_info(LOGITS, DataType::Float, &[1, 2])],
                ..Default::default()
            }),
            ..Default::default()
        };
        Ok(model.encode_to_vec())
    }
}

#[cfg(all(test, feature = "onnx"))]
mod tests {
    use super::*;
    use crate::transformer::{EncoderConfig, EncoderStack};

    #[test]
    fn exported_graph_matches_native_scores() {
        let vocab = SubwordVocabulary::new(["i", "want", "to", "die", "the", "cat", "sat", "##s"].map(String::from)).unwrap();
        let mut cfg = EncoderConfig::toy(vocab.len());
        cfg.max_positions = 16;
        let mut stack = EncoderStack::init(cfg, 11).unwrap();
        stack.for_each_param_mut(|name, p| {
            if name.ends_with(".W") || name.ends_with("_emb") {
                let m = p.as_matrix() * 20.0;
                p.assign_matrix(&m);
            }
        });
        let scorer = TransformerScorer::new(stack, vocab, 6, 2, serde_json::Value::Null).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let handle = export_onnx(&scorer, dir.path()).unwrap();
        let ext = ExternalScorer::open(&handle).unwrap();
        for text in ["i want to die", "the cat sat", "cats sat the cat i want to die the cats", "", "zzz"] {
            let native = scorer.score_fragment(text);
            let external = ext.try_score_fragment(text).unwrap();
            assert_eq!(native.segments.len(), external.segments.len());
            assert!((native.score - external.score).abs() < 1e-4, "{text}: {} vs {}", native.score, external.score);
        }
        assert_eq!(ext.score("the cat sat"), ext.score("the cat sat"));
    }

    #[test]
    fn missing_graph_is_a_configuration_error() {
        let handle = ExternalModelHandle::new("/nonexistent/model.onnx", "/nonexistent/vocab.txt");
        match score_with_external("hello", &handle) {
            Err(Error::Config(msg)) => assert!(msg.contains("export-onnx")),
            other => panic!("unexpected {other:?}"),
        }
    }
}
