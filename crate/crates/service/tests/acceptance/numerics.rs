use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use ndarray::{Array1, Array2};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use triage_core::autodiff::softmax_rows;
use triage_core::bow::logreg::loss_and_grad;
use triage_core::bow::lsa::{fit_lsa, LsaOptions};
use triage_core::bow::tfidf::fit_tfidf;
use triage_core::scorer::Scorer;
use triage_core::synth::generate_synthetic;
use triage_core::textprep::{segment, subword_encode, SubwordVocabulary};
use triage_core::transformer::{attention, attention_weights, dataset_loss, head_gradients, EncoderConfig, EncoderStack};
use triage_core::TransformerScorer;

use crate::{ensure, Outcome};

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-scale..scale))
}

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn tfidf_oracle() -> Outcome {
    let raw = [
        "the cat sat on the mat",
        "the dog sat on the log",
        "the cat chased the dog",
        "the bird sang",
        "the cat the cat the cat",
        "the mat was red",
        "the log was wet and the dog was wet",
        "the sun rose over the hill",
        "the hill was green",
        "the end",
    ];
    let docs: Vec<Vec<&str>> = raw.iter().map(|d| d.split(' ').collect()).collect();
    let model = fit_tfidf(&docs).map_err(|e| e.to_string())?;

    let n_docs = docs.len() as f64;
    let vocab: BTreeSet<&str> = docs.iter().flatten().copied().collect();
    ensure(model.vocab.len() == vocab.len(), || "vocabulary size differs".into())?;

    let oracle = |doc: &[&str]| -> BTreeMap<&str, f64> {
        let known: Vec<&str> = doc.iter().copied().filter(|w| vocab.contains(w)).collect();
        let mut out = BTreeMap::new();
        for &v in &vocab {
            let count = known.iter().filter(|&&w| w == v).count() as f64;
            let tf = if known.is_empty() { 0.0 } else { count / known.len() as f64 };
            let df = docs.iter().filter(|d| d.contains(&v)).count() as f64;
            out.insert(v, tf * (n_docs / df).ln());
        }
        out
    };

    let mut queries = docs.clone();
    queries.push(vec!["the", "cat", "unseen", "word"]);
    let mut worst: f64 = 0.0;
    for q in &queries {
        let got = model.transform(q);
        for (v, want) in oracle(q) {
            let row = model.vocab.row(v).ok_or_else(|| format!("{v} missing from vocabulary"))?;
            worst = worst.max((got[row] - want).abs());
        }
    }
    let the = model.vocab.row("the").ok_or("`the` missing")?;
    ensure(model.idf[the] == 0.0, || format!("idf of an all-documents word is {}", model.idf[the]))?;
    ensure(worst <= 1e-12, || format!("max deviation {worst:e}"))?;
    Ok(format!("11 documents, max deviation {worst:.1e}, all-documents idf = 0"))
}

fn to_dmatrix(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

fn from_dmatrix(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

pub fn lsa_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(15_12);
    let mut worst_gram: f64 = 0.0;
    let mut worst_orth: f64 = 0.0;
    let mut cases = 0;
    for trial in 0..6 {
        // Even trials are full rank; odd trials have rank 5.
        let t = if trial % 2 == 0 {
            Array2::from_shape_fn((15, 12), |_| rng.random::<f64>())
        } else {
            random_matrix(&mut rng, 15, 5, 1.0).dot(&random_matrix(&mut rng, 5, 12, 1.0))
        };
        let rank = if trial % 2 == 0 { 12 } else { 5 };
        let proj = fit_lsa(
            &t,
            rank,
            &LsaOptions {
                seed: trial,
                ..Default::default()
            },
        )
        .map_err(|e| e.to_string())?;
        let c = &proj.components;
        ensure(c.dim() == (rank, 15), || format!("components shape {:?}", c.dim()))?;

        let svd = to_dmatrix(&t).svd(true, false);
        let u = svd.u.as_ref().ok_or("nalgebra returned no U")?;
        let mut s2 = DMatrix::zeros(u.ncols(), u.ncols());
        for (i, s) in svd.singular_values.iter().enumerate() {
            s2[(i, i)] = s * s;
        }
        let gram_dense = from_dmatrix(&(u * s2 * u.transpose()));
        let sigma2 = Array2::from_diag(&proj.singular_values.mapv(|s| s * s));
        let gram_ours = c.t().dot(&sigma2).dot(c);
        let scale = gram_dense.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        worst_gram = worst_gram.max(max_abs_diff(&gram_ours, &gram_dense) / scale);

        // Projected documents keep their pairwise inner products at full rank.
        let z = c.dot(&t);
        worst_gram = worst_gram.max(max_abs_diff(&z.t().dot(&z), &t.t().dot(&t)) / scale);

        worst_orth = worst_orth.max(max_abs_diff(&c.dot(&c.t()), &Array2::eye(rank)));
        cases += 1;
    }
    ensure(worst_gram <= 1e-6, || format!("Gram deviation {worst_gram:e}"))?;
    ensure(worst_orth <= 1e-8, || format!("orthonormality deviation {worst_orth:e}"))?;
    Ok(format!("{cases} matrices 15x12, Gram {worst_gram:.1e}, orthonormality {worst_orth:.1e}"))
}

fn small_vocab() -> SubwordVocabulary {
    let texts: Vec<String> = generate_synthetic(60, 10, 5).unwrap().into_iter().map(|r| r.text).collect();
    SubwordVocabulary::build(texts.iter().map(String::as_str), 60).unwrap()
}

pub fn gradient_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);

    let mut worst_logreg: f64 = 0.0;
    for _ in 0..6 {
        let (n, k) = (rng.random_range(5..30), rng.random_range(2..10));
        let x = random_matrix(&mut rng, n, k, 2.0);
        let y: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let w = Array1::from_shape_fn(k, |_| rng.random_range(-1.0..1.0));
        let b = rng.random_range(-1.0..1.0);
        let l2 = rng.random_range(0.0..0.1);
        let (_, gw, gb) = loss_and_grad(x.view(), &y, w.view(), b, l2);
        let h = 1e-6;
        let loss = |w: &Array1<f64>, b: f64| loss_and_grad(x.view(), &y, w.view(), b, l2).0;
        let mut analytic = gw.to_vec();
        analytic.push(gb);
        let mut numeric = Vec::new();
        for j in 0..k {
            let (mut wp, mut wm) = (w.clone(), w.clone());
            wp[j] += h;
            wm[j] -= h;
            numeric.push((loss(&wp, b) - loss(&wm, b)) / (2.0 * h));
        }
        numeric.push((loss(&w, b + h) - loss(&w, b - h)) / (2.0 * h));
        worst_logreg = worst_logreg.max(vector_rel_err(&analytic, &numeric));
    }

    let vocab = small_vocab();
    let mut worst_head: f64 = 0.0;
    for seed in 0..5u64 {
        let stack = EncoderStack::init(EncoderConfig::toy(vocab.len()), seed).map_err(|e| e.to_string())?;
        let examples: Vec<(Vec<u32>, u8)> = (0..4)
            .map(|_| {
                let len = rng.random_range(1..12);
                let ids = (0..len).map(|_| rng.random_range(4..vocab.len() as u32)).collect();
                (ids, rng.random_range(0..2))
            })
            .collect();
        let (gw, gb) = head_gradients(&stack, &vocab, &examples).map_err(|e| e.to_string())?;
        let h = 1e-5;
        let mut analytic = gw.iter().copied().collect::<Vec<_>>();
        analytic.extend(gb.iter().copied());
        let mut numeric = Vec::new();
        for idx in 0..stack.head_w.len() {
            let (r, c) = (idx / stack.head_w.ncols(), idx % stack.head_w.ncols());
            let mut plus = stack.clone();
            plus.head_w[[r, c]] += h;
            let mut minus = stack.clone();
            minus.head_w[[r, c]] -= h;
            numeric.push(central(&plus, &minus, &vocab, &examples, h)?);
        }
        for r in 0..stack.head_b.len() {
            let mut plus = stack.clone();
            plus.head_b[r] += h;
            let mut minus = stack.clone();
            minus.head_b[r] -= h;
            numeric.push(central(&plus, &minus, &vocab, &examples, h)?);
        }
        worst_head = worst_head.max(vector_rel_err(&analytic, &numeric));
    }
    ensure(worst_logreg < 1e-4, || format!("logistic regression relative error {worst_logreg:e}"))?;
    ensure(worst_head < 1e-3, || format!("classification head relative error {worst_head:e}"))?;
    Ok(format!("logreg 6 instances {worst_logreg:.1e}, head 5 instances {worst_head:.1e}"))
}

fn central(
    plus: &EncoderStack,
    minus: &EncoderStack,
    vocab: &SubwordVocabulary,
    examples: &[(Vec<u32>, u8)],
    h: f64,
) -> Result<f64, String> {
    let lp = dataset_loss(plus, vocab, examples).map_err(|e| e.to_string())?;
    let lm = dataset_loss(minus, vocab, examples).map_err(|e| e.to_string())?;
    Ok((lp - lm) / (2.0 * h))
}

fn vector_rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}

fn naive_attention(q: &Array2<f64>, k: &Array2<f64>, v: &Array2<f64>) -> Array2<f64> {
    let (n, m, d, dv) = (q.nrows(), k.nrows(), q.ncols(), v.ncols());
    let mut out = Array2::zeros((n, dv));
    for i in 0..n {
        let mut s = vec![0.0; m];
        for j in 0..m {
            for t in 0..d {
                s[j] += q[[i, t]] * k[[j, t]];
            }
            s[j] /= (d as f64).sqrt();
        }
        let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = s.iter().map(|x| (x - max).exp()).sum();
        for j in 0..m {
            let w = (s[j] - max).exp() / z;
            for c in 0..dv {
                out[[i, c]] += w * v[[j, c]];
            }
        }
    }
    out
}

pub fn attention_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let (mut worst_oracle, mut worst_sum, mut worst_shift) = (0.0f64, 0.0f64, 0.0f64);
    let trials = 200;
    for _ in 0..trials {
        let (n, m) = (rng.random_range(1..=8), rng.random_range(1..=8));
        let (d, dv) = (rng.random_range(1..=8), rng.random_range(1..=8));
        let q = random_matrix(&mut rng, n, d, 2.0);
        let k = random_matrix(&mut rng, m, d, 2.0);
        let v = random_matrix(&mut rng, m, dv, 2.0);
        let got = attention(&q, &k, &v).map_err(|e| e.to_string())?;
        worst_oracle = worst_oracle.max(max_abs_diff(&got, &naive_attention(&q, &k, &v)));

        let w = attention_weights(&q, &k, None).map_err(|e| e.to_string())?;
        for row in w.rows() {
            worst_sum = worst_sum.max((row.sum() - 1.0).abs());
        }

        // Adding a constant to each row of logits leaves softmax unchanged.
        let logits = random_matrix(&mut rng, n, m, 5.0);
        let shifts = Array1::from_shape_fn(n, |_| rng.random_range(-50.0..50.0));
        let shifted = &logits + &shifts.clone().insert_axis(ndarray::Axis(1));
        worst_shift = worst_shift.max(max_abs_diff(&softmax_rows(&logits), &softmax_rows(&shifted)));
        // The same shift arises from translating every key by a common vector.
        let u = Array1::from_shape_fn(d, |_| rng.random_range(-3.0..3.0));
        let k_shift = &k + &u;
        let moved = attention(&q, &k_shift, &v).map_err(|e| e.to_string())?;
        worst_shift = worst_shift.max(max_abs_diff(&moved, &got));
        for row in softmax_rows(&logits).rows() {
            worst_sum = worst_sum.max((row.sum() - 1.0).abs());
        }
    }
    ensure(worst_oracle <= 1e-10, || format!("oracle deviation {worst_oracle:e}"))?;
    ensure(worst_sum <= 1e-12, || format!("row-sum deviation {worst_sum:e}"))?;
    ensure(worst_shift <= 1e-10, || format!("shift deviation {worst_shift:e}"))?;
    Ok(format!(
        "{trials} random cases, oracle {worst_oracle:.1e}, row sums {worst_sum:.1e}, shift {worst_shift:.1e}"
    ))
}

pub fn segmentation() -> Outcome {
    let fixed = segment(&vec![7; 300], 256, 32).map_err(|e| e.to_string())?;
    let starts: Vec<usize> = fixed.iter().map(|s| s.start).collect();
    ensure(starts == [0, 224], || format!("(300, 256, 32) gave starts {starts:?}"))?;

    let cases = 2000;
    let mut runner = TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    });
    let strategy = (0usize..=5000, 2usize..=512).prop_flat_map(|(n, w)| (Just(n), Just(w), 0..w));
    runner
        .run(&strategy, |(n, window, overlap)| {
            let ids: Vec<u32> = (0..n as u32).collect();
            let segs = segment(&ids, window, overlap).unwrap();
            let stride = window - overlap;
            if n == 0 {
                prop_assert!(segs.is_empty());
                return Ok(());
            }
            prop_assert_eq!(segs[0].start, 0);
            prop_assert_eq!(segs.last().unwrap().end(), n);
            for (i, s) in segs.iter().enumerate() {
                prop_assert_eq!(s.start, i * stride);
                prop_assert_eq!(s.length, window.min(n - s.start));
                prop_assert_eq!(&s.ids[..], &ids[s.start..s.end()]);
            }
            for pair in segs.windows(2) {
                prop_assert_eq!(pair[0].end() - pair[1].start, overlap);
                prop_assert!(pair[0].end() < n);
            }
            let covered: usize = segs.iter().map(|s| s.length).sum::<usize>() - overlap * (segs.len() - 1);
            prop_assert_eq!(covered, n);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(format!("{cases} generated cases plus (300, 256, 32) -> starts {{0, 224}}"))
}

pub fn max_pooling() -> Outcome {
    let vocab = small_vocab();
    let stack = EncoderStack::init(EncoderConfig::toy(vocab.len()), 9).map_err(|e| e.to_string())?;
    let (window, overlap) = (10, 3);
    let scorer = TransformerScorer::new(stack.clone(), vocab.clone(), window, overlap, serde_json::Value::Null)
        .map_err(|e| e.to_string())?;
    let texts = generate_synthetic(80, 20, 77).map_err(|e| e.to_string())?;
    let mut multi = 0;
    for rec in &texts {
        let ids = subword_encode(&rec.text, &vocab);
        let mut best = f64::NEG_INFINITY;
        let mut start = 0;
        let mut count = 0;
        while start < ids.len() {
            let end = (start + window).min(ids.len());
            let (_, p) = stack.encoder_forward(&ids[start..end], &vocab).map_err(|e| e.to_string())?;
            best = best.max(p);
            count += 1;
            if end == ids.len() {
                break;
            }
            start += window - overlap;
        }
        if count > 1 {
            multi += 1;
        }
        let got = scorer.score_fragment(&rec.text);
        ensure(got.segments.len() == count, || format!("{}: {} segments, expected {count}", rec.id, got.segments.len()))?;
        ensure(got.score == best, || format!("{}: fragment score {} != max {}", rec.id, got.score, best))?;
    }
    ensure(multi >= 50, || format!("only {multi} texts spanned several segments"))?;
    Ok(format!("{} texts ({multi} multi-segment) equal the recomputed maximum exactly", texts.len()))
}
