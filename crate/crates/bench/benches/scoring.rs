use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use std::hint::black_box;
use triage_bench::{bow_scorer, corpus, long_text, transformer_scorer};
use triage_core::scorer::Scorer;

fn bow(c: &mut Criterion) {
    let scorer = bow_scorer();
    let (texts, _) = corpus(1000, 10, 99);
    let mut group = c.benchmark_group("bow");
    group.throughput(Throughput::Elements(texts.len() as u64));
    group.bench_function("score_1000_fragments", |b| {
        b.iter(|| texts.iter().map(|t| scorer.score(black_box(t))).sum::<f64>())
    });
    group.finish();
}

fn transformer(c: &mut Criterion) {
    let scorer = transformer_scorer();
    let mut group = c.benchmark_group("transformer");
    group.sample_size(10);
    for words in [50usize, 250, 1000] {
        let text = long_text(words, words as u64);
        group.bench_with_input(BenchmarkId::new("score_fragment", words), &text, |b, t| {
            b.iter(|| scorer.score_fragment(black_box(t)))
        });
    }
    group.finish();
}

criterion_group!(benches, bow, transformer);
criterion_main!(benches);
