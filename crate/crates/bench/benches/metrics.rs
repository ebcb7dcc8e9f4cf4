use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mll_core::metrics::{verification_accuracy_kfold, PairScores};
use mll_core::SeededStream;

fn scores(n: usize, rng: &mut SeededStream) -> PairScores {
    let genuine: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
    let scores = genuine
        .iter()
        .map(|&g| rng.normal(if g { 0.6 } else { 0.1 }, 0.2))
        .collect();
    let folds = (0..n).map(|i| i * 10 / n).collect();
    PairScores { scores, genuine, folds }
}

fn verification(c: &mut Criterion) {
    let mut group = c.benchmark_group("verification_kfold");
    for n in [600usize, 6000] {
        let s = scores(n, &mut SeededStream::new(n as u64));
        group.bench_with_input(BenchmarkId::from_parameter(n), &s, |b, s| {
            b.iter(|| verification_accuracy_kfold(black_box(s), 10).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, verification);
criterion_main!(benches);
