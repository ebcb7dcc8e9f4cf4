use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mll_core::gradcheck::random_instance;
use mll_core::{assign_margins_plus, loss_backward, margin_softmax_loss, sample_margins, MarginSpec, SeededStream};

fn specs() -> Vec<MarginSpec> {
    vec![
        MarginSpec::arcface(0.5, 64.0),
        MarginSpec::cosface(0.35, 64.0),
        MarginSpec::elastic_arc(0.5, 0.05, 64.0),
        MarginSpec::elastic_arc_plus(0.5, 0.0175, 64.0),
    ]
}

fn loss(c: &mut Criterion) {
    let mut rng = SeededStream::new(1);
    let (batch, weights) = random_instance(&mut rng, 8, 8, 4);
    let mut group = c.benchmark_group("loss");
    for spec in specs() {
        let label = spec.label();
        group.bench_with_input(BenchmarkId::new("forward", &label), &spec, |b, spec| {
            let mut r = SeededStream::new(2);
            b.iter(|| margin_softmax_loss(black_box(&batch), &weights, spec, &mut r).unwrap())
        });
        let out = margin_softmax_loss(&batch, &weights, &spec, &mut SeededStream::new(2)).unwrap();
        group.bench_with_input(BenchmarkId::new("backward", &label), &spec, |b, spec| {
            b.iter(|| loss_backward(black_box(&out), &batch, &weights, spec).unwrap())
        });
    }
    group.finish();
}

fn plus_assignment(c: &mut Criterion) {
    let mut group = c.benchmark_group("plus_assignment");
    for n in [128usize, 512, 4096] {
        let mut rng = SeededStream::new(n as u64);
        let margins = sample_margins(n, 0.5, 0.0175, &mut rng).unwrap().values;
        let cos: Vec<f64> = (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| assign_margins_plus(black_box(&margins), black_box(&cos)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, loss, plus_assignment);
criterion_main!(benches);
