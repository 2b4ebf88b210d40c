//! Evaluation-measure throughput: error metrics, the random baseline, and
//! rank correlation.

use criterion::{criterion_group, criterion_main, Criterion};
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use std::hint::black_box;
use unmix_core::{kendall_tau, mad, r2d, rmsd, MetricKind, RandomBaseline};

fn bench_metrics(c: &mut Criterion) {
    let mut rng = ChaCha12Rng::seed_from_u64(7);
    let truth = unmix_core::eval::random_percentages(6, 40, &mut rng);
    let estimate = unmix_core::eval::random_percentages(6, 40, &mut rng);

    c.bench_function("mad_6x40", |b| {
        b.iter(|| mad(black_box(&truth), black_box(&estimate)).unwrap())
    });
    c.bench_function("rmsd_6x40", |b| {
        b.iter(|| rmsd(black_box(&truth), black_box(&estimate)).unwrap())
    });
    c.bench_function("r2d_6x40", |b| {
        b.iter(|| r2d(black_box(&truth), black_box(&estimate)).unwrap())
    });
    c.bench_function("baseline_1000_draws", |b| {
        b.iter(|| RandomBaseline::generate(MetricKind::Mad, black_box(&truth), 1000, 3).unwrap())
    });
}

fn bench_kendall(c: &mut Criterion) {
    let mut rng = ChaCha12Rng::seed_from_u64(11);
    let x: Vec<f64> = (0..2000).map(|_| rng.random()).collect();
    let y: Vec<f64> = (0..2000).map(|_| rng.random()).collect();
    c.bench_function("kendall_tau_n2000", |b| {
        b.iter(|| kendall_tau(black_box(&x), black_box(&y)).unwrap())
    });
}

criterion_group!(benches, bench_metrics, bench_kendall);
criterion_main!(benches);
