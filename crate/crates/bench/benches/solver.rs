//! Per-loss solve timing on one mixture sample, the comparison the
//! configuration sweep spends most of its time in.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;
use unmix_bench::benchmark_dataset;
use unmix_core::{
    deconvolve_sample, full_deconvolve_anls, AnlsInit, AnlsOptions, ConstraintMode,
    DeconvolutionConfig, EnforcementMode, LossKind, RegularizerKind, SolverOptions,
};

fn bench_losses(c: &mut Criterion) {
    let dataset = benchmark_dataset(500, 4, 1);
    let column = dataset.mixtures.column(0);
    let options = SolverOptions::default();
    let explicit = ConstraintMode::new(EnforcementMode::Explicit, EnforcementMode::Explicit);

    let mut group = c.benchmark_group("deconvolve_sample_n500_q4");
    for (name, loss) in [
        ("l2", LossKind::SquaredL2),
        ("l1", LossKind::AbsoluteL1),
        ("huber", LossKind::Huber { m: 1.0 }),
        ("eps", LossKind::EpsInsensitive { epsilon: 0.5 }),
    ] {
        let config = DeconvolutionConfig::new(loss, explicit, RegularizerKind::None);
        group.bench_with_input(BenchmarkId::from_parameter(name), &config, |b, config| {
            b.iter(|| {
                deconvolve_sample(
                    black_box(&dataset.reference_given),
                    black_box(&column),
                    config,
                    &options,
                )
                .unwrap()
            })
        });
    }
    group.finish();
}

fn bench_anls(c: &mut Criterion) {
    let dataset = benchmark_dataset(60, 3, 8);
    c.bench_function("anls_60x3x8", |b| {
        b.iter(|| {
            full_deconvolve_anls(
                black_box(&dataset.mixtures),
                AnlsInit::Reference(dataset.reference_true.values().clone()),
                LossKind::SquaredL2,
                &AnlsOptions::default(),
            )
            .unwrap()
        })
    });
}

criterion_group!(benches, bench_losses, bench_anls);
criterion_main!(benches);
