//! Per-sample ω_L evaluation on the regularized metric particle: rayon map
//! against the sequential baseline.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lagreg_core::catalog::degenerate_metric_particle;
use lagreg_core::forms::omega_matrix;
use lagreg_core::par;
use lagreg_core::regularizer::{build_regularized_lagrangian, Hypothesis};

fn bench(c: &mut Criterion) {
    let s = degenerate_metric_particle();
    let reg = build_regularized_lagrangian(&s.system, &s.almost_product, &s.connection, Hypothesis::Declared).unwrap();
    let sys = &reg.system;
    let mut group = c.benchmark_group("omega_per_sample");
    for count in [64usize, 512] {
        let pts = s.sampling.clone().with_count(count).sample(&sys.chart).unwrap();
        group.bench_with_input(BenchmarkId::new("sequential", count), &pts, |b, pts| b.iter(|| par::map_sequential(pts, |_, p| omega_matrix(sys, p).unwrap())));
        group.bench_with_input(BenchmarkId::new(if par::is_parallel() { "rayon" } else { "fallback" }, count), &pts, |b, pts| b.iter(|| par::map(pts, |_, p| omega_matrix(sys, p).unwrap())));
    }
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
