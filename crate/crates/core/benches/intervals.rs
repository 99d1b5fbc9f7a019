use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use modens::dist::{default_tol, ComponentDistribution, Family};
use modens::modulate::{maximize_quantile_with, outcome_intervals, IntervalQuery, OptimizerOptions, Strategy};
use modens::par::ExecutionMode;
use modens::sensitivity::{msm_bounds, SensitivityConfig};

fn queries(n: usize, m: usize, seed: u64) -> Vec<IntervalQuery> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = SensitivityConfig::new(4.0).unwrap();
    (0..n)
        .map(|_| {
            let components = (0..m)
                .map(|_| {
                    let family = if rng.random_bool(0.5) { Family::Gaussian } else { Family::Cauchy };
                    ComponentDistribution::new(family, rng.random_range(-5.0..5.0), rng.random_range(0.2..3.0))
                        .unwrap()
                })
                .collect();
            IntervalQuery {
                components,
                bounds: msm_bounds(rng.random_range(0.05..0.95), cfg).unwrap(),
            }
        })
        .collect()
}

fn bench_modes(c: &mut Criterion) {
    let mut group = c.benchmark_group("outcome_intervals");
    group.sample_size(10);
    for &n in &[256usize, 2048] {
        let qs = queries(n, 16, 7);
        group.throughput(Throughput::Elements(n as u64));
        for (name, mode) in [("sequential", ExecutionMode::Sequential), ("parallel", ExecutionMode::Parallel)] {
            group.bench_with_input(BenchmarkId::new(name, n), &qs, |b, qs| {
                b.iter(|| outcome_intervals(qs, 0.05, mode).unwrap())
            });
        }
    }
    group.finish();
}

fn bench_strategies(c: &mut Criterion) {
    let mut group = c.benchmark_group("maximize_quantile");
    for &m in &[16usize, 64] {
        let q = &queries(1, m, 11)[0];
        let tol = default_tol(&q.components);
        for (name, strategy) in [("greedy", Strategy::Greedy), ("bulk", Strategy::Bulk)] {
            let opts = OptimizerOptions { tol: Some(tol), strategy };
            group.bench_with_input(BenchmarkId::new(name, m), q, |b, q| {
                b.iter(|| maximize_quantile_with(&q.components, &q.bounds, 0.975, opts).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, bench_modes, bench_strategies);
criterion_main!(benches);
