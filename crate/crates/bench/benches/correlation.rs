use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use tracelens_core::correlation::{correlation_matrix, CorrMethod};
use tracelens_core::MetricSeries;

// Cheap deterministic pseudo-noise; keeps the bench free of RNG crate setup.
fn noisy_series(name: String, len: usize, phase: f64) -> MetricSeries {
    let values = (0..len)
        .map(|i| {
            let t = i as f64;
            (0.05 * t + phase).sin() * 10.0 + ((t * 1315423911.0 + phase).sin() * 43758.5453).fract()
        })
        .collect();
    MetricSeries::new(name, 0, 1_000_000_000, values)
}

fn bench_correlation(c: &mut Criterion) {
    let mut group = c.benchmark_group("correlation_matrix");
    group.sample_size(10);
    for (n_metrics, len) in [(20usize, 2_000usize), (50, 10_000)] {
        let series: Vec<MetricSeries> = (0..n_metrics)
            .map(|i| noisy_series(format!("metric_{i:02}"), len, i as f64 * 0.7))
            .collect();
        let refs: Vec<&MetricSeries> = series.iter().collect();
        group.bench_with_input(
            BenchmarkId::from_parameter(format!("{n_metrics}x{len}")),
            &refs,
            |b, refs| {
                b.iter(|| {
                    let report = correlation_matrix(refs, 50, 0.7, CorrMethod::Pearson);
                    assert_eq!(report.edges.len(), n_metrics * (n_metrics - 1) / 2);
                    report.edges.len()
                })
            },
        );
    }
    group.finish();
}

criterion_group!(benches, bench_correlation);
criterion_main!(benches);
