use std::collections::HashMap;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use tracelens_core::ingest::{load_trace, LoadOptions, TimeUnit, TraceFormat};
use tracelens_core::synthgen::generate_load;

fn bench_ingest(c: &mut Criterion) {
    let tmp = tempfile::tempdir().unwrap();
    let mut group = c.benchmark_group("ingest_jsonl");
    for n in [10_000usize, 100_000] {
        let path = tmp.path().join(format!("load_{n}.jsonl"));
        generate_load(n, &path).unwrap();
        let opts = LoadOptions::new(TraceFormat::Jsonl).with_unit(TimeUnit::Ns);
        group.throughput(Throughput::Elements(n as u64));
        group.bench_with_input(BenchmarkId::from_parameter(n), &path, |b, path| {
            b.iter(|| {
                let (events, quality) = load_trace(path, &opts, &HashMap::new()).unwrap();
                assert_eq!(quality.dropped, 0);
                events.len()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_ingest);
criterion_main!(benches);
