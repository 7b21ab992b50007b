use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mgff_core::graphs::AdjacencySet;

fn adjacency(c: &mut Criterion) {
    let mut group = c.benchmark_group("adjacency_set");
    for t in [16, 40, 64] {
        group.bench_with_input(BenchmarkId::from_parameter(t), &t, |b, &t| {
            b.iter(|| AdjacencySet::build(t, &[1, 2, 3]).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, adjacency);
criterion_main!(benches);
