use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use dbtagger::tagger::{crf_log_partition, viterbi_decode};
use dbtagger_bench::crf_instance;

fn crf(c: &mut Criterion) {
    let mut group = c.benchmark_group("crf");
    for (len, k) in [(10, 12), (30, 12), (30, 33)] {
        let (a, g) = crf_instance(len, k, 0);
        let id = format!("n{len}_k{k}");
        group.bench_with_input(BenchmarkId::new("log_partition", &id), &(&a, &g), |b, (a, g)| {
            b.iter(|| crf_log_partition(black_box(a), black_box(g)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("viterbi", &id), &(&a, &g), |b, (a, g)| b.iter(|| viterbi_decode(black_box(a), black_box(g)).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, crf);
criterion_main!(benches);
