use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

use bernpoisson::counting::{build_count_table, simulate_nonintersecting, SimMode};
use bernpoisson::exact::{annealed_pmf, stein_chen_bound};
use bernpoisson::model::sample_sequence;
use bernpoisson::{AnnealedSpec, BoundMode, RngStream};

fn counting(c: &mut Criterion) {
    let mut g = c.benchmark_group("count_table");
    g.sample_size(10);
    for k in [16u32, 24, 40] {
        let n = 1u64 << 22;
        let x = sample_sequence(&RngStream::new(1, 0), n + k as u64 - 1, 0.6);
        g.throughput(Throughput::Elements(n));
        g.bench_with_input(BenchmarkId::from_parameter(k), &k, |b, &k| {
            b.iter(|| build_count_table(black_box(&x), k, n).unwrap())
        });
    }
    g.finish();
}

fn sampling(c: &mut Criterion) {
    let mut g = c.benchmark_group("sample_sequence");
    let len = 1u64 << 20;
    g.throughput(Throughput::Elements(len));
    g.bench_function("p=0.6", |b| b.iter(|| sample_sequence(&RngStream::new(2, 0), black_box(len), 0.6)));
    g.finish();

    let mut g = c.benchmark_group("simulate_nonintersecting");
    g.sample_size(10);
    for mode in [SimMode::Fast, SimMode::Honest] {
        g.bench_function(format!("{mode:?}"), |b| {
            b.iter(|| simulate_nonintersecting(&RngStream::new(3, 0), 8, 256, 0.6, 10_000, mode).unwrap())
        });
    }
    g.finish();
}

fn exact(c: &mut Criterion) {
    let mut g = c.benchmark_group("annealed_pmf");
    for k in [64u32, 1024, 16384] {
        let spec = AnnealedSpec::new(k, 0.6, 1 << 20, 10).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(k), &spec, |b, s| {
            b.iter(|| annealed_pmf(black_box(s), 3).unwrap())
        });
    }
    g.finish();
    c.bench_function("stein_chen_bound/brute_force/k=16", |b| {
        b.iter(|| stein_chen_bound(16, 0.6, 0.0, 1.0, BoundMode::BruteForce).unwrap())
    });
}

criterion_group!(benches, counting, sampling, exact);
criterion_main!(benches);
