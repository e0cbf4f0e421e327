use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use entrodrop_bench::{gaussian, toy_trace};
use entrodrop_core::estimators::{bucket_entropy, knn_entropy};
use entrodrop_core::{build_profile, EstimatorConfig, Granularity};

fn bucket(c: &mut Criterion) {
    let mut group = c.benchmark_group("bucket_entropy");
    for rows in [1_000, 10_000] {
        let sample = gaussian(rows, 64, 1);
        group.bench_with_input(BenchmarkId::from_parameter(rows), &sample, |b, s| {
            b.iter(|| bucket_entropy(black_box(s), 40).unwrap())
        });
    }
    group.finish();
}

fn knn(c: &mut Criterion) {
    let mut group = c.benchmark_group("knn_entropy");
    group.sample_size(10);
    for rows in [500, 2_000] {
        let sample = gaussian(rows, 64, 2);
        group.bench_with_input(BenchmarkId::from_parameter(rows), &sample, |b, s| {
            b.iter(|| knn_entropy(black_box(s), 25).unwrap())
        });
    }
    group.finish();
}

fn profile(c: &mut Criterion) {
    let trace = toy_trace(32);
    let mut group = c.benchmark_group("build_profile");
    group.sample_size(10);
    for (name, cfg) in [
        ("bucket40", EstimatorConfig::bucket(40)),
        ("knn25", EstimatorConfig::knn(25)),
    ] {
        group.bench_function(name, |b| {
            b.iter(|| build_profile(&trace, &cfg, Granularity::AttentionBlock).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bucket, knn, profile);
criterion_main!(benches);
