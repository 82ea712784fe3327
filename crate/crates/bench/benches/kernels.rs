use std::hint::black_box;

use bmlab_bench::weak_nn;
use bmlab_core::chaos::{contraction_norm_sq, exact_variance, TestFunction};
use bmlab_core::covariance::CovarianceModel;
use bmlab_core::hermite::Observable;
use bmlab_core::sampler::{GffSampler, StationarySampler};
use bmlab_core::stats::{run_replicas, FieldObservable, FieldSource, ReplicaConfig, StatKind};
use bmlab_core::Normalization;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn samplers(c: &mut Criterion) {
    let mut g = c.benchmark_group("sample");
    for m in [64, 128] {
        let s = StationarySampler::new(&weak_nn(), m).unwrap();
        g.bench_with_input(BenchmarkId::new("torus_d2", m), &m, |b, _| b.iter(|| black_box(s.sample(1, 0))));
    }
    let gff = GffSampler::new(3, 32).unwrap();
    g.bench_function("gff_box_d3_32", |b| b.iter(|| black_box(gff.sample(1, 0))));
    g.finish();
}

fn variances(c: &mut Criterion) {
    let mut g = c.benchmark_group("exact_variance");
    let sparse = weak_nn();
    let dense = CovarianceModel::power_law(2, 0.5, 3.0, 1.0).unwrap();
    let f = TestFunction::Eigenfunction { k: vec![1, 1] };
    for n in [17, 33] {
        g.bench_with_input(BenchmarkId::new("sparse", n), &n, |b, &n| b.iter(|| exact_variance(2, 1.0, &sparse, &f, n)));
        g.bench_with_input(BenchmarkId::new("dense", n), &n, |b, &n| b.iter(|| exact_variance(2, 1.0, &dense, &f, n)));
    }
    g.finish();
}

fn contractions(c: &mut Criterion) {
    let mut g = c.benchmark_group("contraction");
    g.sample_size(10);
    let model = weak_nn();
    for n in [5, 9] {
        g.bench_with_input(BenchmarkId::new("q3_r1", n), &n, |b, &n| {
            b.iter(|| contraction_norm_sq(3, 1, 1.0, &model, &TestFunction::ConstantOne, n, false).unwrap())
        });
    }
    g.finish();
}

fn replicas(c: &mut Criterion) {
    let model = weak_nn();
    let e = Observable::Power { p: 2 }.expand(1.0, 2).unwrap();
    let cfg = ReplicaConfig {
        source: FieldSource::Torus { model, m: 66 },
        gradient_axis: None,
        observable: FieldObservable::from_expansion(e),
        test_functions: vec![TestFunction::ConstantOne],
        n_list: vec![17, 33],
        stats: vec![StatKind::Functional { f: 0, normalization: Normalization::Centered }],
        replicas: 256,
        seed: 1,
        c_m: None,
    };
    let mut g = c.benchmark_group("run_replicas");
    g.sample_size(10);
    g.bench_function("torus_d2_256", |b| b.iter(|| black_box(run_replicas(&cfg).unwrap())));
    g.finish();
}

criterion_group!(benches, samplers, variances, contractions, replicas);
criterion_main!(benches);
