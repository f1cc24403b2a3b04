use std::hint::black_box;

use avdiar::assign::{exhaustive_min, hungarian_perm, sinkhorn_log};
use avdiar::eval::der;
use avdiar::frontend::{logmel, model_features};
use avdiar::model::Preset;
use avdiar::{EendModel, ModelConfig, Waveform};
use avdiar_bench::{cost_matrix, noise, turns};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn assignment(c: &mut Criterion) {
    let mut g = c.benchmark_group("assignment");
    for n in [2, 4, 6] {
        let cost = cost_matrix(n, n as u64);
        g.bench_with_input(BenchmarkId::new("sinkhorn", n), &cost, |b, m| {
            b.iter(|| sinkhorn_log(black_box(m), 0.05, 200).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("hungarian", n), &cost, |b, m| {
            b.iter(|| hungarian_perm(black_box(m)).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("exhaustive", n), &cost, |b, m| {
            b.iter(|| exhaustive_min(black_box(m)))
        });
    }
    g.finish();
}

fn scoring(c: &mut Criterion) {
    let reference = turns(4, 300.0, 1);
    let hypothesis = turns(5, 300.0, 2);
    c.bench_function("der_300s", |b| {
        b.iter(|| der(black_box(&reference), black_box(&hypothesis), 0.25).unwrap())
    });
}

fn frontend(c: &mut Criterion) {
    let w = Waveform::new(noise(10.0, 3), 16_000).unwrap();
    c.bench_function("logmel_10s", |b| b.iter(|| logmel(black_box(&w), 23).unwrap()));
    c.bench_function("model_features_10s", |b| {
        b.iter(|| model_features(black_box(&w)).unwrap())
    });
}

fn forward(c: &mut Criterion) {
    let w = Waveform::new(noise(10.0, 4), 16_000).unwrap();
    let feats = model_features(&w).unwrap();
    let mut g = c.benchmark_group("infer_10s");
    for preset in [Preset::Baseline, Preset::Plusplus] {
        let model = EendModel::new(ModelConfig::desk(preset, 10), 0).unwrap();
        g.bench_function(format!("{preset:?}").to_lowercase(), |b| {
            b.iter(|| model.infer(black_box(&feats), None).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, assignment, scoring, frontend, forward);
criterion_main!(benches);
