//! Single worker against the full pool on the data-parallel stages.
//!
//! `cargo bench` compares one rayon worker with every core. Building with
//! `--no-default-features` swaps in the sequential fallback, and both arms
//! then measure the same plain loops.

use std::collections::BTreeMap;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use vidalign::grounding::{train_grounding, TrainConfig, TrainingTask};
use vidalign::io::Dataset;
use vidalign::par;
use vidalign::pipeline::{
    build_graph, match_videos, prepare_grounding, register_groups, PipelineConfig,
};
use vidalign::synth::{generate, SynthConfig};

fn arms() -> Vec<(String, usize)> {
    let all = std::thread::available_parallelism().map_or(2, |n| n.get().max(2));
    let backend = if par::is_parallel() {
        "rayon"
    } else {
        "sequential"
    };
    vec![
        (format!("{backend}-1"), 1),
        (format!("{backend}-{all}"), all),
    ]
}

fn scene() -> (Dataset, PipelineConfig) {
    let cfg = SynthConfig {
        seed: 4,
        videos: 6,
        videos_per_group: 3,
        segments_per_video: 60,
        ..SynthConfig::default()
    };
    (
        generate(&cfg).expect("valid config").dataset(),
        PipelineConfig::default(),
    )
}

fn bench_matching(c: &mut Criterion) {
    let (ds, cfg) = scene();
    let mut group = c.benchmark_group("match_and_graph");
    group.sample_size(10);
    for (name, threads) in arms() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                par::with_threads(threads, || {
                    let m = match_videos(black_box(&ds), &cfg).unwrap();
                    build_graph(&ds, &m, &cfg).unwrap()
                })
            })
        });
    }
    group.finish();
}

fn bench_training(c: &mut Criterion) {
    let (ds, cfg) = scene();
    let (graph, _) = build_graph(&ds, &match_videos(&ds, &cfg).unwrap(), &cfg).unwrap();
    let regs = register_groups(&ds, &graph, None).unwrap();
    let data = prepare_grounding(&ds, &regs, &cfg.grounding).unwrap();
    let tasks: BTreeMap<String, TrainingTask> = data.tasks;
    let train = TrainConfig {
        dim: 256,
        epochs: 3,
        ..TrainConfig::default()
    };
    let mut group = c.benchmark_group("grounding_training");
    group.sample_size(10);
    for (name, threads) in arms() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                par::with_threads(threads, || {
                    train_grounding(black_box(&tasks), &train).unwrap()
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_matching, bench_training);
criterion_main!(benches);
