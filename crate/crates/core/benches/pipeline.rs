use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use ctal_core::data::{generate_synthetic, Split, SynthConfig};
use ctal_core::model::{init_params, train_epoch, TrainConfig, TrainState, TrainingVideo};
use ctal_core::par::ExecMode;
use ctal_core::pipeline::propose;

const MODES: [(&str, ExecMode); 2] = [
    ("sequential", ExecMode::Sequential),
    ("parallel", ExecMode::Parallel),
];

fn corpus() -> Vec<TrainingVideo> {
    let cfg = SynthConfig {
        num_train: 8,
        num_val: 0,
        num_snippets: 32,
        ..SynthConfig::default()
    };
    let c = generate_synthetic(&cfg, 0).unwrap();
    c.records
        .iter()
        .zip(c.features)
        .filter(|(r, _)| r.split == Split::Train)
        .map(|(r, features)| TrainingVideo {
            id: r.id.clone(),
            features,
            gts: r.segments(),
        })
        .collect()
}

fn bench_train_epoch(c: &mut Criterion) {
    let data = corpus();
    let mut group = c.benchmark_group("train_epoch");
    group.sample_size(10);
    for (name, mode) in MODES {
        let mut cfg = TrainConfig {
            mode,
            ..TrainConfig::default()
        };
        cfg.optim.batch_size = 4;
        cfg.sampler.max_samples = 64;
        let p0 = init_params(16, &cfg).unwrap();
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                let mut p = p0.clone();
                let mut st = TrainState::new(&p);
                black_box(train_epoch(&mut p, &data, &cfg, &mut st).unwrap())
            })
        });
    }
    group.finish();
}

fn bench_propose(c: &mut Criterion) {
    let data = corpus();
    let cfg = TrainConfig::default();
    let params = init_params(16, &cfg).unwrap();
    let mut group = c.benchmark_group("propose");
    group.sample_size(10);
    for (name, mode) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(propose(&params, &data[0].features, &cfg.refine, mode).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_train_epoch, bench_propose);
criterion_main!(benches);
