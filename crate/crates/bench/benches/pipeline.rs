use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};
use pws_core::end_model::{train, FeatureSpec, TrainConfig};
use pws_core::fixtures::spam_synth;
use pws_core::gateway::{Gateway, MockBackend};
use pws_core::label_model::{fit_dawid_skene, fit_triplets, DawidSkeneConfig};
use pws_core::prompt::{apply_suite, ApplyOptions};
use pws_core::synthetic::{Planted, PlantedDawidSkene};

fn planted(n: usize, m: usize) -> Planted {
    PlantedDawidSkene {
        n,
        alpha: (0..m).map(|j| 0.6 + 0.3 * j as f64 / m as f64).collect(),
        beta: vec![0.4; m],
        prior: vec![0.5, 0.5],
        seed: 3,
    }
    .sample()
}

fn label_models(c: &mut Criterion) {
    let p = planted(5_000, 10);
    let cfg = DawidSkeneConfig::default();
    c.bench_function("dawid_skene_5000x10", |b| {
        b.iter(|| fit_dawid_skene(&p.matrix, 2, &cfg).unwrap())
    });
    c.bench_function("triplets_5000x10", |b| {
        b.iter(|| fit_triplets(&p.matrix, &[0.5, 0.5]).unwrap())
    });
}

fn end_model(c: &mut Criterion) {
    let data = spam_synth::generate_dataset().unwrap().dataset;
    let examples = &data.split("train").unwrap().examples;
    let cfg = TrainConfig::default();
    let spec = FeatureSpec::new(cfg.dim).unwrap();
    c.bench_function("featurize_train_split", |b| {
        b.iter(|| spec.featurize_all(examples))
    });
    let xs = spec.featurize_all(examples);
    let qs: Vec<Vec<f64>> = examples
        .iter()
        .map(|e| {
            if e.gold == Some(1) {
                vec![0.2, 0.8]
            } else {
                vec![0.8, 0.2]
            }
        })
        .collect();
    c.bench_function("train_train_split", |b| {
        b.iter(|| train(&xs, &qs, 2, &cfg, 0).unwrap())
    });
}

fn apply(c: &mut Criterion) {
    let data = spam_synth::generate_dataset().unwrap().dataset;
    let split = data.split("valid").unwrap();
    let suite = spam_synth::pws_suite().unwrap();
    let backend = Arc::new(MockBackend::new(spam_synth::rulebook().unwrap()));
    let id = suite.lfs[0].backend.clone();
    // A fresh in-memory cache per iteration keeps every query uncached.
    c.bench_function("apply_suite_mock_valid", |b| {
        b.iter(|| {
            let gw = Gateway::ephemeral().with_backend(id.clone(), backend.clone());
            apply_suite(&suite, split, &gw, None, &ApplyOptions::default()).unwrap()
        })
    });
}

criterion_group!(benches, label_models, end_model, apply);
criterion_main!(benches);
