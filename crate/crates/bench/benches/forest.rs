use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use smad_core::classifier::train_forest;
use smad_core::{ForestParams, Label, TrainingSet};

/// Two overlapping Gaussian classes, `dim` features, `n` rows per class.
fn gaussian_set(n: usize, dim: usize, seed: u64) -> TrainingSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).expect("valid sigma");
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (k, label) in [Label::Bonafide, Label::Morph].into_iter().enumerate() {
        for i in 0..n {
            ids.push(format!("{k}_{i:05}"));
            rows.push(
                (0..dim)
                    .map(|_| k as f64 + noise.sample(&mut rng))
                    .collect(),
            );
            labels.push(label);
        }
    }
    TrainingSet::new(ids, rows, labels)
}

fn bench_forest(c: &mut Criterion) {
    let set = gaussian_set(150, 59, 7);
    let params = ForestParams {
        n_trees: 50,
        ..ForestParams::default()
    };
    let mut group = c.benchmark_group("forest");
    group.sample_size(10);
    group.bench_function("train_50_trees_300x59", |b| {
        b.iter(|| train_forest(black_box(&set), &params).expect("training"))
    });
    let model = train_forest(&set, &params).expect("training");
    let probe = set.rows[0].clone();
    group.bench_function("predict_one", |b| {
        b.iter(|| model.predict(black_box(&probe)).expect("prediction"))
    });
    group.finish();
}

criterion_group!(benches, bench_forest);
criterion_main!(benches);
