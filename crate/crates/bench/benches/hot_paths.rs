use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use nllab_core::correction::train_correction;
use nllab_core::nn::Sgd;
use nllab_core::simplex::{optimize_weights, project_simplex, SolverConfig};
use nllab_core::{prepare_data, Matrix, RunConfig, TwoHeadModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_stochastic(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        let row: Vec<f64> = (0..cols).map(|_| rng.random::<f64>() + 1e-3).collect();
        let sum: f64 = row.iter().sum();
        data.extend(row.into_iter().map(|v| v / sum));
    }
    Matrix::from_vec(rows, cols, data).unwrap()
}

fn simplex(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let v: Vec<f64> = (0..13).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
    c.bench_function("project_simplex k=13", |b| b.iter(|| project_simplex(black_box(&v))));

    let components: Vec<Matrix> = (0..13).map(|_| random_stochastic(100, 4, &mut rng)).collect();
    let labels: Vec<usize> = (0..100).map(|i| i % 4).collect();
    let prev = vec![1.0 / 12.0; 12];
    let config = SolverConfig::default();
    c.bench_function("optimize_weights k=13 n=100", |b| {
        b.iter(|| optimize_weights(black_box(&components), &labels, Some(&prev), &config).unwrap())
    });
}

fn training(c: &mut Criterion) {
    let config = RunConfig::default();
    let data = prepare_data(&config).unwrap();
    let noisy = &data.noisy;
    let classes = noisy.num_classes;
    let onehot = Matrix::one_hot(&noisy.noisy_labels, classes);
    let mut rng = ChaCha8Rng::seed_from_u64(config.model_seed);
    let model = TwoHeadModel::new(noisy.dim(), classes, &config.hidden, &mut rng).unwrap();

    c.bench_function("two-head epoch desk scale", |b| {
        b.iter_batched(
            || (model.clone(), Sgd::new(config.sgd()).unwrap(), ChaCha8Rng::seed_from_u64(1)),
            |(mut m, mut opt, mut rng)| {
                m.train_epoch(&noisy.features, &onehot, &onehot, config.lambda, &mut opt, 0, config.batch_size, &mut rng)
                    .unwrap()
            },
            BatchSize::LargeInput,
        )
    });

    c.bench_function("snapshot desk scale", |b| {
        b.iter(|| model.snapshot(black_box(&noisy.features), &data.meta.features, 0).unwrap())
    });

    let snapshot = model.snapshot(&noisy.features, &data.meta.features, 0).unwrap();
    let mut corrector = config.corrector();
    corrector.max_epochs = 1;
    c.bench_function("corrector epoch desk scale", |b| {
        b.iter(|| train_correction(&data.meta, black_box(&snapshot), &corrector, 3).unwrap())
    });

    let fitted = train_correction(&data.meta, &snapshot, &corrector, 3).unwrap().corrector;
    let aux = config.modality.aux_train(&snapshot);
    c.bench_function("corrector apply desk scale", |b| b.iter(|| fitted.apply(black_box(&onehot), aux).unwrap()));
}

criterion_group!(benches, simplex, training);
criterion_main!(benches);
