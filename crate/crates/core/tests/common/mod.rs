#![allow(dead_code)]

use nllab_core::nn::{cross_entropy, loss_and_backward, Activation, LayerSpec, Mlp};
use nllab_core::{Matrix, RunConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

/// Smallest |pre-activation| over hidden ReLU units; central differences
/// straddling a kink are meaningless, so draws closer than this are redrawn.
pub const KINK_MARGIN: f64 = 1e-3;

/// Magnitude below which relative errors are taken against this floor:
/// central differences at `FD_STEP` carry about 1e-11 of round-off, so they
/// cannot resolve 1e-4 relative accuracy on smaller gradients.
pub const GRAD_FLOOR: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rows: usize, cols: usize, scale: f64, rng: &mut impl Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Rows drawn uniformly-ish from the simplex (normalized exponentials).
pub fn random_stochastic(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    for r in 0..rows {
        let row = m.row_mut(r);
        for v in row.iter_mut() {
            *v = -rng.random_range(1e-9..1.0f64).ln();
        }
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    m
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    let diff = (a - b).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / a.abs().max(b.abs()).max(GRAD_FLOOR)
}

/// Random softmax MLP with 1..=3 layers and widths up to 64, plus a batch
/// and soft targets, redrawn until no hidden unit sits near a ReLU kink.
pub struct GradCase {
    pub net: Mlp,
    pub x: Matrix,
    pub targets: Matrix,
}

pub fn random_grad_case(rng: &mut ChaCha8Rng) -> GradCase {
    loop {
        let layers = rng.random_range(1..=3usize);
        let mut dims = vec![rng.random_range(1..=8usize)];
        for _ in 1..layers {
            dims.push(rng.random_range(2..=64usize));
        }
        let classes = rng.random_range(2..=5usize);
        dims.push(classes);
        let specs: Vec<LayerSpec> = (0..layers)
            .map(|i| {
                let act = if i + 1 == layers {
                    Activation::Softmax
                } else if rng.random_bool(0.8) {
                    Activation::Relu
                } else {
                    Activation::Identity
                };
                LayerSpec::new(dims[i], dims[i + 1], act)
            })
            .collect();
        let net = Mlp::new(&specs, rng).unwrap();
        let batch = rng.random_range(1..=6usize);
        let x = random_matrix(batch, dims[0], 2.0, rng);
        let targets = random_stochastic(batch, classes, rng);
        let acts = net.forward(&x).unwrap();
        let near_kink = specs.iter().zip(&acts.pre).any(|(s, pre)| {
            s.activation == Activation::Relu && pre.as_slice().iter().any(|v| v.abs() < KINK_MARGIN)
        });
        if !near_kink {
            return GradCase { net, x, targets };
        }
    }
}

/// Worst relative error between backprop and central differences over all
/// parameters of the case.
pub fn max_gradient_error(case: &GradCase) -> f64 {
    let mut net = case.net.clone();
    loss_and_backward(&mut net, &case.x, &case.targets).unwrap();
    let analytic: Vec<Vec<f64>> = net.params().iter().map(|p| p.grad.clone()).collect();
    let loss_at = |net: &Mlp| cross_entropy(&net.predict(&case.x).unwrap(), &case.targets).unwrap();

    let mut worst = 0.0f64;
    for (pi, grads) in analytic.iter().enumerate() {
        for (j, &g) in grads.iter().enumerate() {
            let mut probe = case.net.clone();
            let base = probe.params()[pi].values[j];
            probe.params_mut()[pi].values[j] = base + FD_STEP;
            let up = loss_at(&probe);
            probe.params_mut()[pi].values[j] = base - FD_STEP;
            let down = loss_at(&probe);
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(g, numeric));
        }
    }
    worst
}

/// Exhaustive search over the simplex on a grid of spacing `1/steps`,
/// for up to three components.
pub fn grid_search_min(k: usize, steps: usize, risk: impl Fn(&[f64]) -> f64) -> (Vec<f64>, f64) {
    let h = 1.0 / steps as f64;
    let mut best = (vec![], f64::INFINITY);
    let mut consider = |w: Vec<f64>| {
        let r = risk(&w);
        if r < best.1 {
            best = (w, r);
        }
    };
    match k {
        1 => consider(vec![1.0]),
        2 => (0..=steps).for_each(|i| consider(vec![i as f64 * h, 1.0 - i as f64 * h])),
        3 => {
            for i in 0..=steps {
                for j in 0..=steps - i {
                    let (a, b) = (i as f64 * h, j as f64 * h);
                    consider(vec![a, b, (1.0 - a - b).max(0.0)]);
                }
            }
        }
        _ => panic!("grid oracle supports at most 3 components"),
    }
    best
}

fn normal_pdf(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    (-0.5 * z * z).exp()
}

/// Mean of N(mean, std^2) truncated to [0, 1], by composite Simpson.
pub fn truncated_normal_mean(mean: f64, std: f64) -> f64 {
    let n = 20_000;
    let h = 1.0 / n as f64;
    let (mut mass, mut first) = (0.0, 0.0);
    for i in 0..=n {
        let x = i as f64 * h;
        let w = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let p = normal_pdf(x, mean, std);
        mass += w * p;
        first += w * x * p;
    }
    first / mass
}

/// Three-sigma binomial half-width for a proportion `p` over `n` trials.
pub fn binomial_band(p: f64, n: usize) -> f64 {
    3.0 * (p * (1.0 - p) / n as f64).sqrt()
}

/// A reduced desk configuration that runs in about a second.
pub fn small_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    for (k, v) in [
        ("n_per_class", "150"),
        ("test_per_class", "50"),
        ("epochs_total", "16"),
        ("warmup_epochs", "6"),
        ("correction_frequency", "2"),
        ("milestones", "10,14"),
        ("corrector_max_epochs", "15"),
        ("corrector_hidden", "32"),
        ("hidden", "32,16"),
        ("batch_size", "32"),
    ] {
        cfg.set(k, v).unwrap();
    }
    cfg
}
