//! Label corruption: symmetric, asymmetric (class map) and instance-dependent.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::nn::{softmax_in_place, Matrix};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NoiseError {
    #[error("eta must lie in [0, 1], got {0}")]
    Eta(f64),
    #[error("need at least 2 classes, got {0}")]
    Classes(usize),
    #[error("class mapping invalid: {0}")]
    Mapping(String),
    #[error("transition matrix invalid: {0}")]
    Matrix(String),
    #[error("{0}")]
    Shape(String),
}

/// Row-stochastic `T[i][j] = P(noisy = j | true = i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    rows: Vec<Vec<f64>>,
}

impl TransitionMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self, NoiseError> {
        let c = rows.len();
        for (i, r) in rows.iter().enumerate() {
            if r.len() != c {
                return Err(NoiseError::Matrix(format!("row {i} has {} entries", r.len())));
            }
            if r.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(NoiseError::Matrix(format!("row {i} has an entry outside [0, 1]")));
            }
            let s: f64 = r.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(NoiseError::Matrix(format!("row {i} sums to {s}")));
            }
        }
        Ok(Self { rows })
    }

    pub fn identity(c: usize) -> Self {
        let rows = (0..c)
            .map(|i| (0..c).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Self { rows }
    }

    pub fn classes(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i][j]
    }
}

fn check_eta(eta: f64) -> Result<(), NoiseError> {
    if (0.0..=1.0).contains(&eta) {
        Ok(())
    } else {
        Err(NoiseError::Eta(eta))
    }
}

/// Every label moves to each of the `c` classes (its own included) with
/// probability `eta / c`.
pub fn symmetric_matrix(c: usize, eta: f64) -> Result<TransitionMatrix, NoiseError> {
    if c < 2 {
        return Err(NoiseError::Classes(c));
    }
    check_eta(eta)?;
    let off = eta / c as f64;
    let rows = (0..c)
        .map(|i| {
            (0..c)
                .map(|j| if i == j { 1.0 - eta + off } else { off })
                .collect()
        })
        .collect();
    Ok(TransitionMatrix { rows })
}

/// Label `y` moves to `mapping[y]` with probability `eta`.
pub fn asymmetric_matrix(
    c: usize,
    eta: f64,
    mapping: &[usize],
) -> Result<TransitionMatrix, NoiseError> {
    if c < 2 {
        return Err(NoiseError::Classes(c));
    }
    check_eta(eta)?;
    if mapping.len() != c {
        return Err(NoiseError::Mapping(format!(
            "mapping covers {} classes, expected {c}",
            mapping.len()
        )));
    }
    if let Some(&bad) = mapping.iter().find(|&&m| m >= c) {
        return Err(NoiseError::Mapping(format!("target class {bad} out of range")));
    }
    let mut rows = vec![vec![0.0; c]; c];
    for (y, row) in rows.iter_mut().enumerate() {
        row[y] = 1.0 - eta;
        row[mapping[y]] += eta;
    }
    Ok(TransitionMatrix { rows })
}

/// `y -> (y + 1) mod c`.
pub fn circular_mapping(c: usize) -> Vec<usize> {
    (0..c).map(|y| (y + 1) % c).collect()
}

/// Samples each noisy label independently from its true label's row.
pub fn corrupt_with_matrix(
    true_labels: &[usize],
    t: &TransitionMatrix,
    seed: u64,
) -> Result<Vec<usize>, NoiseError> {
    let c = t.classes();
    if let Some(&bad) = true_labels.iter().find(|&&y| y >= c) {
        return Err(NoiseError::Shape(format!("label {bad} out of range for {c} classes")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(true_labels
        .iter()
        .map(|&y| sample_categorical(t.row(y), rng.random::<f64>()))
        .collect())
}

/// Inverse-CDF draw; `u` in [0, 1).
fn sample_categorical(p: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last_nonzero = 0;
    for (j, &pj) in p.iter().enumerate() {
        if pj > 0.0 {
            acc += pj;
            last_nonzero = j;
            if u < acc {
                return j;
            }
        }
    }
    // rounding left acc slightly below 1
    last_nonzero
}

/// Per-sample noisy-label distributions for instance-dependent corruption.
///
/// Each sample draws a flip rate `q ~ N(eta, std^2)` truncated to `[0, 1]`.
/// A single projection `W` (d x c, standard normal) scores the features;
/// the true class is masked and the remaining scores are softmaxed, giving
/// `p = q * softmax(s)` off the diagonal and `p[y] = 1 - q`.
#[derive(Debug, Clone)]
pub struct InstanceNoise {
    pub flip_rates: Vec<f64>,
    pub distributions: Matrix,
}

pub fn instance_dependent_distributions(
    features: &Matrix,
    true_labels: &[usize],
    c: usize,
    eta: f64,
    std: f64,
    rng: &mut ChaCha8Rng,
) -> Result<InstanceNoise, NoiseError> {
    check_eta(eta)?;
    if c < 2 {
        return Err(NoiseError::Classes(c));
    }
    if features.rows() != true_labels.len() {
        return Err(NoiseError::Shape(format!(
            "{} feature rows, {} labels",
            features.rows(),
            true_labels.len()
        )));
    }
    if !(std >= 0.0 && std.is_finite()) {
        return Err(NoiseError::Shape(format!("flip-rate std must be >= 0, got {std}")));
    }
    let n = true_labels.len();
    let d = features.cols();

    let flip_rates: Vec<f64> = if std == 0.0 {
        vec![eta; n]
    } else {
        let normal = Normal::new(eta, std).expect("std checked");
        (0..n)
            .map(|_| loop {
                let q: f64 = normal.sample(rng);
                if (0.0..=1.0).contains(&q) {
                    break q;
                }
            })
            .collect()
    };

    let w: Vec<f64> = (0..d * c).map(|_| StandardNormal.sample(rng)).collect();
    let mut dist = Matrix::zeros(n, c);
    let mut scores = vec![0.0; c];
    for i in 0..n {
        let y = true_labels[i];
        if y >= c {
            return Err(NoiseError::Shape(format!("label {y} out of range for {c} classes")));
        }
        let x = features.row(i);
        for (k, s) in scores.iter_mut().enumerate() {
            *s = (0..d).map(|j| x[j] * w[j * c + k]).sum();
        }
        scores[y] = f64::NEG_INFINITY;
        softmax_in_place(&mut scores);
        let q = flip_rates[i];
        let row = dist.row_mut(i);
        for k in 0..c {
            row[k] = q * scores[k];
        }
        row[y] = 1.0 - q;
    }
    Ok(InstanceNoise {
        flip_rates,
        distributions: dist,
    })
}

/// Instance-dependent corruption with the default flip-rate spread of 0.1.
pub fn instance_dependent_corrupt(
    features: &Matrix,
    true_labels: &[usize],
    c: usize,
    eta: f64,
    seed: u64,
) -> Result<Vec<usize>, NoiseError> {
    instance_dependent_corrupt_with_std(features, true_labels, c, eta, DEFAULT_INSTANCE_STD, seed)
}

pub const DEFAULT_INSTANCE_STD: f64 = 0.1;

pub fn instance_dependent_corrupt_with_std(
    features: &Matrix,
    true_labels: &[usize],
    c: usize,
    eta: f64,
    std: f64,
    seed: u64,
) -> Result<Vec<usize>, NoiseError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = instance_dependent_distributions(features, true_labels, c, eta, std, &mut rng)?;
    Ok(noise
        .distributions
        .row_iter()
        .map(|p| sample_categorical(p, rng.random::<f64>()))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Symmetric,
    Asymmetric,
    InstanceDependent,
}

impl std::str::FromStr for NoiseKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "symmetric" => Ok(Self::Symmetric),
            "asymmetric" => Ok(Self::Asymmetric),
            "instance_dependent" | "instance" => Ok(Self::InstanceDependent),
            other => Err(format!(
                "unknown noise kind '{other}' (symmetric, asymmetric, instance_dependent)"
            )),
        }
    }
}

impl std::fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Symmetric => "symmetric",
            Self::Asymmetric => "asymmetric",
            Self::InstanceDependent => "instance_dependent",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub eta: f64,
    /// Asymmetric target per class; `None` means circular shift.
    pub mapping: Option<Vec<usize>>,
    pub instance_std: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(kind: NoiseKind, eta: f64, seed: u64) -> Self {
        Self {
            kind,
            eta,
            mapping: None,
            instance_std: DEFAULT_INSTANCE_STD,
            seed,
        }
    }

    /// Noisy labels for `true_labels`. Features are only read by the
    /// instance-dependent kind.
    pub fn corrupt(
        &self,
        features: &Matrix,
        true_labels: &[usize],
        c: usize,
    ) -> Result<Vec<usize>, NoiseError> {
        match self.kind {
            NoiseKind::Symmetric => {
                corrupt_with_matrix(true_labels, &symmetric_matrix(c, self.eta)?, self.seed)
            }
            NoiseKind::Asymmetric => {
                let mapping = self.mapping.clone().unwrap_or_else(|| circular_mapping(c));
                corrupt_with_matrix(true_labels, &asymmetric_matrix(c, self.eta, &mapping)?, self.seed)
            }
            NoiseKind::InstanceDependent => instance_dependent_corrupt_with_std(
                features,
                true_labels,
                c,
                self.eta,
                self.instance_std,
                self.seed,
            ),
        }
    }
}
