//! Convex combination of historical corrections.
//!
//! Weights live on the probability simplex and are fitted to minimize the
//! meta-val cross-entropy of the combined prediction. The optimizer returns
//! the best of {projected-gradient solution, every vertex, the warm start},
//! so the achieved risk never exceeds the best single component and never
//! exceeds the previous round's weights extended with a zero.

use serde::{Deserialize, Serialize};

use crate::nn::{check_simplex_rows, Matrix, NnError, PROB_FLOOR};

#[derive(Debug, thiserror::Error)]
pub enum SimplexError {
    #[error("weights invalid: {0}")]
    Weights(String),
    #[error("history invalid: {0}")]
    History(String),
    #[error("non-finite risk")]
    NonFinite,
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Euclidean projection onto `{w : w >= 0, sum w = 1}` by sorting and
/// thresholding.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    if v.is_empty() {
        return Vec::new();
    }
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        cumsum += ui;
        let t = (cumsum - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        } else {
            break;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

/// Per-sample probability each component assigns to the true class,
/// `a[i][k] = component_k[i][y_i]`. The combined cross-entropy only depends
/// on these values.
#[derive(Debug, Clone)]
pub struct TruthProbs {
    a: Matrix,
}

impl TruthProbs {
    pub fn new(components: &[Matrix], labels: &[usize]) -> Result<Self, SimplexError> {
        if components.is_empty() {
            return Err(SimplexError::History("no components".into()));
        }
        let n = labels.len();
        if n == 0 {
            return Err(SimplexError::History("no meta-val samples".into()));
        }
        let c = components[0].cols();
        let mut a = Matrix::zeros(n, components.len());
        for (k, comp) in components.iter().enumerate() {
            if comp.shape() != (n, c) {
                return Err(SimplexError::History(format!(
                    "component {k} is {:?}, expected ({n}, {c})",
                    comp.shape()
                )));
            }
            for (i, &y) in labels.iter().enumerate() {
                if y >= c {
                    return Err(SimplexError::History(format!("label {y} out of range")));
                }
                a.set(i, k, comp.get(i, y));
            }
        }
        Ok(Self { a })
    }

    pub fn components(&self) -> usize {
        self.a.cols()
    }

    /// `-mean_i ln(max(a_i . w, floor))`.
    pub fn risk(&self, w: &[f64]) -> f64 {
        let n = self.a.rows() as f64;
        self.a
            .row_iter()
            .map(|r| -dot(r, w).clamp(PROB_FLOOR, 1.0).ln())
            .sum::<f64>()
            / n
    }

    fn risk_and_grad(&self, w: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let n = self.a.rows() as f64;
        let mut total = 0.0;
        for r in self.a.row_iter() {
            let s = dot(r, w);
            if s > PROB_FLOOR {
                total -= s.min(1.0).ln();
                for (g, &ak) in grad.iter_mut().zip(r) {
                    *g -= ak / s;
                }
            } else {
                // clamped region: flat in w
                total -= PROB_FLOOR.ln();
            }
        }
        grad.iter_mut().for_each(|g| *g /= n);
        total / n
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_weights(omega: &[f64], k: usize) -> Result<(), SimplexError> {
    if omega.len() != k {
        return Err(SimplexError::Weights(format!(
            "{} weights for {k} components",
            omega.len()
        )));
    }
    if omega.iter().any(|&w| !w.is_finite() || w < -1e-12) {
        return Err(SimplexError::Weights("negative or non-finite weight".into()));
    }
    let s: f64 = omega.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(SimplexError::Weights(format!("weights sum to {s}")));
    }
    Ok(())
}

/// Mean meta-val cross-entropy of `sum_k omega_k * component_k` against the
/// clean labels.
pub fn empirical_risk(
    omega: &[f64],
    components: &[Matrix],
    labels: &[usize],
) -> Result<f64, SimplexError> {
    check_weights(omega, components.len())?;
    let risk = TruthProbs::new(components, labels)?.risk(omega);
    if risk.is_finite() {
        Ok(risk)
    } else {
        Err(SimplexError::NonFinite)
    }
}

/// Where the returned weights came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Solver,
    Vertex(usize),
    WarmStart,
}

impl std::fmt::Display for Provenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Solver => f.write_str("solver"),
            Self::Vertex(k) => write!(f, "vertex:{k}"),
            Self::WarmStart => f.write_str("warm_start"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplexWeights {
    pub omega: Vec<f64>,
    pub achieved_risk: f64,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_iters: usize,
    /// Stop when the projected-gradient step norm falls below this.
    pub tolerance: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 500,
            tolerance: 1e-8,
        }
    }
}

/// Full result of one weight fit, with the per-candidate diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightFit {
    pub weights: SimplexWeights,
    /// Risk of the warm start `[prev | 0]` on the current components.
    pub warm_start_risk: f64,
    /// Risk of each single component (vertex).
    pub component_risks: Vec<f64>,
    pub solver_risk: f64,
    pub solver_iters: usize,
}

/// Minimizes meta-val risk over the simplex.
///
/// `prev` is the previous round's weight vector (one entry shorter than
/// the component count, or equal length); it is padded with zeros to form
/// the warm start. With no `prev`, the warm start is vertex 0.
pub fn optimize_weights(
    components: &[Matrix],
    labels: &[usize],
    prev: Option<&[f64]>,
    config: &SolverConfig,
) -> Result<WeightFit, SimplexError> {
    let probs = TruthProbs::new(components, labels)?;
    let k = probs.components();
    let warm: Vec<f64> = match prev {
        None => unit(k, 0),
        Some(p) if p.len() <= k && !p.is_empty() => {
            let mut w = p.to_vec();
            w.resize(k, 0.0);
            check_weights(&w, k)?;
            w
        }
        Some(p) => {
            return Err(SimplexError::Weights(format!(
                "previous weights have length {}, components {k}",
                p.len()
            )))
        }
    };

    let (solved, solver_iters) = projected_gradient(&probs, &warm, config);
    let solver_risk = probs.risk(&solved);
    let warm_start_risk = probs.risk(&warm);
    let component_risks: Vec<f64> = (0..k).map(|j| probs.risk(&unit(k, j))).collect();

    let mut best = SimplexWeights {
        omega: solved,
        achieved_risk: solver_risk,
        provenance: Provenance::Solver,
    };
    let mut consider = |omega: Vec<f64>, risk: f64, provenance: Provenance| {
        if risk < best.achieved_risk || !best.achieved_risk.is_finite() {
            best = SimplexWeights {
                omega,
                achieved_risk: risk,
                provenance,
            };
        }
    };
    consider(warm.clone(), warm_start_risk, Provenance::WarmStart);
    for (j, &r) in component_risks.iter().enumerate() {
        consider(unit(k, j), r, Provenance::Vertex(j));
    }
    if !best.achieved_risk.is_finite() {
        return Err(SimplexError::NonFinite);
    }
    Ok(WeightFit {
        weights: best,
        warm_start_risk,
        component_risks,
        solver_risk,
        solver_iters,
    })
}

fn unit(k: usize, j: usize) -> Vec<f64> {
    let mut w = vec![0.0; k];
    w[j] = 1.0;
    w
}

/// Projected gradient descent with backtracking on the sufficient-decrease
/// condition `f(x+) <= f(x) + g.(x+ - x) + |x+ - x|^2 / (2 step)`.
fn projected_gradient(probs: &TruthProbs, start: &[f64], cfg: &SolverConfig) -> (Vec<f64>, usize) {
    let k = start.len();
    let mut x = project_simplex(start);
    if k == 1 {
        return (x, 0);
    }
    let mut g = vec![0.0; k];
    let mut g_new = vec![0.0; k];
    let mut f = probs.risk_and_grad(&x, &mut g);
    let mut step = 1.0;
    let mut iters = 0;
    while iters < cfg.max_iters {
        iters += 1;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - step * gi).collect();
            let cand = project_simplex(&trial);
            let diff: Vec<f64> = cand.iter().zip(&x).map(|(a, b)| a - b).collect();
            let f_cand = probs.risk_and_grad(&cand, &mut g_new);
            let model = f + dot(&g, &diff) + dot(&diff, &diff) / (2.0 * step);
            if f_cand <= model + 1e-15 {
                accepted = Some((cand, diff, f_cand));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, diff, f_cand)) = accepted else {
            break;
        };
        let moved = dot(&diff, &diff).sqrt() / step;
        x = cand;
        f = f_cand;
        std::mem::swap(&mut g, &mut g_new);
        if moved < cfg.tolerance {
            break;
        }
        step = (step * 2.0).min(1e6);
    }
    (x, iters)
}

/// `sum_k omega_k * component_k`, row by row.
pub fn combine_labels(omega: &[f64], components: &[Matrix]) -> Result<Matrix, SimplexError> {
    if omega.len() != components.len() || components.is_empty() {
        return Err(SimplexError::Weights(format!(
            "{} weights for {} components",
            omega.len(),
            components.len()
        )));
    }
    let shape = components[0].shape();
    let mut out = Matrix::zeros(shape.0, shape.1);
    for (w, comp) in omega.iter().zip(components) {
        if comp.shape() != shape {
            return Err(SimplexError::History("component shapes differ".into()));
        }
        if *w == 0.0 {
            continue;
        }
        for (o, &v) in out.as_mut_slice().iter_mut().zip(comp.as_slice()) {
            *o += w * v;
        }
    }
    Ok(out)
}

/// Train-side and meta-val-side corrections, index-aligned by round.
///
/// Component 0 is the observed one-hot label on the train side and the
/// simulated noisy posterior on the meta-val side; the latter is refreshed
/// every round.
#[derive(Debug, Clone)]
pub struct CorrectionHistory {
    train: Vec<Matrix>,
    metaval: Vec<Matrix>,
    /// Max number of non-base components kept; oldest dropped first.
    cap: Option<usize>,
}

impl CorrectionHistory {
    pub fn new(noisy_one_hot: Matrix, metaval_posterior: Matrix) -> Result<Self, SimplexError> {
        check_simplex_rows(&noisy_one_hot, "noisy one-hot")?;
        check_simplex_rows(&metaval_posterior, "meta-val posterior")?;
        Ok(Self {
            train: vec![noisy_one_hot],
            metaval: vec![metaval_posterior],
            cap: None,
        })
    }

    pub fn with_cap(mut self, cap: Option<usize>) -> Self {
        self.cap = cap.filter(|&c| c > 0);
        self
    }

    /// Number of corrections beyond the base component.
    pub fn k(&self) -> usize {
        self.train.len() - 1
    }

    pub fn len(&self) -> usize {
        self.train.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train.is_empty()
    }

    pub fn train_components(&self) -> &[Matrix] {
        &self.train
    }

    pub fn metaval_components(&self) -> &[Matrix] {
        &self.metaval
    }

    pub fn refresh_base(&mut self, metaval_posterior: Matrix) -> Result<(), SimplexError> {
        if metaval_posterior.shape() != self.metaval[0].shape() {
            return Err(SimplexError::History("refreshed posterior shape differs".into()));
        }
        check_simplex_rows(&metaval_posterior, "meta-val posterior")?;
        self.metaval[0] = metaval_posterior;
        Ok(())
    }

    /// Appends a round's corrections. Returns the index of the dropped
    /// component when the cap forced one out.
    pub fn push(&mut self, train: Matrix, metaval: Matrix) -> Result<Option<usize>, SimplexError> {
        if train.shape() != self.train[0].shape() || metaval.shape() != self.metaval[0].shape() {
            return Err(SimplexError::History("correction shape differs from base".into()));
        }
        check_simplex_rows(&train, "train correction")?;
        check_simplex_rows(&metaval, "meta-val correction")?;
        self.train.push(train);
        self.metaval.push(metaval);
        if let Some(cap) = self.cap {
            if self.k() > cap {
                self.train.remove(1);
                self.metaval.remove(1);
                return Ok(Some(1));
            }
        }
        Ok(None)
    }
}

/// Drops entry `idx` from a weight vector and re-projects onto the simplex.
pub fn drop_weight(omega: &[f64], idx: usize) -> Vec<f64> {
    let mut w = omega.to_vec();
    if idx < w.len() {
        w.remove(idx);
    }
    let s: f64 = w.iter().sum();
    if s > 0.0 {
        w.iter_mut().for_each(|v| *v /= s);
        w
    } else {
        project_simplex(&w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[Vec<f64>]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn projection_examples() {
        let p = project_simplex(&[0.6, 0.6]);
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
        assert_eq!(project_simplex(&[0.2, 0.3, 0.5]), vec![0.2, 0.3, 0.5]);
        let p = project_simplex(&[1.2, -0.2]);
        assert_eq!(p, vec![1.0, 0.0]);
    }

    #[test]
    fn single_component_risk() {
        let comp = m(&[vec![0.7, 0.3], vec![0.4, 0.6]]);
        let r = empirical_risk(&[1.0], &[comp], &[0, 1]).unwrap();
        let want = -(0.7f64.ln() + 0.6f64.ln()) / 2.0;
        assert!((r - want).abs() < 1e-15);
    }

    #[test]
    fn perfect_component_risk() {
        let truth = Matrix::one_hot(&[1, 0, 2], 3);
        let other = m(&[vec![1.0 / 3.0; 3], vec![1.0 / 3.0; 3], vec![1.0 / 3.0; 3]]);
        let r = empirical_risk(&[0.0, 1.0], &[other, truth], &[1, 0, 2]).unwrap();
        assert!(r <= 1e-12);
    }

    #[test]
    fn mirrored_pair() {
        let c0 = m(&[vec![0.9, 0.1], vec![0.1, 0.9]]);
        let c1 = m(&[vec![0.1, 0.9], vec![0.9, 0.1]]);
        let r = empirical_risk(&[0.5, 0.5], &[c0.clone(), c1.clone()], &[0, 1]).unwrap();
        assert!((r - std::f64::consts::LN_2).abs() < 1e-12);
        // c0 is already right on both samples here, so the optimum is its vertex
        let fit = optimize_weights(&[c0, c1], &[0, 1], None, &SolverConfig::default()).unwrap();
        assert_eq!(fit.weights.omega, vec![1.0, 0.0]);

        // each component favours one class everywhere: symmetry pins w = 1/2
        let a = m(&[vec![0.9, 0.1], vec![0.9, 0.1]]);
        let b = m(&[vec![0.1, 0.9], vec![0.1, 0.9]]);
        let fit = optimize_weights(&[a, b], &[0, 1], None, &SolverConfig::default()).unwrap();
        assert!((fit.weights.omega[0] - 0.5).abs() < 1e-6);
        assert!((fit.weights.achieved_risk - std::f64::consts::LN_2).abs() < 1e-9);
    }

    #[test]
    fn boundary_optimum() {
        let comps = [m(&[vec![0.8, 0.2]]), m(&[vec![0.2, 0.8]])];
        let fit = optimize_weights(&comps, &[0], None, &SolverConfig::default()).unwrap();
        assert_eq!(fit.weights.omega, vec![1.0, 0.0]);
        assert!((fit.weights.achieved_risk - (-(0.8f64).ln())).abs() < 1e-12);
    }

    #[test]
    fn risk_rejects_off_simplex_weights() {
        let comps = [m(&[vec![0.8, 0.2]]), m(&[vec![0.2, 0.8]])];
        assert!(empirical_risk(&[0.7, 0.7], &comps, &[0]).is_err());
        assert!(empirical_risk(&[1.0], &comps, &[0]).is_err());
    }

    #[test]
    fn combine_examples() {
        let onehot = Matrix::one_hot(&[0, 1], 2);
        let other = Matrix::one_hot(&[1, 0], 2);
        let comps = [onehot.clone(), other];
        assert_eq!(combine_labels(&[1.0, 0.0], &comps).unwrap(), onehot);
        let half = combine_labels(&[0.5, 0.5], &comps).unwrap();
        assert!(half.as_slice().iter().all(|&v| v == 0.5));
        let same = [onehot.clone(), onehot.clone(), onehot.clone()];
        assert_eq!(combine_labels(&[0.2, 0.3, 0.5], &same).unwrap(), onehot);
        assert!(combine_labels(&[1.0], &comps).is_err());
    }

    #[test]
    fn warm_start_padding_and_length_check() {
        let comps = [
            m(&[vec![0.6, 0.4]]),
            m(&[vec![0.5, 0.5]]),
            m(&[vec![0.3, 0.7]]),
        ];
        let fit = optimize_weights(&comps, &[0], Some(&[0.5, 0.5]), &SolverConfig::default()).unwrap();
        assert!(fit.weights.achieved_risk <= fit.warm_start_risk);
        assert!((fit.warm_start_risk - (-(0.55f64).ln())).abs() < 1e-12);
        assert!(optimize_weights(&comps, &[0], Some(&[0.25; 4]), &SolverConfig::default()).is_err());
    }

    #[test]
    fn history_cap_drops_oldest() {
        let base = Matrix::one_hot(&[0, 1], 2);
        let post = m(&[vec![0.6, 0.4]]);
        let mut h = CorrectionHistory::new(base.clone(), post.clone())
            .unwrap()
            .with_cap(Some(2));
        for _ in 0..2 {
            assert_eq!(h.push(base.clone(), post.clone()).unwrap(), None);
        }
        assert_eq!(h.push(base.clone(), post.clone()).unwrap(), Some(1));
        assert_eq!(h.k(), 2);
        let w = drop_weight(&[0.2, 0.2, 0.3, 0.3], 1);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((w[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn history_rejects_bad_rows() {
        let base = Matrix::one_hot(&[0, 1], 2);
        let post = m(&[vec![0.6, 0.4]]);
        let mut h = CorrectionHistory::new(base, post).unwrap();
        assert!(h.push(m(&[vec![0.6, 0.6], vec![0.5, 0.5]]), m(&[vec![0.5, 0.5]])).is_err());
        assert!(h.refresh_base(m(&[vec![0.5, 0.5], vec![0.5, 0.5]])).is_err());
    }
}
