use super::matrix::Matrix;
use super::NnError;

/// Lower clamp applied to probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Allowed deviation of a row sum from 1.
pub const SIMPLEX_TOL: f64 = 1e-6;

/// Checks that every row is a probability vector within [`SIMPLEX_TOL`].
pub fn check_simplex_rows(m: &Matrix, what: &str) -> Result<(), NnError> {
    for (i, row) in m.row_iter().enumerate() {
        let mut sum = 0.0;
        for &v in row {
            if !v.is_finite() || v < -SIMPLEX_TOL {
                return Err(NnError::Validation(format!(
                    "{what} row {i} has invalid entry {v}"
                )));
            }
            sum += v;
        }
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(NnError::Validation(format!(
                "{what} row {i} sums to {sum}, not 1"
            )));
        }
    }
    Ok(())
}

/// Mean over rows of `-sum_j target_j * ln(max(pred_j, PROB_FLOOR))`.
pub fn cross_entropy(pred: &Matrix, target: &Matrix) -> Result<f64, NnError> {
    if pred.shape() != target.shape() {
        return Err(NnError::Shape(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    if pred.rows() == 0 {
        return Err(NnError::Validation("cross-entropy of an empty batch".into()));
    }
    check_simplex_rows(pred, "prediction")?;
    check_simplex_rows(target, "target")?;
    let total: f64 = pred
        .row_iter()
        .zip(target.row_iter())
        .map(|(p, t)| row_cross_entropy(p, t))
        .sum();
    Ok(total / pred.rows() as f64)
}

#[inline]
pub(crate) fn row_cross_entropy(p: &[f64], t: &[f64]) -> f64 {
    let mut s = 0.0;
    for (&pj, &tj) in p.iter().zip(t) {
        if tj != 0.0 {
            s -= tj * pj.clamp(PROB_FLOOR, 1.0).ln();
        }
    }
    s
}

/// Gradient of `scale * cross_entropy(softmax(logits), target)` with respect
/// to the logits: `scale * (pred - target) / batch`.
pub fn softmax_cross_entropy_grad(pred: &Matrix, target: &Matrix, scale: f64) -> Matrix {
    let n = pred.rows().max(1) as f64;
    let mut g = pred.clone();
    for (gv, &tv) in g.as_mut_slice().iter_mut().zip(target.as_slice()) {
        *gv = scale * (*gv - tv) / n;
    }
    g
}
