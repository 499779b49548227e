//! Synthetic datasets, noisy/meta partitioning, IDX ingestion and CSV export.

mod idx;

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::nn::Matrix;

pub use idx::{load_idx, load_idx_pair, parse_idx, write_idx, IdxArray, IdxError};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("stratification error: {0}")]
    Stratification(String),
    #[error(transparent)]
    Idx(#[from] IdxError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Features with one class id per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledData {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl LabeledData {
    pub fn new(features: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self, DataError> {
        if features.rows() != labels.len() {
            return Err(DataError::Invalid(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if features.rows() == 0 {
            return Err(DataError::Invalid("dataset is empty".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(DataError::Invalid(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        if !features.is_finite() {
            return Err(DataError::Invalid("non-finite feature value".into()));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        class_counts(&self.labels, self.num_classes)
    }
}

/// Training pool with observed (possibly corrupted) labels.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyDataset {
    pub features: Matrix,
    /// Ground truth, known only for synthetic corruption runs.
    pub true_labels: Option<Vec<usize>>,
    pub noisy_labels: Vec<usize>,
    pub num_classes: usize,
}

impl NoisyDataset {
    pub fn len(&self) -> usize {
        self.noisy_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.noisy_labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Fraction of observed labels that differ from the ground truth.
    pub fn noise_rate(&self) -> Option<f64> {
        let truth = self.true_labels.as_ref()?;
        let flips = truth
            .iter()
            .zip(&self.noisy_labels)
            .filter(|(a, b)| a != b)
            .count();
        Some(flips as f64 / truth.len() as f64)
    }
}

/// Small trusted subset with its own train/validation split.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaSet {
    pub features: Matrix,
    pub clean_labels: Vec<usize>,
    pub train_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
    pub num_classes: usize,
}

impl MetaSet {
    pub fn len(&self) -> usize {
        self.clean_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clean_labels.is_empty()
    }

    pub fn train_labels(&self) -> Vec<usize> {
        self.train_idx.iter().map(|&i| self.clean_labels[i]).collect()
    }

    pub fn val_labels(&self) -> Vec<usize> {
        self.val_idx.iter().map(|&i| self.clean_labels[i]).collect()
    }
}

/// Gaussian blob generator settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlobSpec {
    pub classes: usize,
    pub dim: usize,
    pub n_per_class: usize,
    /// Standard deviation of every coordinate around the class mean.
    pub spread: f64,
    /// Distance of every class mean from the origin.
    pub separation: f64,
}

impl BlobSpec {
    pub fn new(classes: usize, dim: usize, n_per_class: usize, spread: f64) -> Self {
        Self {
            classes,
            dim,
            n_per_class,
            spread,
            separation: 4.0,
        }
    }

    /// Class means. With `classes <= dim` these are `separation * e_k`;
    /// otherwise random directions scaled to `separation`.
    pub fn means(&self, seed: u64) -> Matrix {
        let mut means = Matrix::zeros(self.classes, self.dim);
        if self.classes <= self.dim {
            for k in 0..self.classes {
                means.set(k, k, self.separation);
            }
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d65_616e_7321);
            for k in 0..self.classes {
                let row = means.row_mut(k);
                for v in row.iter_mut() {
                    *v = StandardNormal.sample(&mut rng);
                }
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                row.iter_mut().for_each(|v| *v *= self.separation / norm);
            }
        }
        means
    }
}

/// Isotropic Gaussian blobs, `n_per_class` samples per class, ordered by class.
pub fn make_blobs(spec: &BlobSpec, seed: u64) -> Result<LabeledData, DataError> {
    if spec.classes < 2 || spec.dim < 2 {
        return Err(DataError::Invalid("blobs need c >= 2 and d >= 2".into()));
    }
    if !(spec.spread > 0.0 && spec.spread.is_finite()) {
        return Err(DataError::Invalid("spread must be positive".into()));
    }
    if spec.n_per_class == 0 {
        return Err(DataError::Invalid("n_per_class must be positive".into()));
    }
    let means = spec.means(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.classes * spec.n_per_class;
    let mut x = Matrix::zeros(n, spec.dim);
    let mut labels = Vec::with_capacity(n);
    for k in 0..spec.classes {
        for i in 0..spec.n_per_class {
            let row = x.row_mut(k * spec.n_per_class + i);
            for (j, v) in row.iter_mut().enumerate() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v = means.get(k, j) + spec.spread * z;
            }
            labels.push(k);
        }
    }
    LabeledData::new(x, labels, spec.classes)
}

/// Per-column mean and standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &Matrix) -> Self {
        let (n, d) = x.shape();
        let mut mean = vec![0.0; d];
        for row in x.row_iter() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n.max(1) as f64);
        let mut var = vec![0.0; d];
        for row in x.row_iter() {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        // constant columns are left unscaled
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n.max(1) as f64).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn transform(&self, x: &Matrix) -> Matrix {
        let mut out = x.clone();
        for r in 0..out.rows() {
            for ((v, m), s) in out.row_mut(r).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        out
    }
}

/// Shuffled, class-stratified split off a test set. Returns `(rest, test)`.
pub fn split_test(
    data: &LabeledData,
    test_fraction: f64,
    seed: u64,
) -> Result<(LabeledData, LabeledData), DataError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DataError::Invalid("test_fraction must lie in (0, 1)".into()));
    }
    let m = (data.len() as f64 * test_fraction).round() as usize;
    let (test_idx, rest_idx) = stratified_pick(&data.labels, data.num_classes, m, seed)?;
    Ok((data.subset(&rest_idx), data.subset(&test_idx)))
}

/// Moves a class-stratified clean subset out of the training pool.
///
/// `meta_fraction` of the samples (rounded) become the meta set, allotted
/// evenly across classes; each class's meta samples are split into meta-train
/// and meta-val by `meta_train_ratio`. The remaining samples form the noisy
/// pool, whose observed labels start out equal to the clean ones.
pub fn split_noisy_meta(
    data: &LabeledData,
    meta_fraction: f64,
    meta_train_ratio: f64,
    seed: u64,
) -> Result<(NoisyDataset, MetaSet), DataError> {
    if !(meta_fraction > 0.0 && meta_fraction < 1.0) {
        return Err(DataError::Invalid("meta_fraction must lie in (0, 1)".into()));
    }
    if !(meta_train_ratio > 0.0 && meta_train_ratio < 1.0) {
        return Err(DataError::Invalid(
            "meta_train_ratio must lie in (0, 1)".into(),
        ));
    }
    let c = data.num_classes;
    let m = (data.len() as f64 * meta_fraction).round() as usize;
    let (meta_idx, noisy_idx) = stratified_pick(&data.labels, c, m, seed)?;

    let meta_labels: Vec<usize> = meta_idx.iter().map(|&i| data.labels[i]).collect();
    let mut train_idx = Vec::new();
    let mut val_idx = Vec::new();
    for k in 0..c {
        // meta_idx is already shuffled within each class
        let members: Vec<usize> = (0..meta_labels.len())
            .filter(|&i| meta_labels[i] == k)
            .collect();
        if members.len() < 2 {
            return Err(DataError::Stratification(format!(
                "class {k} has {} meta samples; cannot populate both meta-train and meta-val",
                members.len()
            )));
        }
        let n_train = ((members.len() as f64 * meta_train_ratio).round() as usize)
            .clamp(1, members.len() - 1);
        train_idx.extend_from_slice(&members[..n_train]);
        val_idx.extend_from_slice(&members[n_train..]);
    }
    train_idx.sort_unstable();
    val_idx.sort_unstable();

    let noisy = data.subset(&noisy_idx);
    let meta = data.subset(&meta_idx);
    Ok((
        NoisyDataset {
            features: noisy.features,
            true_labels: Some(noisy.labels.clone()),
            noisy_labels: noisy.labels,
            num_classes: c,
        },
        MetaSet {
            features: meta.features,
            clean_labels: meta.labels,
            train_idx,
            val_idx,
            num_classes: c,
        },
    ))
}

/// Picks `m` indices with per-class counts as equal as possible (remainder to
/// the lowest classes). Returns `(picked, rest)`, both sorted by class then
/// by shuffled position within the class.
fn stratified_pick(
    labels: &[usize],
    c: usize,
    m: usize,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); c];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y].push(i);
    }
    let mut picked = Vec::with_capacity(m);
    let mut rest = Vec::with_capacity(labels.len() - m.min(labels.len()));
    for (k, members) in by_class.iter_mut().enumerate() {
        let quota = m / c + usize::from(k < m % c);
        if members.len() < quota || members.is_empty() {
            return Err(DataError::Stratification(format!(
                "class {k} has {} samples but needs {quota} for the subset",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        picked.extend_from_slice(&members[..quota]);
        rest.extend_from_slice(&members[quota..]);
    }
    rest.sort_unstable();
    Ok((picked, rest))
}

pub fn class_counts(labels: &[usize], c: usize) -> Vec<usize> {
    let mut counts = vec![0; c];
    for &y in labels {
        counts[y] += 1;
    }
    counts
}

/// Writes `f0,...,f{d-1},<label columns...>` with a header row.
pub fn write_csv<W: Write>(
    w: &mut W,
    features: &Matrix,
    label_columns: &[(&str, &[usize])],
) -> std::io::Result<()> {
    let d = features.cols();
    let mut header: Vec<String> = (0..d).map(|j| format!("f{j}")).collect();
    header.extend(label_columns.iter().map(|(name, _)| name.to_string()));
    writeln!(w, "{}", header.join(","))?;
    for r in 0..features.rows() {
        let mut fields: Vec<String> = features.row(r).iter().map(|v| v.to_string()).collect();
        fields.extend(label_columns.iter().map(|(_, col)| col[r].to_string()));
        writeln!(w, "{}", fields.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_are_balanced_and_deterministic() {
        let spec = BlobSpec::new(3, 5, 40, 0.5);
        let a = make_blobs(&spec, 7).unwrap();
        let b = make_blobs(&spec, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.class_counts(), vec![40, 40, 40]);
        assert_ne!(a, make_blobs(&spec, 8).unwrap());
    }

    #[test]
    fn blobs_validate() {
        assert!(make_blobs(&BlobSpec::new(1, 5, 4, 1.0), 0).is_err());
        assert!(make_blobs(&BlobSpec::new(2, 1, 4, 1.0), 0).is_err());
        assert!(make_blobs(&BlobSpec::new(2, 2, 4, 0.0), 0).is_err());
    }

    #[test]
    fn tiny_spread_collapses_onto_means() {
        let spec = BlobSpec::new(4, 6, 10, 1e-12);
        let data = make_blobs(&spec, 3).unwrap();
        let means = spec.means(3);
        for (row, &y) in data.features.row_iter().zip(&data.labels) {
            let nearest = (0..4)
                .min_by(|&a, &b| {
                    let da: f64 = row.iter().zip(means.row(a)).map(|(x, m)| (x - m).powi(2)).sum();
                    let db: f64 = row.iter().zip(means.row(b)).map(|(x, m)| (x - m).powi(2)).sum();
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap();
            assert_eq!(nearest, y);
            for (x, m) in row.iter().zip(means.row(y)) {
                assert!((x - m).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn many_classes_in_low_dim() {
        let spec = BlobSpec::new(6, 2, 5, 1.0);
        let means = spec.means(1);
        for k in 0..6 {
            let n: f64 = means.row(k).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 4.0).abs() < 1e-9);
        }
    }

    #[test]
    fn standardizer_zero_mean_unit_var() {
        let data = make_blobs(&BlobSpec::new(2, 3, 50, 2.0), 1).unwrap();
        let s = Standardizer::fit(&data.features);
        let z = s.transform(&data.features);
        let again = Standardizer::fit(&z);
        for (&m, &sd) in again.mean.iter().zip(&again.std) {
            assert!(m.abs() < 1e-12);
            assert!((sd - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn desk_scale_split_counts() {
        let data = make_blobs(&BlobSpec::new(4, 20, 1250, 1.0), 11).unwrap();
        let (noisy, meta) = split_noisy_meta(&data, 0.1, 0.8, 5).unwrap();
        assert_eq!(noisy.len(), 4500);
        assert_eq!(meta.len(), 500);
        assert_eq!(meta.train_idx.len(), 400);
        assert_eq!(meta.val_idx.len(), 100);
        assert_eq!(noisy.noise_rate(), Some(0.0));
    }

    #[test]
    fn split_rejects_starved_class() {
        let data = make_blobs(&BlobSpec::new(4, 4, 10, 1.0), 0).unwrap();
        // 4 meta samples -> one per class, cannot fill both meta halves
        let err = split_noisy_meta(&data, 0.1, 0.8, 0).unwrap_err();
        assert!(matches!(err, DataError::Stratification(_)));
        assert!(split_noisy_meta(&data, 0.0, 0.8, 0).is_err());
    }

    #[test]
    fn csv_header_and_rows() {
        let x = Matrix::from_rows(&[vec![1.5, -2.0], vec![0.0, 3.0]]).unwrap();
        let mut out = Vec::new();
        write_csv(&mut out, &x, &[("label", &[1, 0])]).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "f0,f1,label\n1.5,-2,1\n0,3,0\n");
    }
}
