//! End-to-end orchestration of the closed-loop self-training schedule.

mod config;

use std::io::Write;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::{ConfigError, Method, RunConfig};

use crate::correction::{train_correction, CorrectionNet};
use crate::data::{
    load_idx_pair, make_blobs, split_noisy_meta, split_test, BlobSpec, DataError, LabeledData,
    MetaSet, NoisyDataset, Standardizer,
};
use crate::model::TwoHeadModel;
use crate::nn::{argmax, Matrix, NnError, Sgd};
use crate::noise::{NoiseError, NoiseSpec};
use crate::simplex::{
    combine_labels, drop_weight, empirical_risk, optimize_weights, CorrectionHistory, Provenance,
    SimplexError,
};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error("numeric failure at epoch {epoch}: {source}")]
    Numeric { epoch: usize, source: NnError },
    #[error("weight optimization failed at epoch {epoch}: {source}")]
    Simplex { epoch: usize, source: SimplexError },
    #[error("dataset mismatch: {0}")]
    Mismatch(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl RunError {
    /// Epoch of a numeric failure, if this is one.
    pub fn failed_epoch(&self) -> Option<usize> {
        match self {
            Self::Numeric { epoch, .. } | Self::Simplex { epoch, .. } => Some(*epoch),
            _ => None,
        }
    }
}

/// The three partitions a run trains and evaluates on.
#[derive(Debug, Clone)]
pub struct Datasets {
    pub noisy: NoisyDataset,
    pub meta: MetaSet,
    pub test: LabeledData,
}

/// Builds standardized, partitioned and corrupted data from a config.
pub fn prepare_data(config: &RunConfig) -> Result<Datasets, RunError> {
    config.validate()?;
    let (pool, test) = if config.uses_idx() {
        let all = load_idx_pair(&config.idx_images, &config.idx_labels)?;
        split_test(&all, config.test_fraction, config.data_seed)?
    } else {
        let per_class = config.n_per_class + config.test_per_class;
        let spec = BlobSpec {
            classes: config.classes,
            dim: config.dim,
            n_per_class: per_class,
            spread: config.spread,
            separation: config.separation,
        };
        let all = make_blobs(&spec, config.data_seed)?;
        let frac = config.test_per_class as f64 / per_class as f64;
        split_test(&all, frac, config.data_seed.wrapping_add(1))?
    };
    let scaler = Standardizer::fit(&pool.features);
    let pool = LabeledData {
        features: scaler.transform(&pool.features),
        ..pool
    };
    let test = LabeledData {
        features: scaler.transform(&test.features),
        ..test
    };
    let (mut noisy, meta) = split_noisy_meta(
        &pool,
        config.meta_fraction,
        config.meta_train_ratio,
        config.data_seed.wrapping_add(2),
    )?;
    let spec = NoiseSpec {
        kind: config.noise,
        eta: config.eta,
        mapping: (!config.noise_mapping.is_empty()).then(|| config.noise_mapping.clone()),
        instance_std: config.instance_std,
        seed: config.noise_seed,
    };
    let truth = noisy.true_labels.clone().expect("split keeps ground truth");
    noisy.noisy_labels = spec.corrupt(&noisy.features, &truth, noisy.num_classes)?;
    Ok(Datasets { noisy, meta, test })
}

/// One row of `metrics.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub test_accuracy: f64,
    /// Argmax of the current training targets against ground truth.
    pub corrected_label_accuracy: Option<f64>,
    /// Latest combined meta-val risk; absent before the first round.
    pub metaval_combined_risk: Option<f64>,
    /// Corrections in the history.
    pub k: usize,
    pub omega: Option<Vec<f64>>,
}

pub const METRICS_HEADER: &str = "epoch,train_loss,test_acc,label_acc,metaval_risk,K";

impl IterationMetrics {
    pub fn csv_line(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{}",
            self.epoch,
            self.train_loss,
            self.test_accuracy,
            opt(self.corrected_label_accuracy),
            opt(self.metaval_combined_risk),
            self.k
        )
    }
}

/// One correction round, as serialized into `omega.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// 1-based round index.
    pub iteration: usize,
    pub epoch: usize,
    pub omega: Vec<f64>,
    pub achieved_risk: f64,
    pub provenance: Provenance,
    /// Previous weights (zero-padded) evaluated on this round's components;
    /// absent when no weights are fitted.
    pub warm_start_risk: Option<f64>,
    /// Meta-val risk of each single component.
    pub component_risks: Vec<f64>,
    pub corrector_best_epoch: usize,
    pub corrector_val_loss: f64,
    /// Meta-val argmax accuracy of the simulated posterior and of the new correction.
    pub posterior_val_accuracy: f64,
    pub correction_val_accuracy: f64,
}

/// Wall-clock split of a run.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PhaseTiming {
    pub training: Duration,
    pub evaluation: Duration,
    /// Snapshot, corrector fit, application, weight fit and label update.
    pub correction: Duration,
    pub total: Duration,
}

impl PhaseTiming {
    pub fn correction_share(&self) -> f64 {
        self.correction.as_secs_f64() / self.total.as_secs_f64().max(1e-12)
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub metrics: Vec<IterationMetrics>,
    pub rounds: Vec<RoundRecord>,
    pub model: TwoHeadModel,
    pub corrected_labels: Matrix,
    pub last_corrector: Option<CorrectionNet>,
    pub initial_label_accuracy: Option<f64>,
    pub timing: PhaseTiming,
}

impl RunResult {
    pub fn best_test_accuracy(&self) -> f64 {
        self.metrics
            .iter()
            .map(|m| m.test_accuracy)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn last_test_accuracy(&self) -> f64 {
        self.metrics.last().map_or(f64::NAN, |m| m.test_accuracy)
    }

    pub fn final_label_accuracy(&self) -> Option<f64> {
        self.metrics.last().and_then(|m| m.corrected_label_accuracy)
    }
}

/// Receives progress as the run goes.
pub trait RunObserver {
    fn on_epoch(&mut self, _metrics: &IterationMetrics) -> std::io::Result<()> {
        Ok(())
    }
    fn on_round(&mut self, _round: &RoundRecord) -> std::io::Result<()> {
        Ok(())
    }
}

impl RunObserver for () {}

/// Streams metrics rows to a writer, flushing after every line.
pub struct CsvMetricsWriter<W: Write> {
    out: W,
}

impl<W: Write> CsvMetricsWriter<W> {
    pub fn new(mut out: W) -> std::io::Result<Self> {
        writeln!(out, "{METRICS_HEADER}")?;
        out.flush()?;
        Ok(Self { out })
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl<W: Write> RunObserver for CsvMetricsWriter<W> {
    fn on_epoch(&mut self, m: &IterationMetrics) -> std::io::Result<()> {
        writeln!(self.out, "{}", m.csv_line())?;
        self.out.flush()
    }
}

/// Per-round records as a pretty-printed JSON array.
pub fn omega_json(rounds: &[RoundRecord]) -> serde_json::Result<String> {
    serde_json::to_string_pretty(rounds)
}

pub fn parse_omega_json(text: &str) -> serde_json::Result<Vec<RoundRecord>> {
    serde_json::from_str(text)
}

pub fn metrics_csv(metrics: &[IterationMetrics]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for m in metrics {
        s.push_str(&m.csv_line());
        s.push('\n');
    }
    s
}

/// Fraction of rows whose argmax (lowest index on ties) matches `truth`.
pub fn label_accuracy(labels: &Matrix, truth: &[usize]) -> f64 {
    let hits = labels
        .row_iter()
        .zip(truth)
        .filter(|(row, &y)| argmax(row) == y)
        .count();
    hits as f64 / truth.len().max(1) as f64
}

/// Clean-head accuracy on a held-out set.
pub fn evaluate(model: &TwoHeadModel, test: &LabeledData) -> Result<f64, NnError> {
    Ok(label_accuracy(&model.clean_probs(&test.features)?, &test.labels))
}

fn stream_seed(base: u64, stream: u64) -> u64 {
    base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Runs the configured method (`config.method`) on prepared data.
pub fn run_experiment(
    config: &RunConfig,
    data: &Datasets,
    observer: &mut dyn RunObserver,
) -> Result<RunResult, RunError> {
    config.validate()?;
    let started = Instant::now();
    let mut timing = PhaseTiming::default();
    let (noisy, meta, test) = (&data.noisy, &data.meta, &data.test);
    let c = noisy.num_classes;
    if meta.num_classes != c || test.num_classes != c {
        return Err(RunError::Mismatch("class counts differ across partitions".into()));
    }
    if meta.features.cols() != noisy.dim() || test.dim() != noisy.dim() {
        return Err(RunError::Mismatch("feature widths differ across partitions".into()));
    }
    let numeric = |epoch: usize| move |source: NnError| RunError::Numeric { epoch, source };

    let mut init_rng = ChaCha8Rng::seed_from_u64(config.model_seed);
    let mut model = TwoHeadModel::new(noisy.dim(), c, &config.hidden, &mut init_rng).map_err(numeric(0))?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(stream_seed(config.model_seed, 1));
    let mut opt = Sgd::new(config.sgd()).map_err(numeric(0))?;

    let noisy_one_hot = Matrix::one_hot(&noisy.noisy_labels, c);
    let mut targets = noisy_one_hot.clone();
    let truth = noisy.true_labels.as_deref();
    let initial_label_accuracy = truth.map(|t| label_accuracy(&targets, t));
    let lambda = match config.method {
        Method::Ours => config.lambda,
        Method::Ce => 0.0,
    };

    let val_labels = meta.val_labels();
    let mut history: Option<CorrectionHistory> = None;
    let mut prev_omega: Option<Vec<f64>> = None;
    let mut last_risk = None;
    let mut last_omega = None;
    let mut last_corrector = None;
    let mut metrics = Vec::with_capacity(config.epochs_total);
    let mut rounds = Vec::new();

    for epoch in 1..=config.epochs_total {
        let t0 = Instant::now();
        let train_loss = model
            .train_epoch(
                &noisy.features,
                &targets,
                &noisy_one_hot,
                lambda,
                &mut opt,
                epoch - 1,
                config.batch_size,
                &mut shuffle_rng,
            )
            .map_err(numeric(epoch))?;
        timing.training += t0.elapsed();

        if config.is_correction_epoch(epoch) {
            let t1 = Instant::now();
            let iteration = rounds.len() + 1;
            let snapshot = model
                .snapshot(&noisy.features, &meta.features, iteration)
                .map_err(numeric(epoch))?;
            let posterior_val = snapshot.noisy_posterior_meta.select_rows(&meta.val_idx);

            let hist = match history.as_mut() {
                Some(h) => {
                    h.refresh_base(posterior_val.clone())
                        .map_err(|source| RunError::Simplex { epoch, source })?;
                    h
                }
                None => history.insert(
                    CorrectionHistory::new(noisy_one_hot.clone(), posterior_val.clone())
                        .map_err(|source| RunError::Simplex { epoch, source })?
                        .with_cap((config.history_cap > 0).then_some(config.history_cap)),
                ),
            };

            let seed = stream_seed(config.corrector_seed, iteration as u64);
            let trained = train_correction(meta, &snapshot, &config.corrector(), seed)
                .map_err(numeric(epoch))?;
            let corrector = trained.corrector;
            let modality = config.modality;
            let train_corr = corrector
                .apply(&noisy_one_hot, modality.aux_train(&snapshot))
                .map_err(numeric(epoch))?;
            let aux_val = modality.aux_meta(&snapshot).select_rows(&meta.val_idx);
            let val_corr = corrector
                .apply(&posterior_val, &aux_val)
                .map_err(numeric(epoch))?;
            let posterior_val_accuracy = label_accuracy(&posterior_val, &val_labels);
            let correction_val_accuracy = label_accuracy(&val_corr, &val_labels);

            let dropped = hist
                .push(train_corr.clone(), val_corr.clone())
                .map_err(|source| RunError::Simplex { epoch, source })?;
            if let (Some(idx), Some(p)) = (dropped, prev_omega.as_mut()) {
                *p = drop_weight(p, idx);
            }

            let simplex_err = |source| RunError::Simplex { epoch, source };
            let record = if config.no_convex_combination {
                let k = hist.len();
                let mut omega = vec![0.0; k];
                omega[k - 1] = 1.0;
                let comps = hist.metaval_components();
                let risk = empirical_risk(&omega, comps, &val_labels).map_err(simplex_err)?;
                let component_risks = (0..k)
                    .map(|j| {
                        let mut e = vec![0.0; k];
                        e[j] = 1.0;
                        empirical_risk(&e, comps, &val_labels)
                    })
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(simplex_err)?;
                targets = train_corr;
                RoundRecord {
                    iteration,
                    epoch,
                    omega,
                    achieved_risk: risk,
                    provenance: Provenance::Vertex(k - 1),
                    warm_start_risk: None,
                    component_risks,
                    corrector_best_epoch: trained.best_epoch,
                    corrector_val_loss: trained.best_val_loss,
                    posterior_val_accuracy,
                    correction_val_accuracy,
                }
            } else {
                let fit = optimize_weights(
                    hist.metaval_components(),
                    &val_labels,
                    prev_omega.as_deref(),
                    &config.solver(),
                )
                .map_err(simplex_err)?;
                targets = combine_labels(&fit.weights.omega, hist.train_components())
                    .map_err(simplex_err)?;
                RoundRecord {
                    iteration,
                    epoch,
                    omega: fit.weights.omega,
                    achieved_risk: fit.weights.achieved_risk,
                    provenance: fit.weights.provenance,
                    warm_start_risk: Some(fit.warm_start_risk),
                    component_risks: fit.component_risks,
                    corrector_best_epoch: trained.best_epoch,
                    corrector_val_loss: trained.best_val_loss,
                    posterior_val_accuracy,
                    correction_val_accuracy,
                }
            };
            prev_omega = Some(record.omega.clone());
            last_risk = Some(record.achieved_risk);
            last_omega = Some(record.omega.clone());
            last_corrector = Some(corrector);
            timing.correction += t1.elapsed();
            observer.on_round(&record)?;
            rounds.push(record);
        }

        let t2 = Instant::now();
        let test_accuracy = evaluate(&model, test).map_err(numeric(epoch))?;
        let corrected_label_accuracy = truth.map(|t| label_accuracy(&targets, t));
        timing.evaluation += t2.elapsed();

        let row = IterationMetrics {
            epoch,
            train_loss,
            test_accuracy,
            corrected_label_accuracy,
            metaval_combined_risk: last_risk,
            k: history.as_ref().map_or(0, CorrectionHistory::k),
            omega: last_omega.clone(),
        };
        observer.on_epoch(&row)?;
        metrics.push(row);
    }
    timing.total = started.elapsed();

    Ok(RunResult {
        metrics,
        rounds,
        model,
        corrected_labels: targets,
        last_corrector,
        initial_label_accuracy,
        timing,
    })
}

/// The closed-loop method regardless of `config.method`.
pub fn run_algorithm1(
    config: &RunConfig,
    data: &Datasets,
    observer: &mut dyn RunObserver,
) -> Result<RunResult, RunError> {
    let cfg = RunConfig {
        method: Method::Ours,
        ..config.clone()
    };
    run_experiment(&cfg, data, observer)
}

/// Cross-entropy baseline: no corrections, noisy head unweighted.
pub fn run_baseline_ce(
    config: &RunConfig,
    data: &Datasets,
    observer: &mut dyn RunObserver,
) -> Result<RunResult, RunError> {
    let cfg = RunConfig {
        method: Method::Ce,
        ..config.clone()
    };
    run_experiment(&cfg, data, observer)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_accuracy_examples() {
        let truth = vec![0, 2, 1, 1];
        assert_eq!(label_accuracy(&Matrix::one_hot(&truth, 3), &truth), 1.0);
        let uniform = Matrix::filled(4, 3, 1.0 / 3.0);
        assert_eq!(label_accuracy(&uniform, &truth), 0.25);
    }

    #[test]
    fn csv_line_layout() {
        let m = IterationMetrics {
            epoch: 3,
            train_loss: 0.5,
            test_accuracy: 0.75,
            corrected_label_accuracy: Some(0.7),
            metaval_combined_risk: None,
            k: 0,
            omega: None,
        };
        assert_eq!(m.csv_line(), "3,0.5,0.75,0.7,,0");
        assert!(metrics_csv(&[m]).starts_with(METRICS_HEADER));
    }
}
