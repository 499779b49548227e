//! Neural label corrector: maps a noisy-label posterior plus an auxiliary
//! representation of the sample to a corrected label distribution.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::MetaSet;
use crate::model::FeatureSnapshot;
use crate::nn::{
    checkpoint, cross_entropy, loss_and_backward, Activation, LayerSpec, Matrix, Mlp, NnError,
    Sgd, SgdConfig,
};

/// What the corrector sees next to the noisy posterior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionInputModality {
    /// Extractor output `z`.
    #[default]
    IntermediateFeatures,
    /// Pre-softmax outputs of the clean head.
    FinalLayerLogits,
    /// Softmax outputs of the clean head.
    PseudoSoftLabels,
}

impl std::str::FromStr for CorrectionInputModality {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "intermediate_features" | "features" => Ok(Self::IntermediateFeatures),
            "final_layer_logits" | "logits" => Ok(Self::FinalLayerLogits),
            "pseudo_soft_labels" | "pseudo" => Ok(Self::PseudoSoftLabels),
            other => Err(format!(
                "unknown modality '{other}' (intermediate_features, final_layer_logits, pseudo_soft_labels)"
            )),
        }
    }
}

impl std::fmt::Display for CorrectionInputModality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::IntermediateFeatures => "intermediate_features",
            Self::FinalLayerLogits => "final_layer_logits",
            Self::PseudoSoftLabels => "pseudo_soft_labels",
        })
    }
}

impl CorrectionInputModality {
    /// Width of the auxiliary block.
    pub fn aux_dim(self, classes: usize, feature_dim: usize) -> usize {
        match self {
            Self::IntermediateFeatures => feature_dim,
            Self::FinalLayerLogits | Self::PseudoSoftLabels => classes,
        }
    }

    pub fn aux_train(self, s: &FeatureSnapshot) -> &Matrix {
        match self {
            Self::IntermediateFeatures => &s.z_train,
            Self::FinalLayerLogits => &s.clean_logits_train,
            Self::PseudoSoftLabels => &s.clean_probs_train,
        }
    }

    pub fn aux_meta(self, s: &FeatureSnapshot) -> &Matrix {
        match self {
            Self::IntermediateFeatures => &s.z_meta,
            Self::FinalLayerLogits => &s.clean_logits_meta,
            Self::PseudoSoftLabels => &s.clean_probs_meta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionNetConfig {
    pub hidden_units: usize,
    pub lr: f64,
    /// Rate used from the first epoch whose validation loss rises.
    pub lr_after_decline: f64,
    pub max_epochs: usize,
    /// Stop once this many epochs pass without a new best validation loss.
    pub patience: usize,
    pub batch_size: usize,
    pub modality: CorrectionInputModality,
}

impl Default for CorrectionNetConfig {
    fn default() -> Self {
        Self {
            hidden_units: 256,
            lr: 1e-3,
            lr_after_decline: 1e-4,
            max_epochs: 200,
            patience: 20,
            batch_size: 4,
            modality: CorrectionInputModality::IntermediateFeatures,
        }
    }
}

impl CorrectionNetConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: &str| Err(NnError::Validation(m.to_string()));
        if self.hidden_units == 0 {
            return bad("corrector hidden_units must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("corrector lr must be positive");
        }
        if !(self.lr_after_decline > 0.0 && self.lr_after_decline < self.lr) {
            return bad("corrector lr_after_decline must be positive and below lr");
        }
        if self.max_epochs == 0 || self.batch_size == 0 {
            return bad("corrector max_epochs and batch_size must be positive");
        }
        Ok(())
    }
}

/// `[posterior | aux]` for a single sample.
pub fn build_input(
    posterior: &[f64],
    aux: &[f64],
    modality: CorrectionInputModality,
    feature_dim: usize,
) -> Result<Vec<f64>, NnError> {
    let c = posterior.len();
    let want = modality.aux_dim(c, feature_dim);
    if aux.len() != want {
        return Err(NnError::Shape(format!(
            "{modality} input expects {want} auxiliary values, got {}",
            aux.len()
        )));
    }
    let mut v = Vec::with_capacity(c + aux.len());
    v.extend_from_slice(posterior);
    v.extend_from_slice(aux);
    Ok(v)
}

/// Row-wise [`build_input`].
pub fn build_inputs(
    posteriors: &Matrix,
    aux: &Matrix,
    modality: CorrectionInputModality,
) -> Result<Matrix, NnError> {
    let c = posteriors.cols();
    if modality != CorrectionInputModality::IntermediateFeatures && aux.cols() != c {
        return Err(NnError::Shape(format!(
            "{modality} input expects {c} auxiliary columns, got {}",
            aux.cols()
        )));
    }
    posteriors.hconcat(aux)
}

/// Two-layer corrector `input -> hidden (ReLU) -> classes (softmax)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionNet {
    pub net: Mlp,
    pub modality: CorrectionInputModality,
    classes: usize,
    aux_dim: usize,
}

impl CorrectionNet {
    pub fn new(
        classes: usize,
        aux_dim: usize,
        hidden: usize,
        modality: CorrectionInputModality,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, NnError> {
        let specs = Self::specs(classes, aux_dim, hidden);
        Ok(Self {
            net: Mlp::new(&specs, rng)?,
            modality,
            classes,
            aux_dim,
        })
    }

    pub fn zeroed(
        classes: usize,
        aux_dim: usize,
        hidden: usize,
        modality: CorrectionInputModality,
    ) -> Result<Self, NnError> {
        Ok(Self {
            net: Mlp::zeroed(&Self::specs(classes, aux_dim, hidden))?,
            modality,
            classes,
            aux_dim,
        })
    }

    fn specs(classes: usize, aux_dim: usize, hidden: usize) -> [LayerSpec; 2] {
        [
            LayerSpec::new(classes + aux_dim, hidden, Activation::Relu),
            LayerSpec::new(hidden, classes, Activation::Softmax),
        ]
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Corrected label distributions for a batch of `(posterior, aux)` pairs.
    pub fn apply(&self, posteriors: &Matrix, aux: &Matrix) -> Result<Matrix, NnError> {
        if posteriors.cols() != self.classes || aux.cols() != self.aux_dim {
            return Err(NnError::Shape(format!(
                "corrector expects {}+{} inputs, got {}+{}",
                self.classes,
                self.aux_dim,
                posteriors.cols(),
                aux.cols()
            )));
        }
        self.net.predict(&build_inputs(posteriors, aux, self.modality)?)
    }

    pub fn save<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        checkpoint::write_checkpoint(w, &self.net.params())
    }
}

#[derive(Debug, Clone)]
pub struct TrainedCorrector {
    /// Parameters with the lowest meta-val loss seen.
    pub corrector: CorrectionNet,
    pub best_val_loss: f64,
    pub best_epoch: usize,
    /// Meta-val loss after every epoch run.
    pub val_history: Vec<f64>,
    pub train_history: Vec<f64>,
    /// Epoch at which the rate dropped, if it did.
    pub declined_at: Option<usize>,
}

/// Fits a fresh corrector on meta-train (simulated posterior + aux -> clean
/// label) and keeps the epoch with the lowest meta-val loss.
pub fn train_correction(
    meta: &MetaSet,
    snapshot: &FeatureSnapshot,
    config: &CorrectionNetConfig,
    seed: u64,
) -> Result<TrainedCorrector, NnError> {
    config.validate()?;
    if meta.train_idx.is_empty() || meta.val_idx.is_empty() {
        return Err(NnError::Validation("meta train/val split is empty".into()));
    }
    let c = meta.num_classes;
    let aux_meta = config.modality.aux_meta(snapshot);
    let inputs = build_inputs(&snapshot.noisy_posterior_meta, aux_meta, config.modality)?;
    let targets = Matrix::one_hot(&meta.clean_labels, c);
    let (xt, yt) = (inputs.select_rows(&meta.train_idx), targets.select_rows(&meta.train_idx));
    let (xv, yv) = (inputs.select_rows(&meta.val_idx), targets.select_rows(&meta.val_idx));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = CorrectionNet::new(c, aux_meta.cols(), config.hidden_units, config.modality, &mut rng)?;
    let mut opt = Sgd::new(SgdConfig::plain(config.lr))?;
    let mut declined_at = None;

    let mut best = model.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut val_history = Vec::new();
    let mut train_history = Vec::new();
    let mut order: Vec<usize> = (0..xt.rows()).collect();

    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let loss = loss_and_backward(&mut model.net, &xt.select_rows(chunk), &yt.select_rows(chunk))?;
            total += loss * chunk.len() as f64;
            opt.step(&mut model.net.params_mut(), epoch)?;
        }
        train_history.push(total / xt.rows() as f64);

        let val = cross_entropy(&model.net.predict(&xv)?, &yv)?;
        if !val.is_finite() {
            return Err(NnError::NonFinite(format!("corrector val loss at epoch {epoch}")));
        }
        if declined_at.is_none() && val_history.last().is_some_and(|&prev| val > prev) {
            declined_at = Some(epoch);
            opt = Sgd::new(SgdConfig::plain(config.lr_after_decline))?;
        }
        val_history.push(val);
        if val < best_val {
            best_val = val;
            best_epoch = epoch;
            best = model.clone();
        } else if epoch - best_epoch >= config.patience {
            break;
        }
    }

    Ok(TrainedCorrector {
        corrector: best,
        best_val_loss: best_val,
        best_epoch,
        val_history,
        train_history,
        declined_at,
    })
}
