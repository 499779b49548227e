use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::correction::{CorrectionInputModality, CorrectionNetConfig};
use crate::nn::SgdConfig;
use crate::noise::NoiseKind;
use crate::simplex::SolverConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Closed-loop correction.
    Ours,
    /// Plain cross-entropy on the observed labels.
    Ce,
}

impl FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ours" => Ok(Self::Ours),
            "ce" | "cross_entropy" => Ok(Self::Ce),
            other => Err(format!("unknown method '{other}' (ours, ce)")),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Ours => "ours",
            Self::Ce => "ce",
        })
    }
}

/// Every knob of a run. Flat so it maps one-to-one onto `key = value` lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub method: Method,
    pub epochs_total: usize,
    pub warmup_epochs: usize,
    pub correction_frequency: usize,
    pub lambda: f64,
    pub no_convex_combination: bool,
    pub modality: CorrectionInputModality,

    pub classes: usize,
    pub dim: usize,
    pub n_per_class: usize,
    pub test_per_class: usize,
    pub spread: f64,
    pub separation: f64,
    pub meta_fraction: f64,
    pub meta_train_ratio: f64,
    /// Optional IDX image/label files replacing the synthetic blobs.
    pub idx_images: String,
    pub idx_labels: String,
    pub test_fraction: f64,

    pub noise: NoiseKind,
    pub eta: f64,
    pub instance_std: f64,
    /// Asymmetric class map; empty means circular shift.
    pub noise_mapping: Vec<usize>,

    pub hidden: Vec<usize>,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub milestones: Vec<usize>,
    pub lr_decay: f64,

    pub corrector_hidden: usize,
    pub corrector_lr: f64,
    pub corrector_lr_after_decline: f64,
    pub corrector_max_epochs: usize,
    pub corrector_patience: usize,
    pub corrector_batch_size: usize,

    pub solver_max_iters: usize,
    pub solver_tolerance: f64,
    /// Max stored corrections; 0 keeps everything.
    pub history_cap: usize,

    pub data_seed: u64,
    pub noise_seed: u64,
    pub model_seed: u64,
    pub corrector_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let corr = CorrectionNetConfig::default();
        let sgd = SgdConfig::default();
        let solver = SolverConfig::default();
        Self {
            method: Method::Ours,
            epochs_total: 100,
            warmup_epochs: 40,
            correction_frequency: 5,
            lambda: 0.5,
            no_convex_combination: false,
            modality: CorrectionInputModality::IntermediateFeatures,

            classes: 4,
            dim: 20,
            n_per_class: 1250,
            test_per_class: 500,
            spread: 1.0,
            separation: 4.0,
            meta_fraction: 0.1,
            meta_train_ratio: 0.8,
            idx_images: String::new(),
            idx_labels: String::new(),
            test_fraction: 0.2,

            noise: NoiseKind::Symmetric,
            eta: 0.4,
            instance_std: crate::noise::DEFAULT_INSTANCE_STD,
            noise_mapping: Vec::new(),

            hidden: crate::model::DEFAULT_HIDDEN.to_vec(),
            batch_size: crate::model::DEFAULT_BATCH_SIZE,
            lr: sgd.learning_rate,
            momentum: sgd.momentum,
            weight_decay: sgd.weight_decay,
            milestones: sgd.milestones,
            lr_decay: sgd.decay_factor,

            corrector_hidden: corr.hidden_units,
            corrector_lr: corr.lr,
            corrector_lr_after_decline: corr.lr_after_decline,
            corrector_max_epochs: corr.max_epochs,
            corrector_patience: corr.patience,
            corrector_batch_size: corr.batch_size,

            solver_max_iters: solver.max_iters,
            solver_tolerance: solver.tolerance,
            history_cap: 0,

            data_seed: 0,
            noise_seed: 1,
            model_seed: 2,
            corrector_seed: 3,
        }
    }
}

/// A bad key or value in a flat config.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("unknown key '{0}'")]
    UnknownKey(String),
    #[error("cannot parse value '{value}' for key '{key}': {reason}")]
    BadValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("invalid value for '{key}': {reason}")]
    Invariant { key: String, reason: String },
}

impl ConfigError {
    pub fn key(&self) -> &str {
        match self {
            Self::UnknownKey(k) => k,
            Self::BadValue { key, .. } | Self::Invariant { key, .. } => key,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: e.to_string(),
    })
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>, ConfigError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn fmt_list(v: &[usize]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

macro_rules! config_keys {
    ($( $key:ident : $kind:ident ),* $(,)?) => {
        impl RunConfig {
            /// Every accepted key, in `to_kv_string` order.
            pub const KEYS: &'static [&'static str] = &[$(stringify!($key)),*];

            /// Sets one field from its textual value.
            pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
                let value = value.trim();
                match key {
                    $( stringify!($key) => { config_keys!(@set self, $key, $kind, value); } )*
                    other => return Err(ConfigError::UnknownKey(other.to_string())),
                }
                Ok(())
            }

            /// `key = value` lines, one per field, readable by [`RunConfig::set`].
            pub fn to_kv_string(&self) -> String {
                let mut s = String::new();
                $( let _ = writeln!(s, "{} = {}", stringify!($key), config_keys!(@fmt self, $key, $kind)); )*
                s
            }
        }
    };
    (@set $s:ident, $key:ident, list, $v:ident) => { $s.$key = parse_list(stringify!($key), $v)?; };
    (@set $s:ident, $key:ident, text, $v:ident) => { $s.$key = $v.to_string(); };
    (@set $s:ident, $key:ident, value, $v:ident) => { $s.$key = parse(stringify!($key), $v)?; };
    (@fmt $s:ident, $key:ident, list) => { fmt_list(&$s.$key) };
    (@fmt $s:ident, $key:ident, text) => { $s.$key.clone() };
    (@fmt $s:ident, $key:ident, value) => { $s.$key.to_string() };
}

config_keys! {
    method: value,
    epochs_total: value,
    warmup_epochs: value,
    correction_frequency: value,
    lambda: value,
    no_convex_combination: value,
    modality: value,
    classes: value,
    dim: value,
    n_per_class: value,
    test_per_class: value,
    spread: value,
    separation: value,
    meta_fraction: value,
    meta_train_ratio: value,
    idx_images: text,
    idx_labels: text,
    test_fraction: value,
    noise: value,
    eta: value,
    instance_std: value,
    noise_mapping: list,
    hidden: list,
    batch_size: value,
    lr: value,
    momentum: value,
    weight_decay: value,
    milestones: list,
    lr_decay: value,
    corrector_hidden: value,
    corrector_lr: value,
    corrector_lr_after_decline: value,
    corrector_max_epochs: value,
    corrector_patience: value,
    corrector_batch_size: value,
    solver_max_iters: value,
    solver_tolerance: value,
    history_cap: value,
    data_seed: value,
    noise_seed: value,
    model_seed: value,
    corrector_seed: value,
}

impl RunConfig {
    /// Number of correction rounds the schedule produces.
    pub fn correction_rounds(&self) -> usize {
        if self.method == Method::Ce || self.correction_frequency == 0 {
            return 0;
        }
        self.epochs_total.saturating_sub(self.warmup_epochs) / self.correction_frequency
    }

    /// Whether a correction round runs after (1-based) `epoch`.
    pub fn is_correction_epoch(&self, epoch: usize) -> bool {
        self.method == Method::Ours
            && epoch > self.warmup_epochs
            && (epoch - self.warmup_epochs) % self.correction_frequency == 0
    }

    pub fn sgd(&self) -> SgdConfig {
        SgdConfig {
            learning_rate: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            milestones: self.milestones.clone(),
            decay_factor: self.lr_decay,
        }
    }

    pub fn corrector(&self) -> CorrectionNetConfig {
        CorrectionNetConfig {
            hidden_units: self.corrector_hidden,
            lr: self.corrector_lr,
            lr_after_decline: self.corrector_lr_after_decline,
            max_epochs: self.corrector_max_epochs,
            patience: self.corrector_patience,
            batch_size: self.corrector_batch_size,
            modality: self.modality,
        }
    }

    pub fn solver(&self) -> SolverConfig {
        SolverConfig {
            max_iters: self.solver_max_iters,
            tolerance: self.solver_tolerance,
        }
    }

    pub fn uses_idx(&self) -> bool {
        !self.idx_images.is_empty() || !self.idx_labels.is_empty()
    }

    /// Checks cross-field invariants, naming the first offending key.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |key: &str, reason: &str| {
            Err(ConfigError::Invariant {
                key: key.to_string(),
                reason: reason.to_string(),
            })
        };
        let unit_open = |v: f64| v > 0.0 && v < 1.0;
        if self.epochs_total == 0 {
            return fail("epochs_total", "must be positive");
        }
        if self.warmup_epochs >= self.epochs_total {
            return fail("warmup_epochs", "must be below epochs_total");
        }
        if self.correction_frequency == 0 {
            return fail("correction_frequency", "must be at least 1");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail("lambda", "must be >= 0");
        }
        if self.classes < 2 {
            return fail("classes", "must be at least 2");
        }
        if self.dim < 2 {
            return fail("dim", "must be at least 2");
        }
        if self.n_per_class == 0 {
            return fail("n_per_class", "must be positive");
        }
        if self.test_per_class == 0 {
            return fail("test_per_class", "must be positive");
        }
        if !(self.spread > 0.0 && self.spread.is_finite()) {
            return fail("spread", "must be positive");
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return fail("separation", "must be >= 0");
        }
        if !unit_open(self.meta_fraction) {
            return fail("meta_fraction", "must lie in (0, 1)");
        }
        if !unit_open(self.meta_train_ratio) {
            return fail("meta_train_ratio", "must lie in (0, 1)");
        }
        if self.idx_images.is_empty() != self.idx_labels.is_empty() {
            return fail("idx_labels", "idx_images and idx_labels must be set together");
        }
        if !unit_open(self.test_fraction) {
            return fail("test_fraction", "must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return fail("eta", "must lie in [0, 1]");
        }
        if !(self.instance_std >= 0.0 && self.instance_std.is_finite()) {
            return fail("instance_std", "must be >= 0");
        }
        if !self.noise_mapping.is_empty() && !self.uses_idx() {
            if self.noise_mapping.len() != self.classes {
                return fail("noise_mapping", "must list one target per class");
            }
            if self.noise_mapping.iter().any(|&m| m >= self.classes) {
                return fail("noise_mapping", "target class out of range");
            }
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return fail("hidden", "needs at least one positive width");
        }
        if self.batch_size == 0 {
            return fail("batch_size", "must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail("lr", "must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail("momentum", "must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return fail("weight_decay", "must be >= 0");
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return fail("milestones", "must be strictly increasing");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return fail("lr_decay", "must lie in (0, 1]");
        }
        if self.corrector_hidden == 0 {
            return fail("corrector_hidden", "must be positive");
        }
        if !(self.corrector_lr > 0.0 && self.corrector_lr.is_finite()) {
            return fail("corrector_lr", "must be positive");
        }
        if !(self.corrector_lr_after_decline > 0.0
            && self.corrector_lr_after_decline < self.corrector_lr)
        {
            return fail("corrector_lr_after_decline", "must be positive and below corrector_lr");
        }
        if self.corrector_max_epochs == 0 {
            return fail("corrector_max_epochs", "must be positive");
        }
        if self.corrector_batch_size == 0 {
            return fail("corrector_batch_size", "must be positive");
        }
        if self.solver_max_iters == 0 {
            return fail("solver_max_iters", "must be positive");
        }
        if !(self.solver_tolerance > 0.0 && self.solver_tolerance.is_finite()) {
            return fail("solver_tolerance", "must be positive");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_follow_schedule() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(c.lambda, 0.5);
        assert_eq!(c.warmup_epochs, 40);
        assert_eq!(c.correction_frequency, 5);
        assert_eq!(c.correction_rounds(), 12);
        assert!(c.is_correction_epoch(45));
        assert!(c.is_correction_epoch(100));
        assert!(!c.is_correction_epoch(40));
        assert!(!c.is_correction_epoch(47));
    }

    #[test]
    fn kv_roundtrip() {
        let mut c = RunConfig::default();
        c.set("milestones", "10, 20,30").unwrap();
        c.set("modality", "pseudo_soft_labels").unwrap();
        c.set("idx_images", "/tmp/a b.idx").unwrap();
        c.set("idx_labels", "/tmp/l.idx").unwrap();
        c.set("lambda", "0.2").unwrap();
        let text = c.to_kv_string();
        let mut back = RunConfig::default();
        for line in text.lines() {
            let (k, v) = line.split_once('=').unwrap();
            back.set(k.trim(), v).unwrap();
        }
        assert_eq!(back, c);
        assert_eq!(text.lines().count(), RunConfig::KEYS.len());
    }

    #[test]
    fn errors_name_the_key() {
        let mut c = RunConfig::default();
        assert_eq!(c.set("bogus", "1").unwrap_err().key(), "bogus");
        assert_eq!(c.set("lr", "fast").unwrap_err().key(), "lr");
        c.set("eta", "1.5").unwrap();
        assert_eq!(c.validate().unwrap_err().key(), "eta");
    }

    #[test]
    fn long_frequency_means_no_rounds() {
        let c = RunConfig {
            correction_frequency: 61,
            ..RunConfig::default()
        };
        assert_eq!(c.correction_rounds(), 0);
        assert!(!(1..=100).any(|e| c.is_correction_epoch(e)));
    }
}
