//! Closed-loop self-training with neural label correction for learning
//! with noisy labels.
//!
//! A two-head classifier (clean head and noisy head over a shared feature
//! extractor) is trained on corrected labels. Periodically a small corrector
//! network, fitted on a trusted meta set, turns noisy labels into corrected
//! distributions, and a convex combination of all historical corrections,
//! weighted to minimize meta-validation risk, becomes the next training target.

pub mod correction;
pub mod data;
pub mod model;
pub mod nn;
pub mod noise;
pub mod runner;
pub mod simplex;

pub use correction::{CorrectionInputModality, CorrectionNet, CorrectionNetConfig};
pub use data::{LabeledData, MetaSet, NoisyDataset};
pub use model::{FeatureSnapshot, TwoHeadModel};
pub use nn::{Matrix, ParamTensor, SgdConfig};
pub use noise::{NoiseKind, NoiseSpec, TransitionMatrix};
pub use runner::{
    prepare_data, run_algorithm1, run_baseline_ce, run_experiment, Datasets, IterationMetrics,
    Method, RoundRecord, RunConfig, RunResult,
};
pub use simplex::{CorrectionHistory, Provenance, SimplexWeights};
