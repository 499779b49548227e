use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nllab_core::nn::checkpoint::read_checkpoint;
use nllab_core::runner::{parse_omega_json, METRICS_HEADER};
use nllab_core::RoundRecord;

use crate::error::CliError;
use crate::run::{RunSummary, CONFIG_FILE, METRICS_FILE, OMEGA_FILE, SUMMARY_FILE};

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(CliError::io(format!("reading {}", path.display())))
}

fn artifact_err(path: &Path, message: impl Into<String>) -> CliError {
    CliError::Artifact {
        path: path.display().to_string(),
        message: message.into(),
    }
}

pub fn load_rounds(run_dir: &Path) -> Result<Vec<RoundRecord>, CliError> {
    let path = run_dir.join(OMEGA_FILE);
    parse_omega_json(&read(&path)?).map_err(|e| artifact_err(&path, e.to_string()))
}

/// `metrics.csv` rows as raw fields, header checked.
pub fn load_metrics(run_dir: &Path) -> Result<Vec<Vec<String>>, CliError> {
    let path = run_dir.join(METRICS_FILE);
    let text = read(&path)?;
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(artifact_err(&path, format!("header is not `{METRICS_HEADER}`")));
    }
    let width = METRICS_HEADER.split(',').count();
    lines
        .enumerate()
        .map(|(i, l)| {
            let fields: Vec<String> = l.split(',').map(str::to_string).collect();
            if fields.len() == width {
                Ok(fields)
            } else {
                Err(artifact_err(&path, format!("line {} has {} fields", i + 2, fields.len())))
            }
        })
        .collect()
}

/// Human-readable overview of a run directory.
pub fn inspect_run(run_dir: &Path) -> Result<String, CliError> {
    let mut out = String::new();
    let summary_path = run_dir.join(SUMMARY_FILE);
    let metrics = load_metrics(run_dir)?;
    let rounds = load_rounds(run_dir)?;
    let _ = writeln!(out, "run: {}", run_dir.display());
    if summary_path.exists() {
        let s: RunSummary =
            serde_json::from_str(&read(&summary_path)?).map_err(|e| artifact_err(&summary_path, e.to_string()))?;
        let _ = writeln!(out, "method: {}", s.method);
        let _ = writeln!(out, "best test acc: {:.4} (epoch {})", s.best_test_acc, s.best_epoch);
        let _ = writeln!(out, "last test acc: {:.4}", s.last_test_acc);
        if let (Some(a), Some(b)) = (s.initial_label_acc, s.final_label_acc) {
            let _ = writeln!(out, "label acc: {a:.4} -> {b:.4}");
        }
    } else {
        let _ = writeln!(out, "status: incomplete ({} epochs logged, no {SUMMARY_FILE})", metrics.len());
    }
    let _ = writeln!(out, "epochs logged: {}", metrics.len());
    let _ = writeln!(out, "correction rounds: {}", rounds.len());
    if let Some(last) = rounds.last() {
        let weights: Vec<String> = last.omega.iter().map(|w| format!("{w:.3}")).collect();
        let _ = writeln!(out, "final weights: [{}] ({})", weights.join(", "), last.provenance);
        let _ = writeln!(out, "final meta-val risk: {:.6}", last.achieved_risk);
    }
    Ok(out)
}

/// Tensor table of a checkpoint file.
pub fn inspect_checkpoint(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(CliError::io(format!("reading {}", path.display())))?;
    let tensors = read_checkpoint(&mut bytes.as_slice()).map_err(|e| artifact_err(path, e.to_string()))?;
    let mut out = format!("{}: {} tensors\n", path.display(), tensors.len());
    let mut total = 0;
    for (i, t) in tensors.iter().enumerate() {
        let norm = t.values.iter().map(|v| v * v).sum::<f64>().sqrt();
        let _ = writeln!(out, "  {i:3} shape {:?} l2 {norm:.6}", t.shape());
        total += t.len();
    }
    let _ = writeln!(out, "parameters: {total}");
    Ok(out)
}

/// The run's resolved config, as written.
pub fn inspect_config(run_dir: &Path) -> Result<String, CliError> {
    read(&run_dir.join(CONFIG_FILE))
}

pub const EPOCHS_PLOT: &str = "epochs.csv";
pub const WEIGHTS_PLOT: &str = "weights.csv";
pub const ROUNDS_PLOT: &str = "rounds.csv";

/// Writes plot-ready CSV series for a run: per-epoch curves, the weight
/// of every component after every round (long format) and per-round
/// diagnostics. Returns the written paths.
pub fn export_plots_data(run_dir: &Path, out_dir: Option<&Path>) -> Result<Vec<PathBuf>, CliError> {
    let out_dir = out_dir.map_or_else(|| run_dir.join("plots"), Path::to_path_buf);
    std::fs::create_dir_all(&out_dir).map_err(CliError::io(format!("creating {}", out_dir.display())))?;
    let metrics = load_metrics(run_dir)?;
    let rounds = load_rounds(run_dir)?;

    let mut epochs = String::from("epoch,test_acc,label_acc,train_loss,metaval_risk\n");
    for f in &metrics {
        let _ = writeln!(epochs, "{},{},{},{},{}", f[0], f[2], f[3], f[1], f[4]);
    }
    let mut weights = String::from("round,epoch,component,weight\n");
    let mut diag = String::from(
        "round,epoch,achieved_risk,warm_start_risk,provenance,posterior_val_acc,correction_val_acc,corrector_best_epoch\n",
    );
    for r in &rounds {
        for (k, w) in r.omega.iter().enumerate() {
            let _ = writeln!(weights, "{},{},{k},{w}", r.iteration, r.epoch);
        }
        let _ = writeln!(
            diag,
            "{},{},{},{},{},{},{},{}",
            r.iteration,
            r.epoch,
            r.achieved_risk,
            r.warm_start_risk.map(|w| w.to_string()).unwrap_or_default(),
            r.provenance,
            r.posterior_val_accuracy,
            r.correction_val_accuracy,
            r.corrector_best_epoch
        );
    }
    let mut written = Vec::new();
    for (name, body) in [(EPOCHS_PLOT, epochs), (WEIGHTS_PLOT, weights), (ROUNDS_PLOT, diag)] {
        let path = out_dir.join(name);
        std::fs::write(&path, body).map_err(CliError::io(format!("writing {}", path.display())))?;
        written.push(path);
    }
    Ok(written)
}
