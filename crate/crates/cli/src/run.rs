use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use nllab_core::runner::{omega_json, CsvMetricsWriter, IterationMetrics, PhaseTiming, RunObserver};
use nllab_core::{prepare_data, run_experiment, RoundRecord, RunConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const CONFIG_FILE: &str = "config.resolved";
pub const METRICS_FILE: &str = "metrics.csv";
pub const OMEGA_FILE: &str = "omega.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const MODEL_CHECKPOINT: &str = "model.nlck";
pub const CORRECTOR_CHECKPOINT: &str = "corrector.nlck";

/// Deterministic outcome of a run, stored as `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: String,
    pub epochs: usize,
    pub rounds: usize,
    pub best_test_acc: f64,
    pub best_epoch: usize,
    pub last_test_acc: f64,
    pub initial_label_acc: Option<f64>,
    pub final_label_acc: Option<f64>,
}

/// Creates `dir`, refusing a non-empty existing directory unless `reuse`.
pub fn prepare_out_dir(dir: &Path, reuse: bool) -> Result<(), CliError> {
    if dir.exists() {
        let occupied = std::fs::read_dir(dir)
            .map_err(CliError::io(format!("listing {}", dir.display())))?
            .next()
            .is_some();
        if occupied && !reuse {
            return Err(CliError::Usage(format!(
                "output directory {} is not empty; pass --reuse to write into it",
                dir.display()
            )));
        }
    }
    std::fs::create_dir_all(dir).map_err(CliError::io(format!("creating {}", dir.display())))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), std::io::Error> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(tmp, path)
}

/// Streams `metrics.csv` line by line and rewrites `omega.json` after
/// every round, so an interrupted run leaves consistent partial files.
struct ArtifactWriter {
    metrics: CsvMetricsWriter<BufWriter<File>>,
    omega_path: PathBuf,
    rounds: Vec<RoundRecord>,
}

impl RunObserver for ArtifactWriter {
    fn on_epoch(&mut self, m: &IterationMetrics) -> std::io::Result<()> {
        self.metrics.on_epoch(m)
    }

    fn on_round(&mut self, round: &RoundRecord) -> std::io::Result<()> {
        self.rounds.push(round.clone());
        let json = omega_json(&self.rounds).map_err(std::io::Error::other)?;
        write_atomic(&self.omega_path, json.as_bytes())
    }
}

/// Runs one experiment into `dir`.
pub fn cmd_run(config: &RunConfig, dir: &Path, reuse: bool) -> Result<(RunSummary, PhaseTiming), CliError> {
    config.validate()?;
    prepare_out_dir(dir, reuse)?;
    let ctx = |what: &str| format!("writing {}", dir.join(what).display());
    std::fs::write(dir.join(CONFIG_FILE), config.to_kv_string()).map_err(CliError::io(ctx(CONFIG_FILE)))?;
    let omega_path = dir.join(OMEGA_FILE);
    write_atomic(&omega_path, b"[]").map_err(CliError::io(ctx(OMEGA_FILE)))?;

    let data = prepare_data(config)?;
    let file = File::create(dir.join(METRICS_FILE)).map_err(CliError::io(ctx(METRICS_FILE)))?;
    let mut observer = ArtifactWriter {
        metrics: CsvMetricsWriter::new(BufWriter::new(file)).map_err(CliError::io(ctx(METRICS_FILE)))?,
        omega_path,
        rounds: Vec::new(),
    };
    let result = run_experiment(config, &data, &mut observer)?;

    let ckpt_dir = dir.join(CHECKPOINT_DIR);
    std::fs::create_dir_all(&ckpt_dir).map_err(CliError::io(ctx(CHECKPOINT_DIR)))?;
    let mut buf = Vec::new();
    result.model.save(&mut buf).map_err(CliError::io(ctx(MODEL_CHECKPOINT)))?;
    std::fs::write(ckpt_dir.join(MODEL_CHECKPOINT), &buf).map_err(CliError::io(ctx(MODEL_CHECKPOINT)))?;
    if let Some(corrector) = &result.last_corrector {
        let mut buf = Vec::new();
        corrector.save(&mut buf).map_err(CliError::io(ctx(CORRECTOR_CHECKPOINT)))?;
        std::fs::write(ckpt_dir.join(CORRECTOR_CHECKPOINT), &buf)
            .map_err(CliError::io(ctx(CORRECTOR_CHECKPOINT)))?;
    }

    let best = result
        .metrics
        .iter()
        .fold(None::<&IterationMetrics>, |acc, m| match acc {
            Some(b) if b.test_accuracy >= m.test_accuracy => Some(b),
            _ => Some(m),
        })
        .expect("at least one epoch");
    let summary = RunSummary {
        method: config.method.to_string(),
        epochs: result.metrics.len(),
        rounds: result.rounds.len(),
        best_test_acc: best.test_accuracy,
        best_epoch: best.epoch,
        last_test_acc: result.last_test_accuracy(),
        initial_label_acc: result.initial_label_accuracy,
        final_label_acc: result.final_label_accuracy(),
    };
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    std::fs::write(dir.join(SUMMARY_FILE), json).map_err(CliError::io(ctx(SUMMARY_FILE)))?;
    Ok((summary, result.timing))
}

/// Parameter a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Eta,
    Lambda,
    Frequency,
}

impl SweepAxis {
    pub fn config_key(self) -> &'static str {
        match self {
            Self::Eta => "eta",
            Self::Lambda => "lambda",
            Self::Frequency => "correction_frequency",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Eta => "eta",
            Self::Lambda => "lambda",
            Self::Frequency => "frequency",
        }
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "eta" => Ok(Self::Eta),
            "lambda" => Ok(Self::Lambda),
            "frequency" | "correction_frequency" => Ok(Self::Frequency),
            other => Err(format!("unknown sweep axis '{other}' (eta, lambda, frequency)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: String,
    pub outcome: Result<RunSummary, String>,
}

pub const SWEEP_SUMMARY_FILE: &str = "summary.csv";
pub const SWEEP_HEADER: &str = "value,best_acc,last_acc,status";

/// Splits a comma-separated value list; empty entries are rejected.
pub fn parse_values(list: &str) -> Result<Vec<String>, CliError> {
    let values: Vec<String> = list.split(',').map(|v| v.trim().to_string()).collect();
    if values.iter().all(String::is_empty) {
        return Err(CliError::Usage("sweep needs at least one value".into()));
    }
    if values.iter().any(String::is_empty) {
        return Err(CliError::Usage(format!("empty entry in value list '{list}'")));
    }
    Ok(values)
}

/// Worker count from `NLLAB_THREADS` (default 1).
pub fn thread_cap(var: Option<&str>) -> Result<usize, CliError> {
    match var {
        None => Ok(1),
        Some(s) => match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(CliError::Usage(format!("NLLAB_THREADS must be a positive integer, got '{s}'"))),
        },
    }
}

/// Runs one experiment per value under `dir/<axis>-<value>` and writes
/// `summary.csv`. Every value is validated before any run starts; a run
/// that fails is recorded and the sweep carries on.
pub fn cmd_sweep(
    base: &RunConfig,
    axis: SweepAxis,
    values: &[String],
    dir: &Path,
    reuse: bool,
    threads: usize,
) -> Result<Vec<SweepRow>, CliError> {
    if values.is_empty() {
        return Err(CliError::Usage("sweep needs at least one value".into()));
    }
    let configs = values
        .iter()
        .map(|v| {
            let mut cfg = base.clone();
            cfg.set(axis.config_key(), v)?;
            cfg.validate()?;
            Ok(cfg)
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    prepare_out_dir(dir, reuse)?;

    let next = AtomicUsize::new(0);
    let rows: Mutex<Vec<Option<SweepRow>>> = Mutex::new(vec![None; values.len()]);
    std::thread::scope(|s| {
        for _ in 0..threads.clamp(1, values.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= values.len() {
                    break;
                }
                let run_dir = dir.join(format!("{}-{}", axis.name(), values[i]));
                let outcome = cmd_run(&configs[i], &run_dir, reuse)
                    .map(|(summary, _)| summary)
                    .map_err(|e| {
                        eprintln!("{}={}: {e}", axis.name(), values[i]);
                        e.to_string()
                    });
                rows.lock().expect("no poisoned workers")[i] = Some(SweepRow {
                    value: values[i].clone(),
                    outcome,
                });
            });
        }
    });
    let rows: Vec<SweepRow> = rows
        .into_inner()
        .expect("no poisoned workers")
        .into_iter()
        .map(|r| r.expect("every value ran"))
        .collect();

    let path = dir.join(SWEEP_SUMMARY_FILE);
    let mut out = BufWriter::new(File::create(&path).map_err(CliError::io(format!("writing {}", path.display())))?);
    let mut write = || -> std::io::Result<()> {
        writeln!(out, "{SWEEP_HEADER}")?;
        for row in &rows {
            match &row.outcome {
                Ok(s) => writeln!(out, "{},{},{},ok", row.value, s.best_test_acc, s.last_test_acc)?,
                Err(_) => writeln!(out, "{},,,failed", row.value)?,
            }
        }
        out.flush()
    };
    write().map_err(CliError::io(format!("writing {}", path.display())))?;
    Ok(rows)
}
