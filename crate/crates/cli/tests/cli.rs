use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use nllab_cli::parse_config;
use nllab_core::runner::{parse_omega_json, METRICS_HEADER};

const SMALL: &str = "\
# reduced desk problem
n_per_class = 100
test_per_class = 40
epochs_total = 12
warmup_epochs = 4
correction_frequency = 2
milestones = 8,10
corrector_max_epochs = 10
corrector_hidden = 16
hidden = 16,8
batch_size = 32
";

fn nllab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nllab"))
        .args(args)
        .env_remove("NLLAB_THREADS")
        .output()
        .unwrap()
}

fn small_config(dir: &Path) -> PathBuf {
    let path = dir.join("small.cfg");
    std::fs::write(&path, SMALL).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("run");
    let o = nllab(&["run", "--config", s(&cfg), "--out", s(&out), "--set", "correction_frequency=3"]);
    assert!(o.status.success(), "{}", stderr(&o));

    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(lines.next(), Some(METRICS_HEADER));
    assert_eq!(lines.count(), 12);

    let rounds = parse_omega_json(&std::fs::read_to_string(out.join("omega.json")).unwrap()).unwrap();
    assert_eq!(rounds.len(), 2);

    let resolved = parse_config(&out.join("config.resolved"), &[]).unwrap();
    let direct = parse_config(&cfg, &[("correction_frequency".into(), "3".into())]).unwrap();
    assert_eq!(resolved, direct);
    assert_eq!(resolved.correction_frequency, 3);

    for ckpt in ["model.nlck", "corrector.nlck"] {
        let bytes = std::fs::read(out.join("checkpoints").join(ckpt)).unwrap();
        assert_eq!(&bytes[..4], b"NLCK");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["rounds"], 2);
}

#[test]
fn artifacts_reproduce_from_the_resolved_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(nllab(&["run", "--config", s(&cfg), "--out", s(&a)]).status.success());
    let resolved = a.join("config.resolved");
    assert!(nllab(&["run", "--config", s(&resolved), "--out", s(&b)]).status.success());
    for file in [
        "metrics.csv",
        "omega.json",
        "config.resolved",
        "summary.json",
        "checkpoints/model.nlck",
        "checkpoints/corrector.nlck",
    ] {
        assert_eq!(std::fs::read(a.join(file)).unwrap(), std::fs::read(b.join(file)).unwrap(), "{file}");
    }
}

#[test]
fn config_errors_exit_two_naming_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.cfg");
    std::fs::write(&bad, "eta = 1.5\n").unwrap();
    let o = nllab(&["run", "--config", s(&bad), "--out", s(&tmp.path().join("x"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("'eta'"), "{}", stderr(&o));

    let o = nllab(&["run", "--out", s(&tmp.path().join("y")), "--set", "no_such_key=1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no_such_key"));

    let o = nllab(&["run", "--config", s(&tmp.path().join("missing.cfg")), "--out", s(&tmp.path().join("z"))]);
    assert_eq!(o.status.code(), Some(1));

    let o = nllab(&["run", "--out", s(&tmp.path().join("w")), "--set", "lambda"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn occupied_output_needs_reuse() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("run");
    std::fs::create_dir(&out).unwrap();
    std::fs::write(out.join("notes.txt"), "keep").unwrap();
    let o = nllab(&["run", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    let o = nllab(&["run", "--config", s(&cfg), "--out", s(&out), "--reuse"]);
    assert!(o.status.success());
    assert!(out.join("notes.txt").exists());
}

#[test]
fn numeric_failure_exits_three_with_the_epoch() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("run");
    let o = nllab(&["run", "--config", s(&cfg), "--out", s(&out), "--set", "lr=1e200", "--set", "weight_decay=0"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("at epoch"), "{}", stderr(&o));
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with(METRICS_HEADER));
    assert!(!out.join("summary.json").exists());
}

#[test]
fn interrupted_run_leaves_whole_lines() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("run");
    let mut child = Command::new(env!("CARGO_BIN_EXE_nllab"))
        .args(["run", "--config", s(&cfg), "--out", s(&out), "--set", "epochs_total=100000", "--set", "warmup_epochs=99999"])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let metrics = out.join("metrics.csv");
    let started = Instant::now();
    loop {
        let rows = std::fs::read_to_string(&metrics).map(|t| t.lines().count()).unwrap_or(0);
        if rows > 20 || started.elapsed() > Duration::from_secs(60) {
            break;
        }
        std::thread::sleep(Duration::from_millis(20));
    }
    child.kill().unwrap();
    child.wait().unwrap();
    let text = std::fs::read_to_string(&metrics).unwrap();
    assert!(text.ends_with('\n'));
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines.len() > 20);
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 6));
}

#[test]
fn lambda_sweep_writes_one_row_per_value() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("sweep");
    let o = nllab(&["sweep", "--config", s(&cfg), "--out", s(&out), "--axis", "lambda", "--values", "0.2,0.5,1.0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines[0], "value,best_acc,last_acc,status");
    assert_eq!(lines.len(), 4);
    for (line, v) in lines[1..].iter().zip(["0.2", "0.5", "1.0"]) {
        assert!(line.starts_with(&format!("{v},")) && line.ends_with(",ok"), "{line}");
        let resolved = parse_config(&out.join(format!("lambda-{v}")).join("config.resolved"), &[]).unwrap();
        assert_eq!(resolved.lambda, v.parse::<f64>().unwrap());
    }
}

#[test]
fn frequency_sweep_is_thread_count_independent() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let run = |dir: &str, threads: &str| {
        let out = tmp.path().join(dir);
        let o = Command::new(env!("CARGO_BIN_EXE_nllab"))
            .args(["sweep", "--config", s(&cfg), "--out", s(&out), "--axis", "frequency", "--values", "5,8,10"])
            .args(["--set", "epochs_total=20"])
            .env("NLLAB_THREADS", threads)
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", stderr(&o));
        std::fs::read_to_string(out.join("summary.csv")).unwrap()
    };
    let serial = run("one", "1");
    assert_eq!(serial.lines().count(), 4);
    assert_eq!(run("three", "3"), serial);
}

#[test]
fn sweep_usage_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("sweep");
    let o = nllab(&["sweep", "--config", s(&cfg), "--out", s(&out), "--axis", "eta", "--values", ""]);
    assert_eq!(o.status.code(), Some(2));
    let o = nllab(&["sweep", "--config", s(&cfg), "--out", s(&out), "--axis", "eta", "--values", "0.2,2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.join("eta-0.2").exists());
    let o = nllab(&["sweep", "--config", s(&cfg), "--out", s(&out), "--axis", "momentum", "--values", "0.5"]);
    assert_eq!(o.status.code(), Some(2));
    let o = Command::new(env!("CARGO_BIN_EXE_nllab"))
        .args(["sweep", "--config", s(&cfg), "--out", s(&out), "--axis", "eta", "--values", "0.2"])
        .env("NLLAB_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn failed_sweep_runs_are_recorded() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("sweep");
    let o = nllab(&["sweep", "--config", s(&cfg), "--out", s(&out), "--axis", "lambda", "--values", "0.5,1e300"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert!(lines[1].ends_with(",ok"));
    assert_eq!(lines[2], "1e300,,,failed");
}

#[test]
fn inspect_and_export_read_a_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("run");
    assert!(nllab(&["run", "--config", s(&cfg), "--out", s(&out)]).status.success());

    let o = nllab(&["inspect", "--run", s(&out)]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("correction rounds: 4"), "{text}");
    assert!(text.contains("best test acc"));

    let o = nllab(&["inspect", "--run", s(&out), "--show-config"]);
    assert_eq!(o.stdout, std::fs::read(out.join("config.resolved")).unwrap());

    let o = nllab(&["inspect", "--checkpoint", s(&out.join("checkpoints/model.nlck"))]);
    let text = String::from_utf8(o.stdout).unwrap();
    // extractor 2 layers + 2 heads, weight and bias each
    assert!(text.contains(": 8 tensors"), "{text}");

    let o = nllab(&["export-plots-data", "--run", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let plots = out.join("plots");
    let epochs = std::fs::read_to_string(plots.join("epochs.csv")).unwrap();
    assert_eq!(epochs.lines().next(), Some("epoch,test_acc,label_acc,train_loss,metaval_risk"));
    assert_eq!(epochs.lines().count(), 13);
    let weights = std::fs::read_to_string(plots.join("weights.csv")).unwrap();
    // rounds 1..=4 carry 2..=5 weights
    assert_eq!(weights.lines().count(), 1 + 2 + 3 + 4 + 5);
    let rounds = std::fs::read_to_string(plots.join("rounds.csv")).unwrap();
    assert_eq!(rounds.lines().count(), 5);

    let o = nllab(&["export-plots-data", "--run", s(&tmp.path().join("nothing"))]);
    assert_eq!(o.status.code(), Some(1));
    let o = nllab(&["inspect"]);
    assert_eq!(o.status.code(), Some(2));
}
