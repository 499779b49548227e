use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nllab_cli::report::{export_plots_data, inspect_checkpoint, inspect_config, inspect_run};
use nllab_cli::run::{parse_values, thread_cap, SWEEP_SUMMARY_FILE};
use nllab_cli::{cmd_run, cmd_sweep, parse_config, parse_config_str, parse_override, CliError, SweepAxis};
use nllab_core::RunConfig;

#[derive(Parser)]
#[command(name = "nllab", version, about = "Noisy-label correction experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat `key = value` config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key (repeatable); wins over the file.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_override)]
    overrides: Vec<(String, String)>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig, CliError> {
        match &self.config {
            Some(path) => parse_config(path, &self.overrides),
            None => parse_config_str("", "<defaults>", &self.overrides),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration and write its artifacts to a directory.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Allow writing into a non-empty output directory.
        #[arg(long)]
        reuse: bool,
    },
    /// Run one configuration per value of a single parameter.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated values, e.g. `0.2,0.5,1.0`.
        #[arg(long, allow_hyphen_values = true)]
        values: String,
        #[arg(long)]
        reuse: bool,
    },
    /// Summarize a run directory, a checkpoint file, or a run's resolved config.
    Inspect {
        #[arg(long, conflicts_with = "checkpoint")]
        run: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// With --run, print the resolved config instead of the summary.
        #[arg(long, requires = "run")]
        show_config: bool,
    },
    /// Write plot-ready CSV series for a finished (or partial) run.
    ExportPlotsData {
        #[arg(long)]
        run: PathBuf,
        /// Destination directory; defaults to `<run>/plots`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config, out, reuse } => {
            let cfg = config.load()?;
            let (summary, timing) = cmd_run(&cfg, &out, reuse)?;
            println!(
                "best {:.4} (epoch {}) last {:.4} rounds {}",
                summary.best_test_acc, summary.best_epoch, summary.last_test_acc, summary.rounds
            );
            eprintln!(
                "time {:.2}s, correction share {:.1}%",
                timing.total.as_secs_f64(),
                100.0 * timing.correction_share()
            );
        }
        Command::Sweep {
            config,
            out,
            axis,
            values,
            reuse,
        } => {
            let values = parse_values(&values)?;
            let threads = thread_cap(std::env::var("NLLAB_THREADS").ok().as_deref())?;
            let cfg = config.load()?;
            let rows = cmd_sweep(&cfg, axis, &values, &out, reuse, threads)?;
            for row in &rows {
                match &row.outcome {
                    Ok(s) => println!("{}={} best {:.4} last {:.4}", axis.name(), row.value, s.best_test_acc, s.last_test_acc),
                    Err(e) => println!("{}={} failed: {e}", axis.name(), row.value),
                }
            }
            println!("wrote {}", out.join(SWEEP_SUMMARY_FILE).display());
        }
        Command::Inspect {
            run,
            checkpoint,
            show_config,
        } => {
            let text = match (run, checkpoint) {
                (Some(dir), _) if show_config => inspect_config(&dir)?,
                (Some(dir), _) => inspect_run(&dir)?,
                (None, Some(path)) => inspect_checkpoint(&path)?,
                (None, None) => return Err(CliError::Usage("inspect needs --run or --checkpoint".into())),
            };
            print!("{text}");
        }
        Command::ExportPlotsData { run, out } => {
            for path in export_plots_data(&run, out.as_deref())? {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
