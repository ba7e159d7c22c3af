use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info};
use slimbert::experiment::{
    cmd_bench, cmd_distill, cmd_matrix, cmd_prune, cmd_report, cmd_train, ExperimentConfig,
    RunSummary,
};
use slimbert::Error;

/// Block movement pruning, distillation and mixed precision for a small
/// transformer classifier.
#[derive(Parser)]
#[command(name = "slimbert", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON experiment config, merged over the defaults.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set prune.final_threshold=0.5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig, Error> {
        ExperimentConfig::load(self.config.as_deref(), &self.overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train the baseline (teacher) model.
    Train(ConfigArgs),
    /// Prune a baseline checkpoint to `prune.final_threshold`.
    Prune {
        #[arg(long)]
        baseline: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Distill a teacher checkpoint into a (pruned) student.
    Distill {
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        student: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Measure inference latency; the first checkpoint is the baseline.
    Bench {
        #[arg(required = true)]
        checkpoints: Vec<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Run baseline, pruning and pruning + distillation, and write the results table.
    Matrix(ConfigArgs),
    /// Rebuild the report files from results.json and print the table.
    Report {
        /// Directory holding results.json; defaults to the config's output_dir.
        #[arg(long)]
        dir: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

fn print_summary(s: &RunSummary) {
    let m = &s.metrics;
    println!(
        "{}: test accuracy {:.2}%, val {:.2}%, {} parameters -> {}",
        m.experiment,
        m.test_accuracy_pct,
        m.val_accuracy_pct,
        m.parameters.total,
        s.checkpoint.display()
    );
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Train(c) => print_summary(&cmd_train(&c.load()?)?),
        Command::Prune { baseline, cfg } => print_summary(&cmd_prune(&cfg.load()?, &baseline)?),
        Command::Distill {
            teacher,
            student,
            cfg,
        } => print_summary(&cmd_distill(&cfg.load()?, &teacher, &student)?),
        Command::Bench { checkpoints, cfg } => {
            for e in cmd_bench(&cfg.load()?, &checkpoints)? {
                let rel = e
                    .speedup
                    .map(|s| format!(", {:.2}% faster ({:.2}x)", s.pct_decrease, s.speedup_x))
                    .unwrap_or_default();
                println!(
                    "{}: median {:.3} ms (p10 {:.3}, p90 {:.3}), accuracy {:.2}%{rel}",
                    e.checkpoint.display(),
                    e.latency.median_ms,
                    e.latency.p10_ms,
                    e.latency.p90_ms,
                    e.test_accuracy_pct
                );
            }
        }
        Command::Matrix(c) => {
            let cfg = c.load()?;
            info!("writing results to {}", cfg.output_dir.display());
            cmd_matrix(&cfg)?;
            print!("{}", cmd_report(&cfg.output_dir)?);
        }
        Command::Report { dir, cfg } => {
            let dir = match dir {
                Some(d) => d,
                None => cfg.load()?.output_dir,
            };
            print!("{}", cmd_report(&dir)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SLIMBERT_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}
