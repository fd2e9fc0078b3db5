//! `peft`: run, sweep and summarise fine-tuning experiments.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use peft_core::experiment::sweep::workers_from_env;
use peft_core::{emit_report, run_experiment, run_sweep, Error, ExperimentConfig, SweepAxis};

#[derive(Parser)]
#[command(name = "peft", version, about = "Parameter-efficient fine-tuning experiments on a toy encoder")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate one config, writing a result file per seed.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Replaces the config's seed list.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a config across one axis; workers come from PEFT_WORKERS.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        axis: SweepAxis,
        /// Method names, compression exponents n (factor 2^n), or seeds.
        #[arg(long, num_args = 0.., value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a comparison table from a directory of result files.
    Report {
        #[arg(long)]
        dir: PathBuf,
        /// Print CSV instead of markdown.
        #[arg(long)]
        csv: bool,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Json(_) => 2,
        Error::Divergence(_) | Error::NonFinite { .. } => 3,
        Error::Io(_) | Error::Format(_) => 4,
        _ => 1,
    }
}

fn out_dir(flag: Option<PathBuf>, config: &ExperimentConfig) -> PathBuf {
    flag.or_else(|| config.output.clone()).unwrap_or_else(|| PathBuf::from("results"))
}

fn execute(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run { config, seed, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seeds = vec![s];
            }
            let dir = out_dir(out, &cfg);
            for (r, path) in run_experiment(&cfg, &dir)? {
                let primary = r.primary().map(|e| format!("{} {:.4}", e.metric, e.value)).unwrap_or_default();
                println!(
                    "{} seed {}: {primary}, trainable {} ({:.2}%), best epoch {} -> {}",
                    r.method,
                    r.seed,
                    r.params.trainable,
                    r.params.percent,
                    r.best_epoch,
                    path.display()
                );
            }
        }
        Command::Sweep { config, axis, values, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let dir = out_dir(out, &cfg);
            let summary = run_sweep(&cfg, axis, &values, &dir, workers_from_env()?)?;
            for s in &summary.skipped {
                eprintln!("skipped n={}: {}", s.n, s.reason);
            }
            println!(
                "{} runs ({} failed) -> {}",
                summary.rows.len(),
                summary.failures(),
                summary.csv.display()
            );
        }
        Command::Report { dir, csv } => {
            let rep = emit_report(&dir)?;
            for (p, why) in &rep.skipped {
                eprintln!("warning: skipped {}: {why}", p.display());
            }
            print!("{}", if csv { &rep.csv } else { &rep.markdown });
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
