//! `pmsrl` command line: run experiments, evaluate stored policies, and
//! re-emit study data from stored runs.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pmsrl_cli::config::ExperimentConfig;
use pmsrl_cli::error::HarnessError;
use pmsrl_cli::{formats, harness};
use pmsrl_core::rng::Seed;

#[derive(Parser)]
#[command(
    name = "pmsrl",
    about = "Model-based policy learning for partially measurable systems",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full trial loop described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's root seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the rollout mode.
        #[arg(long, value_parser = ["full-state", "observed"])]
        mode: Option<String>,
    },
    /// Evaluate a stored policy over fresh Monte Carlo runs.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        runs: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Write the evaluation summary here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-emit the study CSVs from one or more stored run directories.
    EmitPlots {
        #[arg(long)]
        records: PathBuf,
        /// Output directory (defaults to each run directory itself).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let payload = serde_json::json!({
                "error": { "category": e.category(), "message": e.to_string() }
            });
            eprintln!("{payload}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Run {
            config,
            seed,
            out,
            mode,
        } => {
            let mut cfg = ExperimentConfig::from_path(&config)?;
            if let Some(seed) = seed {
                cfg.experiment.root_seed = seed;
            }
            if let Some(mode) = mode {
                cfg.experiment.mode = mode;
            }
            let out_dir = out.unwrap_or_else(|| PathBuf::from(&cfg.experiment.out_dir));
            let outcome = harness::run_experiment(&cfg, &out_dir)?;
            for t in &outcome.records.trials {
                println!(
                    "trial {:>2}: rows {:>4}  J {}  eval cost {:.3}  success {}{}",
                    t.trial,
                    t.training_rows,
                    t.final_j_hat
                        .map(|j| format!("{j:.3}"))
                        .unwrap_or_else(|| "   -".into()),
                    t.eval_cost,
                    t.success,
                    t.error
                        .as_deref()
                        .map(|e| format!("  [error: {e}]"))
                        .unwrap_or_default()
                );
            }
            if let Some(eval) = &outcome.records.evaluation {
                match eval.success_rate {
                    Some(rate) => println!(
                        "evaluation: {}/{} runs succeeded (rate {rate:.2})",
                        eval.runs.iter().filter(|r| r.success).count(),
                        eval.n_runs
                    ),
                    None => println!("evaluation: no runs requested"),
                }
            }
            println!("artifacts written to {}", out_dir.display());
            Ok(())
        }
        Command::Evaluate {
            config,
            policy,
            runs,
            seed,
            out,
        } => {
            let mut cfg = ExperimentConfig::from_path(&config)?;
            cfg.evaluation.n_runs = runs;
            if let Some(seed) = seed {
                cfg.experiment.root_seed = seed;
            }
            let policy = formats::policy_from_json(&formats::read_file(&policy)?)?;
            let root = Seed::new(cfg.experiment.root_seed);
            let eval = harness::evaluate_policy_mc(&cfg, &policy, &root.child(1))?;
            let text = serde_json::to_string_pretty(&eval).expect("eval serializes");
            match out {
                Some(path) => formats::write_file(&path, &text)?,
                None => println!("{text}"),
            }
            Ok(())
        }
        Command::EmitPlots { records, out } => {
            let runs = harness::find_run_dirs(&records)?;
            if runs.is_empty() {
                return Err(HarnessError::Config(format!(
                    "no run directories (records.json) found under {}",
                    records.display()
                )));
            }
            for run in &runs {
                let out_dir = out.clone().unwrap_or_else(|| run.clone());
                harness::emit_from_records(run, &out_dir)?;
                println!("study data emitted for {}", run.display());
            }
            Ok(())
        }
    }
}
