use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ppo_cma::harness::{run_experiment, ExperimentConfig};
use ppo_cma::scores::ScoreTable;
use ppo_cma::sweep::{find_summaries, score_summaries, sweep, SweepConfig};
use ppo_cma::viz::emit_didactic_viz;

#[derive(Parser)]
#[command(name = "ppo-cma", version, about = "PPO-CMA experiments on small continuous-control tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of an experiment config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Run only this seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
        /// `key=value` with dotted keys, e.g. `algo.n=2000`. Repeatable.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Run a grid sweep and print normalized scores.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Render SVG figures for a quadratic-task run directory.
    Viz {
        #[arg(long)]
        run_dir: PathBuf,
    },
    /// Score finished runs found under the given directories.
    Score {
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
    },
}

fn print_table(table: &ScoreTable) {
    println!("{:<48} {:>8} {:>8} {:>5}", "setting", "score", "raw", "runs");
    for s in &table.settings {
        println!("{:<48} {:>8.4} {:>8.4} {:>5}", s.setting, s.score, s.raw, s.runs);
    }
    for task in &table.degenerate_tasks {
        println!("warning: all returns equal on {task}; its runs score 0.5");
    }
}

fn execute(cli: Cli) -> ppo_cma::Result<()> {
    match cli.command {
        Command::Run { config, seed, overrides } => {
            let mut config = ExperimentConfig::load(&config)?.with_overrides(&overrides)?;
            if let Some(seed) = seed {
                config.seeds = vec![seed];
            }
            for run in run_experiment(&config)? {
                let s = &run.summary;
                println!(
                    "{} seed {}: {} iterations, {} steps, final return {:.4}, final sigma {:.4} -> {}",
                    s.setting,
                    s.seed,
                    s.iterations,
                    s.env_steps,
                    s.final_return,
                    s.final_mean_sigma,
                    run.dir.display()
                );
            }
        }
        Command::Sweep { config } => {
            let report = sweep(&SweepConfig::load(&config)?)?;
            println!("{} runs, {} reused", report.runs.len(), report.reused);
            print_table(&report.table);
        }
        Command::Viz { run_dir } => {
            for path in emit_didactic_viz(&run_dir)? {
                println!("{}", path.display());
            }
        }
        Command::Score { runs } => {
            let summaries = find_summaries(&runs)?;
            print_table(&score_summaries(&summaries)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
