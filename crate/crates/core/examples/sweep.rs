//! A small grid sweep on the quadratic task: history length H for PPO-CMA
//! against the clipping range for PPO. Running it twice reuses the finished
//! runs. The desk-scale grid over both tasks is `configs/sweep.json`, run with
//! `ppo-cma sweep --config configs/sweep.json`.
//!
//! ```text
//! cargo run --release --example sweep [out_dir]
//! ```

use std::collections::BTreeMap;
use std::path::PathBuf;

use ppo_cma::algorithms::Mode;
use ppo_cma::harness::ExperimentConfig;
use ppo_cma::sweep::{sweep, SweepArm, SweepConfig, SweepTask};
use serde_json::json;

fn main() -> ppo_cma::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "runs/sweep-example".into()));
    let mut base = ExperimentConfig::from_json(include_str!("../configs/didactic.json"))?;
    base.total_steps = 4000;
    base.seeds = vec![0, 1];
    base.log_every = 0;
    base.algo.k = 50;
    let config = SweepConfig {
        base,
        tasks: vec![SweepTask {
            env: "quadratic".into(),
            overrides: BTreeMap::new(),
        }],
        arms: vec![
            SweepArm {
                mode: Mode::PpoCma,
                grid: BTreeMap::from([("algo.h".to_string(), vec![json!(1), json!(9)])]),
            },
            SweepArm {
                mode: Mode::PpoClip,
                grid: BTreeMap::from([("algo.epsilon".to_string(), vec![json!(0.1), json!(0.3)])]),
            },
        ],
        output_dir: out,
    };

    let report = sweep(&config)?;
    println!("{} runs ({} reused)", report.runs.len(), report.reused);
    for s in &report.table.settings {
        println!("{:<24} {:.3}", s.setting, s.score);
    }
    let again = sweep(&config)?;
    println!("second pass reused {} of {} runs", again.reused, again.runs.len());
    Ok(())
}
