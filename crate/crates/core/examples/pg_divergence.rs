//! Vanilla policy gradient reusing one batch for many minibatch steps.
//!
//! Actions are sampled around the optimum of the quadratic task and labelled
//! with signed advantages `r - mean(r)`. Each step pushes the Gaussian further
//! from the negative-advantage actions, so the mean drifts away and the
//! standard deviation collapses.
//!
//! ```text
//! cargo run --release --example pg_divergence [out_dir]
//! ```

use std::path::PathBuf;

use ppo_cma::algorithms::{vanilla_pg_update, AlgoConfig, Mode, ProcessedBatch};
use ppo_cma::envs::QuadraticEnv;
use ppo_cma::harness::{csv_bytes, pg_trace_rows, write_atomic, PG_TRACE_FILE};
use ppo_cma::nn::Matrix;
use ppo_cma::policy::{ActionBounds, GaussianPolicy, PolicyOptimizer, PretrainTarget};
use ppo_cma::viz::{render_pg_trace, PG_TRACE_SVG};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> ppo_cma::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "runs/pg_divergence".into()));
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let bounds = ActionBounds::symmetric(2, 1.0)?;
    let mut policy = GaussianPolicy::shared(1, &[128, 128], bounds.clone(), 7)?;
    policy.pretrain(&PretrainTarget::from_bounds(&bounds), &mut rng, 4000, 128)?;

    let n = 200;
    let states = Matrix::zeros(n, 1);
    let actions: Vec<Vec<f64>> = (0..n)
        .map(|i| policy.sample_action(states.row(i), &mut rng))
        .collect::<ppo_cma::Result<_>>()?;
    let rewards: Vec<f64> = actions.iter().map(|a| QuadraticEnv::reward(a)).collect();
    let baseline = rewards.iter().sum::<f64>() / n as f64;
    let advantages = rewards.iter().map(|r| r - baseline).collect();
    let batch = ProcessedBatch::from_policy(&policy, states, Matrix::from_rows(2, &actions)?, advantages)?;

    let config = AlgoConfig {
        mode: Mode::VanillaPg,
        k: 100,
        m: 64,
        ..Default::default()
    };
    let mut optimizer = PolicyOptimizer::new(&policy, config.learning_rate);
    let trace = vanilla_pg_update(&mut policy, &mut optimizer, &batch, &config, &[0.0], &mut rng)?;
    let rows = pg_trace_rows(&trace);
    for row in rows.iter().step_by(10).chain(rows.last()) {
        println!(
            "step {:>3}  |mu| {:.4}  mu ({:+.4}, {:+.4})  sigma ({:.4}, {:.4})",
            row.step, row.mu_norm, row.mean0, row.mean1, row.std0, row.std1
        );
    }

    let samples: Vec<[f64; 2]> = actions.iter().map(|a| [a[0], a[1]]).collect();
    std::fs::create_dir_all(&out)?;
    write_atomic(&out.join(PG_TRACE_FILE), &csv_bytes(&rows)?)?;
    write_atomic(&out.join(PG_TRACE_SVG), render_pg_trace(&rows, &samples).as_bytes())?;
    println!("wrote {}", out.display());
    Ok(())
}
