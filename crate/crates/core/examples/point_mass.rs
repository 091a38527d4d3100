//! Trains PPO-CMA on the point-mass task and compares the result against a
//! random policy and a hand-tuned PD controller.
//!
//! ```text
//! cargo run --release --example point_mass [iterations] [out_dir]
//! ```

use std::path::PathBuf;

use ppo_cma::envs::{evaluate_controller, PointMassEnv};
use ppo_cma::harness::{run_seed, ExperimentConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> ppo_cma::Result<()> {
    let mut args = std::env::args().skip(1);
    let iterations: usize = args.next().map(|s| s.parse().expect("iteration count")).unwrap_or(20);
    let mut config = ExperimentConfig::from_json(include_str!("../configs/point_mass.json"))?;
    config.total_steps = iterations * config.algo.n;
    if let Some(out) = args.next() {
        config.output_dir = PathBuf::from(out);
    }

    let mut env = PointMassEnv::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let random = evaluate_controller(&mut env, 500, &mut rng, |_, r| {
        vec![r.random_range(-1.0..=1.0), r.random_range(-1.0..=1.0)]
    })?;
    let (kp, kd) = PointMassEnv::PD_GAINS;
    let pd = evaluate_controller(&mut env, 500, &mut rng, |obs, _| PointMassEnv::pd_action(obs, kp, kd))?;
    println!("random policy {random:.2}, PD controller {pd:.2}");

    let run = run_seed(&config, 0)?;
    println!(
        "PPO-CMA after {} iterations: {:.2} ({:.0}% of the way from random to PD)",
        run.summary.iterations,
        run.summary.final_return,
        100.0 * (run.summary.final_return - random) / (pd - random)
    );
    println!("artifacts in {}", run.dir.display());
    Ok(())
}
