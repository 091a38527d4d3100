//! CMA-lite on the 2D sphere: the covariance first stretches along the
//! direction of progress, then shrinks as the mean settles at the optimum.
//!
//! ```text
//! cargo run --release --example cma_sphere [trace.csv]
//! ```

use std::fs::File;

use ppo_cma::cma::{write_trace_csv, CmaState};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> ppo_cma::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut state = CmaState::isotropic(vec![3.0, 3.0], 1.0, 64)?;
    let mut rows = Vec::new();
    for _ in 0..200 {
        let row = state.iterate(|x| -x.iter().map(|v| v * v).sum::<f64>(), &mut rng)?;
        if row.iteration % 10 == 0 || row.iteration <= 5 {
            println!(
                "iter {:>3}  |mean| {:.2e}  trace(C) {:.2e}  |path| {:.2e}",
                row.iteration, row.mean_norm, row.cov_trace, row.path_norm
            );
        }
        let done = row.mean_norm < 1e-6;
        rows.push(row);
        if done {
            break;
        }
    }
    println!("mean {:?} after {} iterations", state.mean.as_slice(), state.iteration);
    if let Some(path) = std::env::args().nth(1) {
        write_trace_csv(File::create(&path)?, &rows)?;
        println!("wrote {path}");
    }
    Ok(())
}
