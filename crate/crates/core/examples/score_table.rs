//! Normalized scores across tasks with very different return scales.
//!
//! Each return is mapped to `[0, 1]` within its task, averaged per setting,
//! and rescaled so the best setting scores exactly 1.

use ppo_cma::scores::{normalize_scores, ScoredRun};

fn main() -> ppo_cma::Result<()> {
    let runs: Vec<ScoredRun> = [
        ("quadratic", "ppo-cma", -0.0004),
        ("quadratic", "ppo-cma", -0.0011),
        ("quadratic", "ppo-clip", -0.12),
        ("quadratic", "ppo-clip", -0.10),
        ("point-mass", "ppo-cma", -14.2),
        ("point-mass", "ppo-cma", -16.0),
        ("point-mass", "ppo-clip", -21.5),
        ("point-mass", "ppo-clip", -19.7),
    ]
    .into_iter()
    .map(|(task, setting, r)| ScoredRun {
        task: task.into(),
        setting: setting.into(),
        r,
    })
    .collect();

    let table = normalize_scores(&runs)?;
    println!("{:<10} {:>7} {:>7} {:>5}", "setting", "score", "raw", "runs");
    for s in &table.settings {
        println!("{:<10} {:>7.3} {:>7.3} {:>5}", s.setting, s.score, s.raw, s.runs);
    }

    // Shifting one task's returns by a constant changes nothing.
    let shifted: Vec<ScoredRun> = runs
        .iter()
        .map(|r| ScoredRun {
            r: if r.task == "point-mass" { r.r + 1000.0 } else { r.r },
            ..r.clone()
        })
        .collect();
    let again = normalize_scores(&shifted)?;
    let drift = table
        .settings
        .iter()
        .zip(&again.settings)
        .map(|(a, b)| (a.score - b.score).abs())
        .fold(0.0, f64::max);
    println!("largest score change after shifting point-mass by +1000: {drift:.1e}");
    Ok(())
}
