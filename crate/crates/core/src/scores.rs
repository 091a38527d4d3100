//! Min-max score normalization across runs, tasks and settings.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Final return of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredRun {
    pub task: String,
    pub setting: String,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingScore {
    pub setting: String,
    /// Mean normalized score relative to the best setting, which scores 1.
    pub score: f64,
    /// Mean normalized score before the best-setting rescale.
    pub raw: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    /// In order of first appearance.
    pub settings: Vec<SettingScore>,
    /// Tasks whose returns were all equal; their runs score 0.5.
    pub degenerate_tasks: Vec<String>,
}

impl ScoreTable {
    pub fn score(&self, setting: &str) -> Option<f64> {
        self.settings.iter().find(|s| s.setting == setting).map(|s| s.score)
    }
}

/// `(R - R_min) / (R_max - R_min)`; `None` when all values are equal.
pub fn normalize_returns(returns: &[f64]) -> Option<Vec<f64>> {
    let lo = returns.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = returns.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (hi > lo).then(|| returns.iter().map(|r| (r - lo) / (hi - lo)).collect())
}

/// Normalizes each run within its task, averages per setting over all its
/// runs, and rescales so the best setting scores 1.
pub fn normalize_scores(runs: &[ScoredRun]) -> Result<ScoreTable> {
    if runs.is_empty() {
        return Err(Error::Empty("scored runs"));
    }
    if runs.iter().any(|r| !r.r.is_finite()) {
        return Err(Error::NonFinite("run return"));
    }
    let mut by_task: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, run) in runs.iter().enumerate() {
        by_task.entry(&run.task).or_default().push(i);
    }
    let mut normalized = vec![0.0; runs.len()];
    let mut degenerate_tasks = Vec::new();
    for (task, idx) in by_task {
        let returns: Vec<f64> = idx.iter().map(|&i| runs[i].r).collect();
        match normalize_returns(&returns) {
            Some(scores) => idx.iter().zip(scores).for_each(|(&i, s)| normalized[i] = s),
            None => {
                idx.iter().for_each(|&i| normalized[i] = 0.5);
                degenerate_tasks.push(task.to_string());
            }
        }
    }
    let mut settings: Vec<SettingScore> = Vec::new();
    for (run, score) in runs.iter().zip(&normalized) {
        match settings.iter_mut().find(|s| s.setting == run.setting) {
            Some(s) => {
                s.raw += score;
                s.runs += 1;
            }
            None => settings.push(SettingScore {
                setting: run.setting.clone(),
                score: 0.0,
                raw: *score,
                runs: 1,
            }),
        }
    }
    for s in &mut settings {
        s.raw /= s.runs as f64;
    }
    let best = settings.iter().map(|s| s.raw).fold(0.0, f64::max);
    for s in &mut settings {
        s.score = if best > 0.0 { s.raw / best } else { 1.0 };
    }
    Ok(ScoreTable {
        settings,
        degenerate_tasks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, proptest};

    fn run(task: &str, setting: &str, r: f64) -> ScoredRun {
        ScoredRun {
            task: task.into(),
            setting: setting.into(),
            r,
        }
    }

    #[test]
    fn affine_map() {
        assert_eq!(normalize_returns(&[10.0, 20.0, 30.0]).unwrap(), vec![0.0, 0.5, 1.0]);
        assert!(normalize_returns(&[3.0, 3.0]).is_none());
    }

    #[test]
    fn per_setting_means_then_best_is_one() {
        // Per-task normalized means of 0.4 and 0.8.
        let runs = [
            run("a", "x", 0.0),
            run("a", "x", 0.8),
            run("a", "y", 0.6),
            run("a", "y", 1.0),
        ];
        let table = normalize_scores(&runs).unwrap();
        assert!((table.settings[0].raw - 0.4).abs() < 1e-12);
        assert!((table.settings[1].raw - 0.8).abs() < 1e-12);
        assert!((table.score("x").unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(table.score("y"), Some(1.0));
    }

    #[test]
    fn three_settings_one_run_each() {
        let runs = [run("a", "p", 10.0), run("a", "q", 20.0), run("a", "r", 30.0)];
        let table = normalize_scores(&runs).unwrap();
        let scores: Vec<f64> = table.settings.iter().map(|s| s.score).collect();
        assert_eq!(scores, vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn single_setting_scores_one() {
        let table = normalize_scores(&[run("a", "only", 5.0), run("a", "only", 7.0)]).unwrap();
        assert_eq!(table.score("only"), Some(1.0));
    }

    #[test]
    fn degenerate_task_is_flagged() {
        let runs = [
            run("flat", "x", 1.0),
            run("flat", "y", 1.0),
            run("b", "x", 0.0),
            run("b", "y", 2.0),
        ];
        let table = normalize_scores(&runs).unwrap();
        assert_eq!(table.degenerate_tasks, vec!["flat".to_string()]);
        assert!((table.settings[0].raw - 0.25).abs() < 1e-12);
        assert!((table.settings[1].raw - 0.75).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert!(normalize_scores(&[]).is_err());
        assert!(normalize_scores(&[run("a", "x", f64::NAN)]).is_err());
    }

    proptest! {
        #[test]
        fn translation_invariant(rs in proptest::collection::vec(-100.0f64..100.0, 4..12), shift in -1e3f64..1e3) {
            let runs: Vec<ScoredRun> = rs.iter().enumerate()
                .map(|(i, &r)| run(if i % 2 == 0 { "a" } else { "b" }, ["x", "y", "z"][i % 3], r))
                .collect();
            let shifted: Vec<ScoredRun> = runs.iter()
                .map(|r| ScoredRun { r: if r.task == "a" { r.r + shift } else { r.r }, ..r.clone() })
                .collect();
            let t1 = normalize_scores(&runs).unwrap();
            let t2 = normalize_scores(&shifted).unwrap();
            for (a, b) in t1.settings.iter().zip(&t2.settings) {
                prop_assert!((a.score - b.score).abs() < 1e-9);
            }
            prop_assert!(t1.settings.iter().any(|s| s.score == 1.0));
        }
    }
}
