//! Grid sweeps over tasks, algorithm settings and seeds, scored with
//! [`normalize_scores`]. Finished runs are detected and reused.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::algorithms::Mode;
use crate::error::{Error, Result};
use crate::harness::{csv_bytes, read_summary, run_seed, write_atomic, ExperimentConfig, RunSummary, CONFIG_FILE};
use crate::scores::{normalize_scores, ScoreTable, ScoredRun};

pub const SCORES_JSON: &str = "scores.json";
pub const SCORES_CSV: &str = "scores.csv";

/// A task: an environment plus settings that only make sense for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepTask {
    pub env: String,
    #[serde(default)]
    pub overrides: BTreeMap<String, Value>,
}

/// One algorithm and the grid of values to try for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepArm {
    pub mode: Mode,
    #[serde(default)]
    pub grid: BTreeMap<String, Vec<Value>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default)]
    pub base: ExperimentConfig,
    pub tasks: Vec<SweepTask>,
    pub arms: Vec<SweepArm>,
    pub output_dir: PathBuf,
}

/// A fully specified grid point for one task.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub task: String,
    pub setting: String,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub table: ScoreTable,
    pub runs: Vec<RunSummary>,
    /// Runs reused from earlier invocations.
    pub reused: usize,
}

fn value_label(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn slug(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' || c == '=' { c } else { '_' })
        .collect()
}

impl SweepConfig {
    pub fn load(path: &Path) -> Result<Self> {
        serde_json::from_str(&fs::read_to_string(path)?).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    /// Expands the grid: every task crossed with every arm's cartesian product.
    pub fn points(&self) -> Result<Vec<SweepPoint>> {
        if self.tasks.is_empty() || self.arms.is_empty() {
            return Err(Error::InvalidConfig("a sweep needs at least one task and one arm".into()));
        }
        let mut points = Vec::new();
        for arm in &self.arms {
            let mut combos: Vec<Vec<(&String, &Value)>> = vec![Vec::new()];
            for (key, values) in &arm.grid {
                if values.is_empty() {
                    return Err(Error::InvalidConfig(format!("grid axis {key} is empty")));
                }
                combos = combos
                    .into_iter()
                    .flat_map(|c| {
                        values.iter().map(move |v| {
                            let mut c = c.clone();
                            c.push((key, v));
                            c
                        })
                    })
                    .collect();
            }
            for combo in combos {
                let mut setting = arm.mode.to_string();
                for (k, v) in &combo {
                    setting.push_str(&format!(" {k}={}", value_label(v)));
                }
                for task in &self.tasks {
                    let mut config = self.base.with_value("env", Value::String(task.env.clone()))?;
                    for (k, v) in &task.overrides {
                        config = config.with_value(k, v.clone())?;
                    }
                    config = config.with_value("algo.mode", Value::String(arm.mode.to_string()))?;
                    for (k, v) in &combo {
                        config = config.with_value(k, (*v).clone())?;
                    }
                    config.label = Some(setting.clone());
                    config.output_dir = self.output_dir.join(slug(&task.env)).join(slug(&setting));
                    config.resolve()?;
                    points.push(SweepPoint {
                        task: task.env.clone(),
                        setting: setting.clone(),
                        config,
                    });
                }
            }
        }
        Ok(points)
    }
}

/// A finished run whose recorded configuration matches `config` for `seed`.
pub fn completed_run(config: &ExperimentConfig, seed: u64) -> Option<RunSummary> {
    let dir = config.run_dir(seed);
    let recorded = ExperimentConfig::load(&dir.join(CONFIG_FILE)).ok()?;
    let mut expected = config.clone();
    expected.seeds = vec![seed];
    expected.algo = config.resolve().ok()?.0;
    let summary = read_summary(&dir).ok()?;
    (recorded == expected && summary.seed == seed).then_some(summary)
}

/// Runs (or reuses) every point and seed, then scores settings across tasks.
pub fn sweep(config: &SweepConfig) -> Result<SweepReport> {
    let points = config.points()?;
    let mut runs = Vec::new();
    let mut scored = Vec::new();
    let mut reused = 0;
    for point in &points {
        for &seed in &point.config.seeds {
            let summary = match completed_run(&point.config, seed) {
                Some(summary) => {
                    reused += 1;
                    summary
                }
                None => run_seed(&point.config, seed)?.summary,
            };
            scored.push(ScoredRun {
                task: point.task.clone(),
                setting: point.setting.clone(),
                r: summary.final_return,
            });
            runs.push(summary);
        }
    }
    let table = normalize_scores(&scored)?;
    write_atomic(&config.output_dir.join(SCORES_JSON), serde_json::to_string_pretty(&table)?.as_bytes())?;
    write_atomic(&config.output_dir.join(SCORES_CSV), &csv_bytes(&table.settings)?)?;
    Ok(SweepReport { table, runs, reused })
}

/// Collects the summaries under each directory (searched recursively).
pub fn find_summaries(roots: &[PathBuf]) -> Result<Vec<RunSummary>> {
    fn walk(dir: &Path, out: &mut Vec<RunSummary>) -> Result<()> {
        if dir.join(crate::harness::SUMMARY_FILE).is_file() {
            out.push(read_summary(dir)?);
        }
        let mut children: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        children.sort();
        for child in children {
            walk(&child, out)?;
        }
        Ok(())
    }
    let mut out = Vec::new();
    for root in roots {
        if !root.is_dir() {
            return Err(Error::InvalidArgument(format!("{} is not a directory", root.display())));
        }
        walk(root, &mut out)?;
    }
    Ok(out)
}

/// Scores run summaries, treating each environment as a task.
pub fn score_summaries(summaries: &[RunSummary]) -> Result<ScoreTable> {
    let runs: Vec<ScoredRun> = summaries
        .iter()
        .map(|s| ScoredRun {
            task: s.env.clone(),
            setting: s.setting.clone(),
            r: s.final_return,
        })
        .collect();
    normalize_scores(&runs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algorithms::AlgoConfig;

    fn sweep_config(dir: &Path, grid: BTreeMap<String, Vec<Value>>) -> SweepConfig {
        SweepConfig {
            base: ExperimentConfig {
                algo: AlgoConfig {
                    n: 20,
                    k: 2,
                    m: 8,
                    h: 2,
                    ..Default::default()
                },
                total_steps: 40,
                seeds: vec![1],
                hidden: vec![6],
                pretrain_steps: 10,
                pretrain_batch: 8,
                record_didactic: false,
                ..Default::default()
            },
            tasks: vec![SweepTask {
                env: "quadratic".into(),
                overrides: BTreeMap::from([("algo.gamma".to_string(), Value::from(0.0))]),
            }],
            arms: vec![SweepArm {
                mode: Mode::PpoCma,
                grid,
            }],
            output_dir: dir.to_path_buf(),
        }
    }

    #[test]
    fn grid_expands_to_cartesian_product() {
        let dir = tempfile::tempdir().unwrap();
        let grid = BTreeMap::from([
            ("algo.h".to_string(), vec![Value::from(1), Value::from(3)]),
            ("algo.m".to_string(), vec![Value::from(8), Value::from(16)]),
        ]);
        let mut config = sweep_config(dir.path(), grid);
        config.tasks.push(SweepTask {
            env: "point-mass".into(),
            overrides: BTreeMap::from([
                ("algo.n".to_string(), Value::from(100)),
                ("total_steps".to_string(), Value::from(200)),
            ]),
        });
        let points = config.points().unwrap();
        assert_eq!(points.len(), 8);
        assert_eq!(points[0].setting, "ppo-cma algo.h=1 algo.m=8");
        assert_eq!(points[0].config.algo.gamma, 0.0);
        assert_eq!(points[1].config.algo.n, 100);
        assert_eq!(points[1].config.algo.h, 1);
        assert_eq!(points[7].config.algo.m, 16);
    }

    #[test]
    fn single_point_scores_one_and_resumes() {
        let dir = tempfile::tempdir().unwrap();
        let config = sweep_config(dir.path(), BTreeMap::new());
        let first = sweep(&config).unwrap();
        assert_eq!(first.table.settings.len(), 1);
        assert_eq!(first.table.settings[0].score, 1.0);
        assert_eq!(first.reused, 0);
        let second = sweep(&config).unwrap();
        assert_eq!(second.reused, 1);
        assert_eq!(second.runs, first.runs);
        assert!(dir.path().join(SCORES_CSV).exists());

        let found = find_summaries(&[dir.path().to_path_buf()]).unwrap();
        assert_eq!(found, first.runs);
        assert_eq!(score_summaries(&found).unwrap().settings[0].score, 1.0);
    }

    #[test]
    fn changed_config_is_rerun() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = sweep_config(dir.path(), BTreeMap::new());
        sweep(&config).unwrap();
        config.base.algo.k = 3;
        assert_eq!(sweep(&config).unwrap().reused, 0);
    }

    #[test]
    fn bad_sweeps_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let grid = BTreeMap::from([("algo.h".to_string(), vec![])]);
        assert!(sweep_config(dir.path(), grid).points().is_err());
        let grid = BTreeMap::from([("algo.zz".to_string(), vec![Value::from(1)])]);
        assert!(sweep_config(dir.path(), grid).points().is_err());
        let mut c = sweep_config(dir.path(), BTreeMap::new());
        c.tasks.clear();
        assert!(c.points().is_err());
    }
}
