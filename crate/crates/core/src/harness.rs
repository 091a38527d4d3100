//! Experiment orchestration: configuration, the collect-and-train loop, and
//! run artifacts.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::algorithms::{AlgoConfig, Learner, Mode, PgStepTrace};
use crate::critic::{Critic, ExperienceTuple, Trajectory};
use crate::envs::{make_env, EpisodeEnd, Env, ObsNormalizer};
use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::policy::{GaussianPolicy, PretrainTarget, DEFAULT_PRETRAIN_BATCH, DEFAULT_PRETRAIN_STEPS, MIN_STD};

pub const STATS_FILE: &str = "stats.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_FILE: &str = "config.json";
pub const POLICY_FILE: &str = "policy.ckpt";
pub const CRITIC_FILE: &str = "critic.ckpt";
pub const NORMALIZER_FILE: &str = "normalizer.json";
pub const DIDACTIC_FILE: &str = "didactic.csv";
pub const PG_TRACE_FILE: &str = "pg_trace.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: String,
    pub action_repeat: usize,
    /// Algorithm settings. The episode cap `t` is always taken from the
    /// environment.
    pub algo: AlgoConfig,
    /// Simulation steps per seed.
    pub total_steps: usize,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Print a progress line every this many iterations; 0 is silent.
    pub log_every: usize,
    pub hidden: Vec<usize>,
    pub pretrain_steps: usize,
    pub pretrain_batch: usize,
    /// Pretraining target mean; defaults to the centre of the action box.
    pub init_mean: Option<Vec<f64>>,
    /// Pretraining target standard deviation; defaults to half the box width.
    pub init_std: Option<Vec<f64>>,
    /// Setting name used when scoring; defaults to the mode.
    pub label: Option<String>,
    /// Record sampled actions and policy ellipses (quadratic task only).
    pub record_didactic: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: "quadratic".into(),
            action_repeat: 1,
            algo: AlgoConfig::default(),
            total_steps: 1_000_000,
            seeds: vec![0],
            output_dir: PathBuf::from("runs"),
            log_every: 0,
            hidden: vec![128, 128],
            pretrain_steps: DEFAULT_PRETRAIN_STEPS,
            pretrain_batch: DEFAULT_PRETRAIN_BATCH,
            init_mean: None,
            init_std: None,
            label: None,
            record_didactic: true,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn setting(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.algo.mode.to_string())
    }

    /// Sets a dotted key such as `algo.n` or `seeds`. The value is parsed as
    /// JSON when possible and taken as a string otherwise.
    pub fn with_override(&self, key: &str, value: &str) -> Result<Self> {
        let parsed = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
        self.with_value(key, parsed)
    }

    pub fn with_value(&self, key: &str, value: Value) -> Result<Self> {
        let mut root = serde_json::to_value(self)?;
        let mut slot = &mut root;
        for part in key.split('.') {
            slot = slot
                .as_object_mut()
                .and_then(|o| o.get_mut(part))
                .ok_or_else(|| Error::InvalidConfig(format!("unknown config key {key:?}")))?;
        }
        *slot = value;
        serde_json::from_value(root).map_err(|e| Error::InvalidConfig(format!("{key}: {e}")))
    }

    /// Parses `key=value` overrides and applies them in order.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut config = self.clone();
        for item in overrides {
            let (key, value) = item
                .as_ref()
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("override {:?} is not key=value", item.as_ref())))?;
            config = config.with_override(key.trim(), value.trim())?;
        }
        Ok(config)
    }

    /// Checks the configuration against its environment and returns the
    /// algorithm settings the run will use, plus any warnings.
    pub fn resolve(&self) -> Result<(AlgoConfig, Vec<String>)> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("seeds must not be empty".into()));
        }
        let env = make_env(&self.env, self.action_repeat)?;
        let mut algo = self.algo.clone();
        algo.t = env.episode_cap();
        let warnings = algo.validate()?;
        if self.total_steps < algo.n {
            return Err(Error::InvalidConfig(format!(
                "total_steps {} is below the iteration budget {}",
                self.total_steps, algo.n
            )));
        }
        let dim = env.action_dim();
        for (name, values) in [("init_mean", &self.init_mean), ("init_std", &self.init_std)] {
            if let Some(v) = values {
                if v.len() != dim || v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::InvalidConfig(format!("{name} needs {dim} finite values")));
                }
            }
        }
        if let Some(std) = &self.init_std {
            if std.iter().any(|&s| s < MIN_STD) {
                return Err(Error::InvalidConfig(format!("init_std entries must be >= {MIN_STD}")));
            }
        }
        if self.pretrain_batch == 0 {
            return Err(Error::InvalidConfig("pretrain_batch must be >= 1".into()));
        }
        Ok((algo, warnings))
    }

    pub fn run_dir(&self, seed: u64) -> PathBuf {
        self.output_dir.join(format!("seed_{seed}"))
    }
}

/// Whole episodes collected in one iteration.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub trajectories: Vec<Trajectory>,
    /// Unscaled observations, for the normalizer.
    pub raw_observations: Vec<Vec<f64>>,
    pub returns: Vec<f64>,
    pub steps: usize,
}

/// Runs episodes to completion until at least `budget` steps are collected.
/// Observations are scaled with the normalizer as it stands; it is not
/// updated here.
pub fn collect<R: RngCore>(
    env: &mut dyn Env,
    policy: &GaussianPolicy,
    normalizer: &ObsNormalizer,
    budget: usize,
    rng: &mut R,
) -> Result<Rollout> {
    let cap = env.episode_cap();
    let mut rollout = Rollout {
        trajectories: Vec::new(),
        raw_observations: Vec::new(),
        returns: Vec::new(),
        steps: 0,
    };
    while rollout.steps < budget {
        let mut raw = env.reset(rng);
        let mut s = normalizer.apply_or_identity(&raw)?;
        let mut traj = Trajectory::default();
        for t in 0..cap {
            rollout.raw_observations.push(raw);
            let a = policy.sample_action(&s, rng)?;
            let step = env.step(&a)?;
            let s_next = normalizer.apply_or_identity(&step.obs)?;
            let end = if step.end == EpisodeEnd::None && t + 1 == cap {
                EpisodeEnd::Timeout
            } else {
                step.end
            };
            traj.tuples.push(ExperienceTuple {
                s,
                a,
                r: step.reward,
                s_next: s_next.clone(),
                end,
                t,
            });
            raw = step.obs;
            s = s_next;
            if end.is_done() {
                break;
            }
        }
        rollout.steps += traj.len();
        rollout.returns.push(traj.undiscounted_return());
        rollout.trajectories.push(traj);
    }
    Ok(rollout)
}

/// One row of `stats.csv`. Columns an algorithm does not produce stay empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub iteration: usize,
    pub env_steps: usize,
    pub mean_return: f64,
    pub mean_sigma: f64,
    pub max_sigma: f64,
    pub mean_mu_norm: f64,
    pub frac_positive_adv: Option<f64>,
    pub critic_loss: Option<f64>,
    pub policy_loss: Option<f64>,
    pub k_min: Option<f64>,
    pub k_max: Option<f64>,
}

/// Exploration statistics of `policy` over a batch of states.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicySpread {
    pub mean_sigma: f64,
    pub max_sigma: f64,
    pub mean_mu_norm: f64,
}

pub fn policy_spread(policy: &GaussianPolicy, states: &Matrix) -> Result<PolicySpread> {
    if states.rows() == 0 {
        return Err(Error::Empty("states"));
    }
    let (mean, var) = policy.mean_and_var(states)?;
    let sigmas: Vec<f64> = var.as_slice().iter().map(|c| c.sqrt()).collect();
    Ok(PolicySpread {
        mean_sigma: sigmas.iter().sum::<f64>() / sigmas.len() as f64,
        max_sigma: sigmas.iter().copied().fold(0.0, f64::max),
        mean_mu_norm: mean
            .iter_rows()
            .map(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt())
            .sum::<f64>()
            / mean.rows() as f64,
    })
}

/// Final record of one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub env: String,
    pub mode: Mode,
    pub setting: String,
    pub seed: u64,
    pub iterations: usize,
    pub env_steps: usize,
    /// Mean undiscounted return of the last iteration's episodes.
    pub final_return: f64,
    /// Mean sigma of the pretrained policy over the first iteration's states.
    pub initial_mean_sigma: f64,
    /// Largest per-iteration mean sigma, including the final policy.
    pub max_mean_sigma: f64,
    /// Mean sigma of the final policy over the last iteration's states.
    pub final_mean_sigma: f64,
    pub final_mean_mu_norm: f64,
}

/// Sampled actions and the sampling policy on the quadratic task. A row
/// without an action carries only the policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DidacticRow {
    pub iteration: usize,
    pub a0: Option<f64>,
    pub a1: Option<f64>,
    pub mean0: f64,
    pub mean1: f64,
    pub std0: f64,
    pub std1: f64,
}

/// Everything a single-seed run produces.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub stats: Vec<StatsRow>,
    pub summary: RunSummary,
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer.serialize(row)?;
    }
    writer
        .into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut reader = csv::Reader::from_path(path)?;
    reader.deserialize().map(|r| r.map_err(Error::from)).collect()
}

pub fn read_summary(dir: &Path) -> Result<RunSummary> {
    Ok(serde_json::from_str(&fs::read_to_string(dir.join(SUMMARY_FILE))?)?)
}

/// Runs every seed of `config`, writing each seed's artifacts under
/// `output_dir/seed_<seed>`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<RunArtifacts>> {
    let (_, warnings) = config.resolve()?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    config.seeds.iter().map(|&seed| run_seed(config, seed)).collect()
}

/// Pretrains, then alternates collection and updates until the step budget is
/// spent.
pub fn run_seed(config: &ExperimentConfig, seed: u64) -> Result<RunArtifacts> {
    let (algo, _) = config.resolve()?;
    let mut env = make_env(&config.env, config.action_repeat)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bounds = env.bounds().clone();
    let obs_dim = env.obs_dim();

    let mut policy = if algo.mode.uses_shared_net() {
        GaussianPolicy::shared(obs_dim, &config.hidden, bounds.clone(), rng.next_u64())?
    } else {
        GaussianPolicy::split(obs_dim, &config.hidden, bounds.clone(), rng.next_u64())?
    };
    let mut target = PretrainTarget::from_bounds(&bounds);
    if let Some(mean) = &config.init_mean {
        target.mean = mean.clone();
    }
    if let Some(std) = &config.init_std {
        target.std = std.clone();
    }
    policy.pretrain(&target, &mut rng, config.pretrain_steps, config.pretrain_batch)?;
    let critic = Critic::new(obs_dim, &config.hidden, algo.t, rng.next_u64())?;
    let mut learner = Learner::new(policy, critic, algo.clone())?;
    let mut normalizer = ObsNormalizer::new(obs_dim);

    let didactic = config.record_didactic && config.env == "quadratic";
    let mut didactic_rows = Vec::new();
    let mut pg_trace: Vec<PgStepTrace> = Vec::new();
    let mut stats = Vec::new();
    let mut env_steps = 0;
    let mut initial_sigma = f64::NAN;
    let mut max_sigma = f64::NEG_INFINITY;
    let mut last_states = None;
    let mut last_returns = Vec::new();

    while env_steps < config.total_steps {
        let rollout = collect(&mut env, &learner.policy, &normalizer, algo.n, &mut rng)?;
        env_steps += rollout.steps;
        let states: Vec<&[f64]> = rollout
            .trajectories
            .iter()
            .flat_map(|t| t.tuples.iter().map(|x| x.s.as_slice()))
            .collect();
        let states = Matrix::from_rows(obs_dim, &states)?;
        let spread = policy_spread(&learner.policy, &states)?;
        if stats.is_empty() {
            initial_sigma = spread.mean_sigma;
        }
        max_sigma = max_sigma.max(spread.mean_sigma);
        if didactic {
            record_didactic(&mut didactic_rows, stats.len() + 1, &learner.policy, &rollout)?;
        }

        normalizer.update(&rollout.raw_observations)?;
        let update = learner.update(&rollout.trajectories, &mut rng)?;
        if pg_trace.is_empty() && !learner.pg_trace.is_empty() {
            pg_trace = learner.pg_trace.clone();
        }
        let scale = normalizer.scale().expect("updated above");
        let mean_return = rollout.returns.iter().sum::<f64>() / rollout.returns.len() as f64;
        let row = StatsRow {
            iteration: stats.len() + 1,
            env_steps,
            mean_return,
            mean_sigma: spread.mean_sigma,
            max_sigma: spread.max_sigma,
            mean_mu_norm: spread.mean_mu_norm,
            frac_positive_adv: Some(update.frac_positive_adv),
            critic_loss: Some(update.critic_loss),
            policy_loss: Some(update.policy_loss),
            k_min: scale.iter().copied().reduce(f64::min),
            k_max: scale.iter().copied().reduce(f64::max),
        };
        if config.log_every > 0 && row.iteration % config.log_every == 0 {
            eprintln!(
                "[{} seed {seed}] iter {} steps {} return {:.4} sigma {:.4}",
                config.setting(),
                row.iteration,
                row.env_steps,
                row.mean_return,
                row.mean_sigma
            );
        }
        stats.push(row);
        last_states = Some(states);
        last_returns = rollout.returns;
    }

    let last_states = last_states.ok_or(Error::Empty("iterations"))?;
    let final_spread = policy_spread(&learner.policy, &last_states)?;
    let summary = RunSummary {
        env: config.env.clone(),
        mode: algo.mode,
        setting: config.setting(),
        seed,
        iterations: stats.len(),
        env_steps,
        final_return: last_returns.iter().sum::<f64>() / last_returns.len() as f64,
        initial_mean_sigma: initial_sigma,
        max_mean_sigma: max_sigma.max(final_spread.mean_sigma),
        final_mean_sigma: final_spread.mean_sigma,
        final_mean_mu_norm: final_spread.mean_mu_norm,
    };

    let dir = config.run_dir(seed);
    let mut resolved = config.clone();
    resolved.seeds = vec![seed];
    resolved.algo = algo;
    write_atomic(&dir.join(STATS_FILE), &csv_bytes(&stats)?)?;
    write_atomic(&dir.join(CONFIG_FILE), serde_json::to_string_pretty(&resolved)?.as_bytes())?;
    let mut buf = Vec::new();
    learner.policy.write_checkpoint(&mut buf)?;
    write_atomic(&dir.join(POLICY_FILE), &buf)?;
    let mut buf = Vec::new();
    learner.critic.write_checkpoint(&mut buf)?;
    write_atomic(&dir.join(CRITIC_FILE), &buf)?;
    write_atomic(&dir.join(NORMALIZER_FILE), serde_json::to_string(&normalizer)?.as_bytes())?;
    if didactic {
        write_atomic(&dir.join(DIDACTIC_FILE), &csv_bytes(&didactic_rows)?)?;
        if !pg_trace.is_empty() {
            write_atomic(&dir.join(PG_TRACE_FILE), &csv_bytes(&pg_trace_rows(&pg_trace))?)?;
        }
    }
    // The summary goes last: its presence marks a complete run.
    write_atomic(&dir.join(SUMMARY_FILE), serde_json::to_string_pretty(&summary)?.as_bytes())?;
    Ok(RunArtifacts { dir, stats, summary })
}

fn record_didactic(rows: &mut Vec<DidacticRow>, iteration: usize, policy: &GaussianPolicy, rollout: &Rollout) -> Result<()> {
    let state = Matrix::zeros(1, policy.obs_dim());
    let (mean, var) = policy.mean_and_var(&state)?;
    let (m, c) = (mean.row(0), var.row(0));
    let policy_row = |a: Option<&[f64]>| DidacticRow {
        iteration,
        a0: a.map(|a| a[0]),
        a1: a.map(|a| a[1]),
        mean0: m[0],
        mean1: m[1],
        std0: c[0].sqrt(),
        std1: c[1].sqrt(),
    };
    rows.push(policy_row(None));
    for tuple in rollout.trajectories.iter().flat_map(|t| &t.tuples) {
        rows.push(policy_row(Some(&tuple.a)));
    }
    Ok(())
}

/// Flat CSV form of a vanilla-PG step trace (two action dimensions).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PgTraceRow {
    pub step: usize,
    pub loss: f64,
    pub mean0: f64,
    pub mean1: f64,
    pub std0: f64,
    pub std1: f64,
    pub mu_norm: f64,
}

pub fn pg_trace_rows(trace: &[PgStepTrace]) -> Vec<PgTraceRow> {
    trace
        .iter()
        .map(|t| PgTraceRow {
            step: t.step,
            loss: t.loss,
            mean0: t.mean[0],
            mean1: t.mean.get(1).copied().unwrap_or(0.0),
            std0: t.std[0],
            std1: t.std.get(1).copied().unwrap_or(0.0),
            mu_norm: t.mean.iter().map(|x| x * x).sum::<f64>().sqrt(),
        })
        .collect()
}
