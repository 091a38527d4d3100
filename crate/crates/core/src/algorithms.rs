//! Policy updates: vanilla policy gradient, PPO with the clipped surrogate,
//! and PPO-CMA with clipping or mirroring of negative advantages and a history
//! buffer for variance training.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::critic::{gae, Critic, Trajectory};
use crate::error::{ensure_dim, Error, Result};
use crate::nn::{minibatch_indices, Adam, Matrix};
use crate::policy::{gaussian_entropy, gaussian_log_density, GaussianPolicy, Phase, PolicyOptimizer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    VanillaPg,
    PpoClip,
    PpoCma,
    PpoCmaNoMirror,
    PpoCmaSingleNet,
}

impl Mode {
    pub const ALL: [Mode; 5] = [
        Mode::VanillaPg,
        Mode::PpoClip,
        Mode::PpoCma,
        Mode::PpoCmaNoMirror,
        Mode::PpoCmaSingleNet,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::VanillaPg => "vanilla-pg",
            Mode::PpoClip => "ppo-clip",
            Mode::PpoCma => "ppo-cma",
            Mode::PpoCmaNoMirror => "ppo-cma-no-mirror",
            Mode::PpoCmaSingleNet => "ppo-cma-single-net",
        }
    }

    /// Whether the policy is one network emitting both mean and variance.
    pub fn uses_shared_net(self) -> bool {
        !matches!(self, Mode::PpoCma | Mode::PpoCmaNoMirror)
    }

    pub fn is_ppo_cma(self) -> bool {
        matches!(self, Mode::PpoCma | Mode::PpoCmaNoMirror | Mode::PpoCmaSingleNet)
    }

    pub fn mirrors(self) -> bool {
        self == Mode::PpoCma
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown mode {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlgoConfig {
    /// Simulation steps per iteration.
    pub n: usize,
    /// Episode cap in policy steps.
    pub t: usize,
    pub gamma: f64,
    pub lambda: f64,
    /// Minibatch steps per training phase.
    pub k: usize,
    /// Minibatch size.
    pub m: usize,
    /// History length in iterations.
    pub h: usize,
    pub epsilon: f64,
    pub w_entropy: f64,
    pub learning_rate: f64,
    pub mode: Mode,
}

impl Default for AlgoConfig {
    fn default() -> Self {
        Self {
            n: 8000,
            t: 1000,
            gamma: 0.99,
            lambda: 0.95,
            k: 100,
            m: 512,
            h: 9,
            epsilon: 0.2,
            w_entropy: 0.0,
            learning_rate: Adam::DEFAULT_LEARNING_RATE,
            mode: Mode::PpoCma,
        }
    }
}

impl AlgoConfig {
    /// Checks hard constraints and returns soft warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n == 0 || self.t == 0 || self.k == 0 || self.m == 0 || self.h == 0 {
            return bad("n, t, k, m and h must all be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("gamma {} and lambda {} must lie in [0, 1]", self.gamma, self.lambda));
        }
        if !(self.epsilon >= 0.0) {
            return bad(format!("epsilon {} must be >= 0", self.epsilon));
        }
        if !self.w_entropy.is_finite() {
            return bad("w_entropy must be finite".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.learning_rate));
        }
        let mut warnings = Vec::new();
        if self.n < self.t {
            warnings.push(format!(
                "iteration budget n={} is below the episode cap t={}",
                self.n, self.t
            ));
        }
        Ok(warnings)
    }
}

/// Samples ready for policy training. `weights` hold signed advantages before
/// clipping or mirroring; `gen_mean`, `gen_var` and `old_logp` describe the
/// policy that generated the actions.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessedBatch {
    pub states: Matrix,
    pub actions: Matrix,
    pub weights: Vec<f64>,
    pub gen_mean: Matrix,
    pub gen_var: Matrix,
    pub old_logp: Vec<f64>,
}

impl ProcessedBatch {
    pub fn new(
        states: Matrix,
        actions: Matrix,
        weights: Vec<f64>,
        gen_mean: Matrix,
        gen_var: Matrix,
        old_logp: Vec<f64>,
    ) -> Result<Self> {
        let n = states.rows();
        for len in [actions.rows(), weights.len(), gen_mean.rows(), gen_var.rows(), old_logp.len()] {
            ensure_dim(n, len)?;
        }
        ensure_dim(actions.cols(), gen_mean.cols())?;
        ensure_dim(actions.cols(), gen_var.cols())?;
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("batch weights"));
        }
        Ok(Self {
            states,
            actions,
            weights,
            gen_mean,
            gen_var,
            old_logp,
        })
    }

    /// Labels `actions` taken in `states` with `advantages`, recording the
    /// generating distribution of `policy`.
    pub fn from_policy(policy: &GaussianPolicy, states: Matrix, actions: Matrix, advantages: Vec<f64>) -> Result<Self> {
        ensure_dim(policy.action_dim(), actions.cols())?;
        ensure_dim(states.rows(), actions.rows())?;
        let (gen_mean, gen_var) = policy.mean_and_var(&states)?;
        let old_logp = (0..states.rows())
            .map(|i| gaussian_log_density(actions.row(i), gen_mean.row(i), gen_var.row(i)))
            .collect();
        Self::new(states, actions, advantages, gen_mean, gen_var, old_logp)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn is_nonnegative(&self) -> bool {
        self.weights.iter().all(|&w| w >= 0.0)
    }

    fn select(&self, idx: &[usize]) -> (Matrix, Matrix, Vec<f64>) {
        (
            self.states.select_rows(idx),
            self.actions.select_rows(idx),
            idx.iter().map(|&i| self.weights[i]).collect(),
        )
    }
}

/// Replaces negative weights by zero; samples are kept.
pub fn clip_negative_advantages(batch: &ProcessedBatch) -> ProcessedBatch {
    let mut out = batch.clone();
    for w in &mut out.weights {
        *w = w.max(0.0);
    }
    out
}

/// Unnormalized Gaussian kernel `exp(-0.5 sum_j (a_j - mu_j)^2 / c_j)`.
pub fn mirror_kernel(action: &[f64], mean: &[f64], var: &[f64]) -> f64 {
    let q: f64 = action
        .iter()
        .zip(mean.iter().zip(var))
        .map(|(a, (m, c))| (a - m).powi(2) / c)
        .sum();
    (-0.5 * q).exp()
}

/// Reflects each negative-advantage action about its generating mean,
/// `a' = 2 mu - a`, with weight `-A psi(a)`. Non-negative samples pass through.
pub fn mirror_negative_advantages(batch: &ProcessedBatch) -> Result<ProcessedBatch> {
    if batch.gen_var.as_slice().iter().any(|&c| !(c > 0.0)) {
        return Err(Error::InvalidArgument("mirroring needs positive variances".into()));
    }
    let mut out = batch.clone();
    for i in 0..batch.len() {
        let a = batch.weights[i];
        if a >= 0.0 {
            continue;
        }
        let mean = batch.gen_mean.row(i);
        let var = batch.gen_var.row(i);
        let psi = mirror_kernel(batch.actions.row(i), mean, var);
        for (dst, (&x, &m)) in out.actions.row_mut(i).iter_mut().zip(batch.actions.row(i).iter().zip(mean)) {
            *dst = 2.0 * m - x;
        }
        out.weights[i] = -a * psi;
        out.old_logp[i] = gaussian_log_density(out.actions.row(i), mean, var);
    }
    Ok(out)
}

/// The last `capacity` iterations of processed experience.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryBuffer {
    capacity: usize,
    entries: VecDeque<(usize, ProcessedBatch)>,
}

impl HistoryBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidConfig("history capacity must be >= 1".into()));
        }
        Ok(Self {
            capacity,
            entries: VecDeque::with_capacity(capacity),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, iteration: usize, batch: ProcessedBatch) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back((iteration, batch));
    }

    /// Iteration labels currently held, oldest first.
    pub fn iterations(&self) -> Vec<usize> {
        self.entries.iter().map(|(i, _)| *i).collect()
    }

    pub fn latest(&self) -> Option<&ProcessedBatch> {
        self.entries.back().map(|(_, b)| b)
    }

    pub fn total_samples(&self) -> usize {
        self.entries.iter().map(|(_, b)| b.len()).sum()
    }

    /// A minibatch drawn uniformly over all samples held.
    pub fn sample<R: Rng + ?Sized>(&self, size: usize, rng: &mut R) -> Result<(Matrix, Matrix, Vec<f64>)> {
        let total = self.total_samples();
        if total == 0 {
            return Err(Error::Empty("history"));
        }
        let first = &self.entries[0].1;
        let mut picks: Vec<(usize, usize)> = minibatch_indices(total, size, rng)
            .into_iter()
            .map(|flat| {
                let mut rest = flat;
                for (b, (_, batch)) in self.entries.iter().enumerate() {
                    if rest < batch.len() {
                        return (b, rest);
                    }
                    rest -= batch.len();
                }
                unreachable!("index below total")
            })
            .collect();
        picks.sort_unstable_by_key(|&(b, _)| b);
        let mut weights = Vec::with_capacity(picks.len());
        let mut state_rows = Vec::with_capacity(picks.len());
        let mut action_rows = Vec::with_capacity(picks.len());
        for &(b, i) in &picks {
            let batch = &self.entries[b].1;
            state_rows.push(batch.states.row(i));
            action_rows.push(batch.actions.row(i));
            weights.push(batch.weights[i]);
        }
        let states = Matrix::from_rows(first.states.cols(), &state_rows)?;
        let actions = Matrix::from_rows(first.actions.cols(), &action_rows)?;
        Ok((states, actions, weights))
    }
}

/// Clipped surrogate with entropy bonus,
/// `-(1/M) sum min(rho A, clip(rho, 1-eps, 1+eps) A) - w (1/M) sum H`,
/// and its gradient with respect to both mean and log-variance outputs.
pub fn clipped_surrogate_loss(
    policy: &GaussianPolicy,
    states: &Matrix,
    actions: &Matrix,
    advantages: &[f64],
    old_logp: &[f64],
    epsilon: f64,
    w_entropy: f64,
) -> Result<(f64, crate::policy::PolicyGrad)> {
    let m = states.rows();
    if m == 0 {
        return Err(Error::Empty("batch"));
    }
    ensure_dim(m, actions.rows())?;
    ensure_dim(m, advantages.len())?;
    ensure_dim(m, old_logp.len())?;
    ensure_dim(policy.action_dim(), actions.cols())?;
    let eval = policy.evaluate(states)?;
    let dim = policy.action_dim();
    let scale = 1.0 / m as f64;
    let mut loss = 0.0;
    let mut d_mean = Matrix::zeros(m, dim);
    let mut d_log_var = Matrix::zeros(m, dim);
    for i in 0..m {
        let mean = eval.mean.row(i);
        let var = eval.var.row(i);
        let a = actions.row(i);
        let ratio = (gaussian_log_density(a, mean, var) - old_logp[i]).exp();
        let adv = advantages[i];
        let unclipped = ratio * adv;
        let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon) * adv;
        loss -= scale * (unclipped.min(clipped) + w_entropy * gaussian_entropy(var));
        // The gradient flows through the ratio only where the unclipped term is the minimum.
        let d_logp = if unclipped <= clipped { -scale * unclipped } else { 0.0 };
        for j in 0..dim {
            let diff = a[j] - mean[j];
            d_mean.row_mut(i)[j] = d_logp * diff / var[j];
            d_log_var.row_mut(i)[j] = d_logp * 0.5 * (diff * diff / var[j] - 1.0) - scale * w_entropy * 0.5;
        }
    }
    let grad = policy.backward(&eval, &d_mean, &d_log_var, Phase::Joint)?;
    Ok((loss, grad))
}

/// Flattened experience of one iteration, with critic-based advantages.
#[derive(Debug, Clone)]
pub struct Experience {
    pub states: Matrix,
    pub actions: Matrix,
    pub rewards: Vec<f64>,
    pub timesteps: Vec<usize>,
}

impl Experience {
    pub fn from_trajectories(trajectories: &[Trajectory]) -> Result<Self> {
        let tuples: Vec<_> = trajectories.iter().flat_map(|t| &t.tuples).collect();
        let first = tuples.first().ok_or(Error::Empty("experience"))?;
        let states: Vec<&[f64]> = tuples.iter().map(|x| x.s.as_slice()).collect();
        let actions: Vec<&[f64]> = tuples.iter().map(|x| x.a.as_slice()).collect();
        Ok(Self {
            states: Matrix::from_rows(first.s.len(), &states)?,
            actions: Matrix::from_rows(first.a.len(), &actions)?,
            rewards: tuples.iter().map(|x| x.r).collect(),
            timesteps: tuples.iter().map(|x| x.t).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

fn all_advantages(trajectories: &[Trajectory], critic: &Critic, gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut advantages = Vec::new();
    let mut values = Vec::new();
    for traj in trajectories {
        if traj.is_empty() {
            continue;
        }
        let (v, v_next) = critic.trajectory_values(traj)?;
        let rewards: Vec<f64> = traj.tuples.iter().map(|x| x.r).collect();
        let ends: Vec<_> = traj.tuples.iter().map(|x| x.end).collect();
        advantages.extend(gae(&rewards, &v, &v_next, &ends, gamma, lambda)?);
        values.extend(v);
    }
    Ok((advantages, values))
}

/// Trains the critic toward lambda-returns of the pre-update critic, then
/// returns GAE advantages under the updated critic and the mean critic loss.
pub fn fit_critic_and_advantages<R: Rng + ?Sized>(
    critic: &mut Critic,
    trajectories: &[Trajectory],
    experience: &Experience,
    config: &AlgoConfig,
    rng: &mut R,
) -> Result<(Vec<f64>, f64)> {
    let (old_adv, old_values) = all_advantages(trajectories, critic, config.gamma, config.lambda)?;
    let targets: Vec<f64> = old_adv.iter().zip(&old_values).map(|(a, v)| a + v).collect();
    let states: Vec<&[f64]> = experience.states.iter_rows().collect();
    let inputs = critic.inputs(&states, &experience.timesteps)?;
    let loss = critic.train(&inputs, &targets, config.k, config.m, rng)?;
    let (advantages, _) = all_advantages(trajectories, critic, config.gamma, config.lambda)?;
    Ok((advantages, loss))
}

/// Policy mean and standard deviation after one vanilla-PG minibatch step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PgStepTrace {
    pub step: usize,
    pub loss: f64,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// `config.k` Adam steps on the advantage-weighted Gaussian loss with signed
/// weights, jointly on mean and variance. Returns the policy at `probe_state`
/// after every step.
pub fn vanilla_pg_update<R: Rng + ?Sized>(
    policy: &mut GaussianPolicy,
    optimizer: &mut PolicyOptimizer,
    batch: &ProcessedBatch,
    config: &AlgoConfig,
    probe_state: &[f64],
    rng: &mut R,
) -> Result<Vec<PgStepTrace>> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let probe = Matrix::from_rows(policy.obs_dim(), &[probe_state])?;
    let mut trace = Vec::with_capacity(config.k);
    for step in 1..=config.k {
        let idx = minibatch_indices(batch.len(), config.m, rng);
        let (s, a, w) = batch.select(&idx);
        let (loss, grad) = policy.gaussian_loss(&s, &a, &w, Phase::Joint)?;
        optimizer.step(policy, &grad)?;
        let (mean, var) = policy.mean_and_var(&probe)?;
        trace.push(PgStepTrace {
            step,
            loss,
            mean: mean.row(0).to_vec(),
            std: var.row(0).iter().map(|c| c.sqrt()).collect(),
        });
    }
    Ok(trace)
}

/// Per-iteration training diagnostics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub critic_loss: f64,
    /// Mean minibatch loss of the last policy phase.
    pub policy_loss: f64,
    pub frac_positive_adv: f64,
}

/// Policy, critic, optimizers and history of one training run.
#[derive(Debug, Clone)]
pub struct Learner {
    pub policy: GaussianPolicy,
    pub optimizer: PolicyOptimizer,
    pub critic: Critic,
    pub history: HistoryBuffer,
    pub config: AlgoConfig,
    /// Per-step trace of the latest vanilla-PG update.
    pub pg_trace: Vec<PgStepTrace>,
    iteration: usize,
}

impl Learner {
    pub fn new(policy: GaussianPolicy, critic: Critic, config: AlgoConfig) -> Result<Self> {
        config.validate()?;
        if policy.is_shared() != config.mode.uses_shared_net() {
            return Err(Error::InvalidConfig(format!(
                "mode {} needs a {} policy",
                config.mode,
                if config.mode.uses_shared_net() { "shared" } else { "split" }
            )));
        }
        let optimizer = PolicyOptimizer::new(&policy, config.learning_rate);
        let history = HistoryBuffer::new(config.h)?;
        Ok(Self {
            policy,
            optimizer,
            critic,
            history,
            config,
            pg_trace: Vec::new(),
            iteration: 0,
        })
    }

    /// Completed updates so far.
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Runs the configured algorithm on one iteration of experience.
    pub fn update<R: Rng + ?Sized>(&mut self, trajectories: &[Trajectory], rng: &mut R) -> Result<UpdateStats> {
        let stats = match self.config.mode {
            Mode::VanillaPg => vanilla_pg_iteration(self, trajectories, rng)?,
            Mode::PpoClip => ppo_iteration(self, trajectories, rng)?,
            _ => ppo_cma_iteration(self, trajectories, rng)?,
        };
        self.iteration += 1;
        Ok(stats)
    }
}

fn signed_batch<R: Rng + ?Sized>(
    learner: &mut Learner,
    trajectories: &[Trajectory],
    rng: &mut R,
) -> Result<(ProcessedBatch, f64)> {
    let experience = Experience::from_trajectories(trajectories)?;
    let (advantages, critic_loss) =
        fit_critic_and_advantages(&mut learner.critic, trajectories, &experience, &learner.config, rng)?;
    let batch = ProcessedBatch::from_policy(&learner.policy, experience.states, experience.actions, advantages)?;
    Ok((batch, critic_loss))
}

fn frac_positive(weights: &[f64]) -> f64 {
    weights.iter().filter(|&&a| a > 0.0).count() as f64 / weights.len() as f64
}

/// Critic, GAE, clip or mirror, push to history, then variance on the history
/// followed by mean on the current iteration. The single-net ablation instead
/// trains mean and variance jointly on the current iteration.
pub fn ppo_cma_iteration<R: Rng + ?Sized>(
    learner: &mut Learner,
    trajectories: &[Trajectory],
    rng: &mut R,
) -> Result<UpdateStats> {
    let mode = learner.config.mode;
    if !mode.is_ppo_cma() {
        return Err(Error::InvalidConfig(format!("mode {mode} is not a PPO-CMA variant")));
    }
    let (signed, critic_loss) = signed_batch(learner, trajectories, rng)?;
    let frac_positive_adv = frac_positive(&signed.weights);
    let batch = if mode.mirrors() {
        mirror_negative_advantages(&signed)?
    } else {
        clip_negative_advantages(&signed)
    };
    if !batch.is_nonnegative() {
        return Err(Error::InvalidArgument("negative PPO-CMA training weight".into()));
    }
    let (k, m) = (learner.config.k, learner.config.m);
    let mut policy_loss = 0.0;
    if mode == Mode::PpoCmaSingleNet {
        for _ in 0..k {
            let idx = minibatch_indices(batch.len(), m, rng);
            let (s, a, w) = batch.select(&idx);
            let (loss, grad) = learner.policy.gaussian_loss(&s, &a, &w, Phase::Joint)?;
            learner.optimizer.step(&mut learner.policy, &grad)?;
            policy_loss += loss / k as f64;
        }
        learner.history.push(learner.iteration + 1, batch);
    } else {
        learner.history.push(learner.iteration + 1, batch);
        for _ in 0..k {
            let (s, a, w) = learner.history.sample(m, rng)?;
            let (_, grad) = learner.policy.gaussian_loss(&s, &a, &w, Phase::Var)?;
            learner.optimizer.step(&mut learner.policy, &grad)?;
        }
        let current = learner.history.latest().expect("just pushed");
        for _ in 0..k {
            let idx = minibatch_indices(current.len(), m, rng);
            let (s, a, w) = current.select(&idx);
            let (loss, grad) = learner.policy.gaussian_loss(&s, &a, &w, Phase::Mean)?;
            learner.optimizer.step(&mut learner.policy, &grad)?;
            policy_loss += loss / k as f64;
        }
    }
    Ok(UpdateStats {
        critic_loss,
        policy_loss,
        frac_positive_adv,
    })
}

/// Critic, GAE, then `K` minibatch steps on the clipped surrogate with signed
/// advantages.
pub fn ppo_iteration<R: Rng + ?Sized>(
    learner: &mut Learner,
    trajectories: &[Trajectory],
    rng: &mut R,
) -> Result<UpdateStats> {
    let (batch, critic_loss) = signed_batch(learner, trajectories, rng)?;
    let (k, m) = (learner.config.k, learner.config.m);
    let mut policy_loss = 0.0;
    for _ in 0..k {
        let idx = minibatch_indices(batch.len(), m, rng);
        let (s, a, w) = batch.select(&idx);
        let old: Vec<f64> = idx.iter().map(|&i| batch.old_logp[i]).collect();
        let (loss, grad) = clipped_surrogate_loss(
            &learner.policy,
            &s,
            &a,
            &w,
            &old,
            learner.config.epsilon,
            learner.config.w_entropy,
        )?;
        learner.optimizer.step(&mut learner.policy, &grad)?;
        policy_loss += loss / k as f64;
    }
    Ok(UpdateStats {
        critic_loss,
        policy_loss,
        frac_positive_adv: frac_positive(&batch.weights),
    })
}

/// Critic, GAE, then the vanilla signed-weight update.
pub fn vanilla_pg_iteration<R: Rng + ?Sized>(
    learner: &mut Learner,
    trajectories: &[Trajectory],
    rng: &mut R,
) -> Result<UpdateStats> {
    let (batch, critic_loss) = signed_batch(learner, trajectories, rng)?;
    let probe = batch.states.row(0).to_vec();
    let trace = vanilla_pg_update(&mut learner.policy, &mut learner.optimizer, &batch, &learner.config, &probe, rng)?;
    let stats = UpdateStats {
        critic_loss,
        policy_loss: trace.iter().map(|t| t.loss).sum::<f64>() / trace.len().max(1) as f64,
        frac_positive_adv: frac_positive(&batch.weights),
    };
    learner.pg_trace = trace;
    Ok(stats)
}
