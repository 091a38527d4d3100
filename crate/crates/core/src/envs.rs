//! Episodic environments, observation scaling and action repeat.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::policy::ActionBounds;

/// How a step ended the episode, if it did.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EpisodeEnd {
    None,
    /// Absorbing state; nothing follows.
    Terminal,
    /// Truncated at the episode cap; the successor state still has value.
    Timeout,
}

impl EpisodeEnd {
    pub fn is_done(self) -> bool {
        self != EpisodeEnd::None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub end: EpisodeEnd,
}

pub trait Env {
    fn obs_dim(&self) -> usize;
    fn bounds(&self) -> &ActionBounds;
    /// Maximum number of steps per episode.
    fn episode_cap(&self) -> usize;
    /// Steps taken in the current episode.
    fn timestep(&self) -> usize;
    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64>;
    fn step(&mut self, action: &[f64]) -> Result<Step>;

    fn action_dim(&self) -> usize {
        self.bounds().dim()
    }
}

impl<E: Env + ?Sized> Env for Box<E> {
    fn obs_dim(&self) -> usize {
        (**self).obs_dim()
    }
    fn bounds(&self) -> &ActionBounds {
        (**self).bounds()
    }
    fn episode_cap(&self) -> usize {
        (**self).episode_cap()
    }
    fn timestep(&self) -> usize {
        (**self).timestep()
    }
    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64> {
        (**self).reset(rng)
    }
    fn step(&mut self, action: &[f64]) -> Result<Step> {
        (**self).step(action)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    NeedsReset,
    Running,
}

/// One-step problem with reward `-a^T a` and a constant observation.
///
/// The reward is computed on the action as sampled, without clamping, so the
/// policy density and the evaluated action always agree.
#[derive(Debug, Clone)]
pub struct QuadraticEnv {
    bounds: ActionBounds,
    status: Status,
    t: usize,
}

impl QuadraticEnv {
    pub fn new() -> Self {
        Self {
            bounds: ActionBounds::symmetric(2, 1.0).expect("valid bounds"),
            status: Status::NeedsReset,
            t: 0,
        }
    }

    pub fn reward(action: &[f64]) -> f64 {
        -action.iter().map(|a| a * a).sum::<f64>()
    }
}

impl Default for QuadraticEnv {
    fn default() -> Self {
        Self::new()
    }
}

impl Env for QuadraticEnv {
    fn obs_dim(&self) -> usize {
        1
    }

    fn bounds(&self) -> &ActionBounds {
        &self.bounds
    }

    fn episode_cap(&self) -> usize {
        1
    }

    fn timestep(&self) -> usize {
        self.t
    }

    fn reset(&mut self, _rng: &mut dyn RngCore) -> Vec<f64> {
        self.status = Status::Running;
        self.t = 0;
        vec![0.0]
    }

    fn step(&mut self, action: &[f64]) -> Result<Step> {
        if self.status != Status::Running {
            return Err(Error::EnvState("step before reset or after episode end"));
        }
        ensure_dim(2, action.len())?;
        if action.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite("action"));
        }
        self.status = Status::NeedsReset;
        self.t = 1;
        Ok(Step {
            obs: vec![0.0],
            reward: Self::reward(action),
            end: EpisodeEnd::Terminal,
        })
    }
}

/// Damped 2D point mass steered toward a random target.
///
/// Observation `[position, velocity, target]`, reward `-|position - target|^2`,
/// episodes are truncated after `T = 100` steps.
#[derive(Debug, Clone)]
pub struct PointMassEnv {
    bounds: ActionBounds,
    position: [f64; 2],
    velocity: [f64; 2],
    target: [f64; 2],
    status: Status,
    t: usize,
}

impl PointMassEnv {
    pub const DT: f64 = 0.05;
    pub const DAMPING: f64 = 0.1;
    pub const EPISODE_CAP: usize = 100;

    pub fn new() -> Self {
        Self {
            bounds: ActionBounds::symmetric(2, 1.0).expect("valid bounds"),
            position: [0.0; 2],
            velocity: [0.0; 2],
            target: [0.0; 2],
            status: Status::NeedsReset,
            t: 0,
        }
    }

    pub fn position(&self) -> [f64; 2] {
        self.position
    }

    pub fn velocity(&self) -> [f64; 2] {
        self.velocity
    }

    pub fn target(&self) -> [f64; 2] {
        self.target
    }

    fn observe(&self) -> Vec<f64> {
        let mut obs = Vec::with_capacity(6);
        obs.extend_from_slice(&self.position);
        obs.extend_from_slice(&self.velocity);
        obs.extend_from_slice(&self.target);
        obs
    }
}

impl Default for PointMassEnv {
    fn default() -> Self {
        Self::new()
    }
}

impl Env for PointMassEnv {
    fn obs_dim(&self) -> usize {
        6
    }

    fn bounds(&self) -> &ActionBounds {
        &self.bounds
    }

    fn episode_cap(&self) -> usize {
        Self::EPISODE_CAP
    }

    fn timestep(&self) -> usize {
        self.t
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.position = [0.0; 2];
        self.velocity = [0.0; 2];
        self.target = [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)];
        self.status = Status::Running;
        self.t = 0;
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> Result<Step> {
        if self.status != Status::Running {
            return Err(Error::EnvState("step before reset or after episode end"));
        }
        ensure_dim(2, action.len())?;
        if action.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite("action"));
        }
        let a = self.bounds.clamp(action);
        let mut reward = 0.0;
        for j in 0..2 {
            self.velocity[j] = (1.0 - Self::DAMPING) * self.velocity[j] + Self::DT * a[j];
            self.position[j] += Self::DT * self.velocity[j];
            reward -= (self.position[j] - self.target[j]).powi(2);
        }
        self.t += 1;
        let end = if self.t >= Self::EPISODE_CAP {
            self.status = Status::NeedsReset;
            EpisodeEnd::Timeout
        } else {
            EpisodeEnd::None
        };
        Ok(Step {
            obs: self.observe(),
            reward,
            end,
        })
    }
}

impl PointMassEnv {
    /// Gains of the reference controller, tuned by grid search.
    pub const PD_GAINS: (f64, f64) = (30.0, 3.0);

    /// Proportional-derivative controller toward the target, clamped to the
    /// action box. A hand-written reference for what a good policy scores.
    pub fn pd_action(obs: &[f64], kp: f64, kd: f64) -> Vec<f64> {
        (0..2)
            .map(|j| (kp * (obs[4 + j] - obs[j]) - kd * obs[2 + j]).clamp(-1.0, 1.0))
            .collect()
    }
}

/// Mean undiscounted return of `controller` over `episodes` whole episodes.
pub fn evaluate_controller<F>(env: &mut dyn Env, episodes: usize, rng: &mut dyn RngCore, mut controller: F) -> Result<f64>
where
    F: FnMut(&[f64], &mut dyn RngCore) -> Vec<f64>,
{
    if episodes == 0 {
        return Err(Error::Empty("episodes"));
    }
    let mut total = 0.0;
    for _ in 0..episodes {
        let mut obs = env.reset(rng);
        loop {
            let action = controller(&obs, rng);
            let step = env.step(&action)?;
            total += step.reward;
            obs = step.obs;
            if step.end.is_done() {
                break;
            }
        }
    }
    Ok(total / episodes as f64)
}

/// Applies every action `factor` times (or until the episode ends) and sums
/// the rewards. The wrapped episode cap is `ceil(T / factor)`.
#[derive(Debug, Clone)]
pub struct ActionRepeat<E> {
    inner: E,
    factor: usize,
    t: usize,
}

impl<E: Env> ActionRepeat<E> {
    pub fn new(inner: E, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::InvalidArgument("action repeat factor must be >= 1".into()));
        }
        Ok(Self { inner, factor, t: 0 })
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }

    pub fn factor(&self) -> usize {
        self.factor
    }
}

impl<E: Env> Env for ActionRepeat<E> {
    fn obs_dim(&self) -> usize {
        self.inner.obs_dim()
    }

    fn bounds(&self) -> &ActionBounds {
        self.inner.bounds()
    }

    fn episode_cap(&self) -> usize {
        self.inner.episode_cap().div_ceil(self.factor)
    }

    fn timestep(&self) -> usize {
        self.t
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.t = 0;
        self.inner.reset(rng)
    }

    fn step(&mut self, action: &[f64]) -> Result<Step> {
        let mut total = 0.0;
        let mut last = None;
        for _ in 0..self.factor {
            let step = self.inner.step(action)?;
            total += step.reward;
            let done = step.end.is_done();
            last = Some(step);
            if done {
                break;
            }
        }
        self.t += 1;
        let mut step = last.expect("factor >= 1");
        step.reward = total;
        Ok(step)
    }
}

/// Builds an environment by name, wrapped in action repeat when `repeat > 1`.
pub fn make_env(name: &str, repeat: usize) -> Result<Box<dyn Env + Send>> {
    let env: Box<dyn Env + Send> = match name {
        "quadratic" => Box::new(QuadraticEnv::new()),
        "point-mass" => Box::new(PointMassEnv::new()),
        other => return Err(Error::InvalidConfig(format!("unknown environment `{other}`"))),
    };
    if repeat > 1 {
        Ok(Box::new(ActionRepeat::new(env, repeat)?))
    } else if repeat == 1 {
        Ok(env)
    } else {
        Err(Error::InvalidConfig("action repeat must be >= 1".into()))
    }
}

/// Per-dimension observation scaling `k_j = min(k_j_prev, 1 / (rms_j + kappa))`,
/// where the RMS runs over every observation seen so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsNormalizer {
    scale: Option<Vec<f64>>,
    sum_sq: Vec<f64>,
    count: u64,
    kappa: f64,
}

impl ObsNormalizer {
    pub const KAPPA: f64 = 0.001;

    pub fn new(obs_dim: usize) -> Self {
        Self {
            scale: None,
            sum_sq: vec![0.0; obs_dim],
            count: 0,
            kappa: Self::KAPPA,
        }
    }

    pub fn scale(&self) -> Option<&[f64]> {
        self.scale.as_deref()
    }

    pub fn is_initialized(&self) -> bool {
        self.scale.is_some()
    }

    pub fn rms(&self) -> Vec<f64> {
        self.sum_sq
            .iter()
            .map(|s| if self.count == 0 { 0.0 } else { (s / self.count as f64).sqrt() })
            .collect()
    }

    /// Folds in the raw observations of one iteration. The first call sets the
    /// scale outright; later calls can only shrink it.
    pub fn update<O: AsRef<[f64]>>(&mut self, observations: &[O]) -> Result<()> {
        if observations.is_empty() {
            return Err(Error::Empty("observation batch"));
        }
        for obs in observations {
            let obs = obs.as_ref();
            ensure_dim(self.sum_sq.len(), obs.len())?;
            if obs.iter().any(|o| !o.is_finite()) {
                return Err(Error::NonFinite("observation"));
            }
            for (s, o) in self.sum_sq.iter_mut().zip(obs) {
                *s += o * o;
            }
        }
        self.count += observations.len() as u64;
        let fresh: Vec<f64> = self.rms().iter().map(|r| 1.0 / (r + self.kappa)).collect();
        self.scale = Some(match self.scale.take() {
            None => fresh,
            Some(prev) => prev.iter().zip(&fresh).map(|(p, f)| p.min(*f)).collect(),
        });
        Ok(())
    }

    pub fn apply(&self, obs: &[f64]) -> Result<Vec<f64>> {
        let scale = self.scale.as_ref().ok_or(Error::UninitializedNormalizer)?;
        ensure_dim(scale.len(), obs.len())?;
        Ok(obs.iter().zip(scale).map(|(o, k)| o * k).collect())
    }

    /// Like [`apply`](Self::apply), but passes observations through unchanged
    /// before the first update.
    pub fn apply_or_identity(&self, obs: &[f64]) -> Result<Vec<f64>> {
        if self.is_initialized() {
            self.apply(obs)
        } else {
            ensure_dim(self.sum_sq.len(), obs.len())?;
            Ok(obs.to_vec())
        }
    }

    /// Overrides the current scale, e.g. when restoring state.
    pub fn set_scale(&mut self, scale: Vec<f64>) -> Result<()> {
        ensure_dim(self.sum_sq.len(), scale.len())?;
        if scale.iter().any(|k| !k.is_finite() || *k <= 0.0) {
            return Err(Error::InvalidArgument("scales must be finite and positive".into()));
        }
        self.scale = Some(scale);
        Ok(())
    }
}
