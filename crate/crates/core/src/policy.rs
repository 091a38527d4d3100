//! Diagonal Gaussian policy with soft-clipped mean and log-variance.
//!
//! The raw network outputs are squashed with a sigmoid into the action box
//! (mean) and into `[v_min, v_max]` (log-variance), so the policy is always
//! well defined no matter what the networks output. The mean and the
//! log-variance come either from two separate networks, which is what
//! PPO-CMA needs to train them in separate phases, or from one shared network
//! with `2 * action_dim` outputs.

use std::f64::consts::PI;
use std::io::{Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::nn::{Adam, ForwardCache, Matrix, Network, NetworkLayout};

/// Smallest standard deviation the variance clipping allows.
pub const MIN_STD: f64 = 0.01;

pub const DEFAULT_PRETRAIN_STEPS: usize = 4000;
pub const DEFAULT_PRETRAIN_BATCH: usize = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionBounds {
    low: Vec<f64>,
    high: Vec<f64>,
}

impl ActionBounds {
    pub fn new(low: Vec<f64>, high: Vec<f64>) -> Result<Self> {
        ensure_dim(low.len(), high.len())?;
        if low.is_empty() {
            return Err(Error::Empty("action bounds"));
        }
        for (l, h) in low.iter().zip(&high) {
            if !l.is_finite() || !h.is_finite() {
                return Err(Error::NonFinite("action bounds"));
            }
            if l >= h {
                return Err(Error::InvalidArgument(format!("action bound {l} >= {h}")));
            }
        }
        Ok(Self { low, high })
    }

    pub fn symmetric(dim: usize, limit: f64) -> Result<Self> {
        Self::new(vec![-limit; dim], vec![limit; dim])
    }

    pub fn dim(&self) -> usize {
        self.low.len()
    }

    pub fn low(&self) -> &[f64] {
        &self.low
    }

    pub fn high(&self) -> &[f64] {
        &self.high
    }

    pub fn clamp(&self, action: &[f64]) -> Vec<f64> {
        action
            .iter()
            .zip(self.low.iter().zip(&self.high))
            .map(|(a, (l, h))| a.clamp(*l, *h))
            .collect()
    }
}

/// Log-variance limits: `v_max = 2 log(a_max - a_min)`, `v_min = 2 log(0.01)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceLimits {
    min: Vec<f64>,
    max: Vec<f64>,
}

impl VarianceLimits {
    pub fn from_bounds(bounds: &ActionBounds) -> Self {
        let min = vec![2.0 * MIN_STD.ln(); bounds.dim()];
        let max = bounds
            .low
            .iter()
            .zip(&bounds.high)
            .map(|(l, h)| 2.0 * (h - l).ln())
            .collect();
        Self { min, max }
    }

    pub fn min(&self) -> &[f64] {
        &self.min
    }

    pub fn max(&self) -> &[f64] {
        &self.max
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Which part of the policy a loss trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    /// Mean only; the variance is a constant.
    Mean,
    /// Log-variance only; the mean is a constant.
    Var,
    /// Both at once.
    Joint,
}

impl Phase {
    fn trains_mean(self) -> bool {
        matches!(self, Phase::Mean | Phase::Joint)
    }

    fn trains_var(self) -> bool {
        matches!(self, Phase::Var | Phase::Joint)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PolicyNets {
    Split { mean: Network, var: Network },
    Shared(Network),
}

/// Parameter gradient shaped like [`PolicyNets`]. A `None` entry means the
/// network was not part of the phase and must not be stepped.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicyGrad {
    Split {
        mean: Option<Vec<f64>>,
        var: Option<Vec<f64>>,
    },
    Shared(Vec<f64>),
}

impl PolicyGrad {
    pub fn is_finite(&self) -> bool {
        let finite = |v: &[f64]| v.iter().all(|g| g.is_finite());
        match self {
            PolicyGrad::Split { mean, var } => {
                mean.as_deref().is_none_or(finite) && var.as_deref().is_none_or(finite)
            }
            PolicyGrad::Shared(g) => finite(g),
        }
    }

    /// All gradient entries, flattened in network order.
    pub fn flatten(&self) -> Vec<f64> {
        match self {
            PolicyGrad::Split { mean, var } => mean
                .iter()
                .chain(var.iter())
                .flat_map(|v| v.iter().copied())
                .collect(),
            PolicyGrad::Shared(g) => g.clone(),
        }
    }
}

/// Policy outputs for a batch of states, plus what backpropagation needs.
#[derive(Debug, Clone)]
pub struct PolicyEval {
    pub mean: Matrix,
    pub log_var: Matrix,
    pub var: Matrix,
    mean_slope: Matrix,
    log_var_slope: Matrix,
    caches: EvalCaches,
}

#[derive(Debug, Clone)]
enum EvalCaches {
    Split { mean: ForwardCache, var: ForwardCache },
    Shared(ForwardCache),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicy {
    nets: PolicyNets,
    bounds: ActionBounds,
    limits: VarianceLimits,
}

#[derive(Serialize, Deserialize)]
struct PolicyHeader {
    shared: bool,
    bounds: ActionBounds,
    limits: VarianceLimits,
}

impl GaussianPolicy {
    /// Separate mean and log-variance networks.
    pub fn split(obs_dim: usize, hidden: &[usize], bounds: ActionBounds, seed: u64) -> Result<Self> {
        let layout = NetworkLayout::new(obs_dim, hidden, bounds.dim());
        let mean = Network::new(layout.clone(), seed)?;
        let var = Network::new(layout, seed.wrapping_add(1))?;
        Ok(Self::from_parts(PolicyNets::Split { mean, var }, bounds))
    }

    /// One network producing `[mean_raw, log_var_raw]`.
    pub fn shared(obs_dim: usize, hidden: &[usize], bounds: ActionBounds, seed: u64) -> Result<Self> {
        let layout = NetworkLayout::new(obs_dim, hidden, 2 * bounds.dim());
        let net = Network::new(layout, seed)?;
        Ok(Self::from_parts(PolicyNets::Shared(net), bounds))
    }

    pub fn from_parts(nets: PolicyNets, bounds: ActionBounds) -> Self {
        let limits = VarianceLimits::from_bounds(&bounds);
        Self {
            nets,
            bounds,
            limits,
        }
    }

    pub fn nets(&self) -> &PolicyNets {
        &self.nets
    }

    pub fn nets_mut(&mut self) -> &mut PolicyNets {
        &mut self.nets
    }

    pub fn bounds(&self) -> &ActionBounds {
        &self.bounds
    }

    pub fn limits(&self) -> &VarianceLimits {
        &self.limits
    }

    pub fn action_dim(&self) -> usize {
        self.bounds.dim()
    }

    pub fn obs_dim(&self) -> usize {
        match &self.nets {
            PolicyNets::Split { mean, .. } => mean.input_dim(),
            PolicyNets::Shared(net) => net.input_dim(),
        }
    }

    pub fn is_shared(&self) -> bool {
        matches!(self.nets, PolicyNets::Shared(_))
    }

    pub fn evaluate(&self, states: &Matrix) -> Result<PolicyEval> {
        let dim = self.action_dim();
        let (mean_raw, var_raw, caches) = match &self.nets {
            PolicyNets::Split { mean, var } => {
                let mc = mean.forward_cached(states)?;
                let vc = var.forward_cached(states)?;
                (
                    mc.output().clone(),
                    vc.output().clone(),
                    EvalCaches::Split { mean: mc, var: vc },
                )
            }
            PolicyNets::Shared(net) => {
                let cache = net.forward_cached(states)?;
                let out = cache.output();
                let mut m = Matrix::zeros(out.rows(), dim);
                let mut v = Matrix::zeros(out.rows(), dim);
                for (i, row) in out.iter_rows().enumerate() {
                    m.row_mut(i).copy_from_slice(&row[..dim]);
                    v.row_mut(i).copy_from_slice(&row[dim..]);
                }
                (m, v, EvalCaches::Shared(cache))
            }
        };
        let rows = states.rows();
        let mut mean = Matrix::zeros(rows, dim);
        let mut log_var = Matrix::zeros(rows, dim);
        let mut var = Matrix::zeros(rows, dim);
        let mut mean_slope = Matrix::zeros(rows, dim);
        let mut log_var_slope = Matrix::zeros(rows, dim);
        for i in 0..rows {
            for j in 0..dim {
                let range = self.bounds.high[j] - self.bounds.low[j];
                let s = sigmoid(mean_raw.row(i)[j]);
                mean.row_mut(i)[j] = self.bounds.low[j] + range * s;
                mean_slope.row_mut(i)[j] = range * s * (1.0 - s);

                let vrange = self.limits.max[j] - self.limits.min[j];
                let s = sigmoid(var_raw.row(i)[j]);
                let v = self.limits.min[j] + vrange * s;
                log_var.row_mut(i)[j] = v;
                var.row_mut(i)[j] = v.exp();
                log_var_slope.row_mut(i)[j] = vrange * s * (1.0 - s);
            }
        }
        Ok(PolicyEval {
            mean,
            log_var,
            var,
            mean_slope,
            log_var_slope,
            caches,
        })
    }

    /// Clipped means and variances `c = exp(v)` for a batch of states.
    pub fn mean_and_var(&self, states: &Matrix) -> Result<(Matrix, Matrix)> {
        let eval = self.evaluate(states)?;
        Ok((eval.mean, eval.var))
    }

    /// Backpropagates `dL/dmean` and `dL/dlog_var` (both on clipped outputs)
    /// into the networks the phase trains.
    pub fn backward(
        &self,
        eval: &PolicyEval,
        d_mean: &Matrix,
        d_log_var: &Matrix,
        phase: Phase,
    ) -> Result<PolicyGrad> {
        let dim = self.action_dim();
        ensure_dim(eval.mean.rows(), d_mean.rows())?;
        ensure_dim(eval.mean.rows(), d_log_var.rows())?;
        ensure_dim(dim, d_mean.cols())?;
        ensure_dim(dim, d_log_var.cols())?;

        let chain = |d: &Matrix, slope: &Matrix| {
            let mut out = d.clone();
            for (o, s) in out.as_mut_slice().iter_mut().zip(slope.as_slice()) {
                *o *= s;
            }
            out
        };
        let d_mean_raw = chain(d_mean, &eval.mean_slope);
        let d_var_raw = chain(d_log_var, &eval.log_var_slope);

        match (&self.nets, &eval.caches) {
            (PolicyNets::Split { mean, var }, EvalCaches::Split { mean: mc, var: vc }) => {
                let mean_grad = if phase.trains_mean() {
                    Some(mean.backward_cached(mc, &d_mean_raw)?)
                } else {
                    None
                };
                let var_grad = if phase.trains_var() {
                    Some(var.backward_cached(vc, &d_var_raw)?)
                } else {
                    None
                };
                Ok(PolicyGrad::Split {
                    mean: mean_grad,
                    var: var_grad,
                })
            }
            (PolicyNets::Shared(net), EvalCaches::Shared(cache)) => {
                let rows = d_mean.rows();
                let mut d_out = Matrix::zeros(rows, 2 * dim);
                for i in 0..rows {
                    let row = d_out.row_mut(i);
                    if phase.trains_mean() {
                        row[..dim].copy_from_slice(d_mean_raw.row(i));
                    }
                    if phase.trains_var() {
                        row[dim..].copy_from_slice(d_var_raw.row(i));
                    }
                }
                Ok(PolicyGrad::Shared(net.backward_cached(cache, &d_out)?))
            }
            _ => Err(Error::InvalidArgument(
                "evaluation does not belong to this policy".into(),
            )),
        }
    }

    /// `a = mean + sqrt(c) * z` with `z ~ N(0, I)`. Not clamped to the bounds.
    pub fn sample_action<R: Rng + ?Sized>(&self, state: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        let states = Matrix::from_rows(self.obs_dim(), &[state])?;
        let eval = self.evaluate(&states)?;
        Ok(sample_from(eval.mean.row(0), eval.var.row(0), rng))
    }

    pub fn log_prob(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        ensure_dim(self.action_dim(), action.len())?;
        let states = Matrix::from_rows(self.obs_dim(), &[state])?;
        let eval = self.evaluate(&states)?;
        Ok(gaussian_log_density(action, eval.mean.row(0), eval.var.row(0)))
    }

    /// Advantage-weighted Gaussian loss
    /// `(1/M) sum_i w_i sum_j [(a_ij - mu_ij)^2 / c_ij + log c_ij]`, which is
    /// `-2 w log p` up to a constant, so the variance fit is the weighted
    /// maximum-likelihood estimate.
    /// and its gradient for the networks trained by `phase`.
    pub fn gaussian_loss(
        &self,
        states: &Matrix,
        actions: &Matrix,
        weights: &[f64],
        phase: Phase,
    ) -> Result<(f64, PolicyGrad)> {
        let m = states.rows();
        if m == 0 {
            return Err(Error::Empty("batch"));
        }
        ensure_dim(m, actions.rows())?;
        ensure_dim(m, weights.len())?;
        ensure_dim(self.action_dim(), actions.cols())?;
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("sample weights"));
        }
        let eval = self.evaluate(states)?;
        let dim = self.action_dim();
        let scale = 1.0 / m as f64;
        let mut loss = 0.0;
        let mut d_mean = Matrix::zeros(m, dim);
        let mut d_log_var = Matrix::zeros(m, dim);
        for i in 0..m {
            let w = weights[i] * scale;
            for j in 0..dim {
                let diff = actions.row(i)[j] - eval.mean.row(i)[j];
                let c = eval.var.row(i)[j];
                let v = eval.log_var.row(i)[j];
                loss += w * (diff * diff / c + v);
                d_mean.row_mut(i)[j] = -2.0 * w * diff / c;
                d_log_var.row_mut(i)[j] = w * (1.0 - diff * diff / c);
            }
        }
        let grad = self.backward(&eval, &d_mean, &d_log_var, phase)?;
        Ok((loss, grad))
    }

    /// Supervised regression of the clipped outputs toward a fixed mean and
    /// standard deviation, on standard-normal random observations.
    pub fn pretrain<R: Rng + ?Sized>(
        &mut self,
        target: &PretrainTarget,
        rng: &mut R,
        steps: usize,
        batch_size: usize,
    ) -> Result<f64> {
        ensure_dim(self.action_dim(), target.mean.len())?;
        ensure_dim(self.action_dim(), target.std.len())?;
        let target_log_var: Vec<f64> = target.std.iter().map(|s| 2.0 * s.ln()).collect();
        let mut opt = PolicyOptimizer::new(self, Adam::DEFAULT_LEARNING_RATE);
        let obs_dim = self.obs_dim();
        let mut last = f64::NAN;
        for _ in 0..steps {
            let data = (0..batch_size * obs_dim).map(|_| rng.sample(StandardNormal)).collect();
            let states = Matrix::from_vec(batch_size, obs_dim, data)?;
            let (loss, grad) = self.pretrain_loss(&states, &target.mean, &target_log_var)?;
            opt.step(self, &grad)?;
            last = loss;
        }
        Ok(last)
    }

    /// `(1/B) sum_i sum_j (mu_ij - mu*_j)^2 + (v_ij - v*_j)^2`.
    pub fn pretrain_loss(
        &self,
        states: &Matrix,
        target_mean: &[f64],
        target_log_var: &[f64],
    ) -> Result<(f64, PolicyGrad)> {
        let b = states.rows();
        if b == 0 {
            return Err(Error::Empty("batch"));
        }
        let eval = self.evaluate(states)?;
        let dim = self.action_dim();
        let scale = 1.0 / b as f64;
        let mut loss = 0.0;
        let mut d_mean = Matrix::zeros(b, dim);
        let mut d_log_var = Matrix::zeros(b, dim);
        for i in 0..b {
            for j in 0..dim {
                let dm = eval.mean.row(i)[j] - target_mean[j];
                let dv = eval.log_var.row(i)[j] - target_log_var[j];
                loss += scale * (dm * dm + dv * dv);
                d_mean.row_mut(i)[j] = 2.0 * scale * dm;
                d_log_var.row_mut(i)[j] = 2.0 * scale * dv;
            }
        }
        let grad = self.backward(&eval, &d_mean, &d_log_var, Phase::Joint)?;
        Ok((loss, grad))
    }

    const MAGIC: &'static [u8; 8] = b"PPOCMAPL";

    /// Header (bounds, limits, network kind) followed by the network checkpoints.
    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(Self::MAGIC)?;
        let header = serde_json::to_vec(&PolicyHeader {
            shared: self.is_shared(),
            bounds: self.bounds.clone(),
            limits: self.limits.clone(),
        })?;
        out.write_all(&(header.len() as u64).to_le_bytes())?;
        out.write_all(&header)?;
        match &self.nets {
            PolicyNets::Split { mean, var } => {
                mean.write_checkpoint(&mut out)?;
                var.write_checkpoint(&mut out)?;
            }
            PolicyNets::Shared(net) => net.write_checkpoint(&mut out)?,
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != Self::MAGIC {
            return Err(Error::Checkpoint("bad policy magic".into()));
        }
        let mut len = [0u8; 8];
        input.read_exact(&mut len)?;
        let mut header = vec![0u8; u64::from_le_bytes(len) as usize];
        input.read_exact(&mut header)?;
        let header: PolicyHeader = serde_json::from_slice(&header)?;
        let nets = if header.shared {
            PolicyNets::Shared(Network::read_checkpoint(&mut input)?)
        } else {
            let mean = Network::read_checkpoint(&mut input)?;
            let var = Network::read_checkpoint(&mut input)?;
            PolicyNets::Split { mean, var }
        };
        Ok(Self {
            nets,
            bounds: header.bounds,
            limits: header.limits,
        })
    }
}

/// Target of the initial supervised regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainTarget {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl PretrainTarget {
    /// Mean at the centre of the box, standard deviation of half its width.
    pub fn from_bounds(bounds: &ActionBounds) -> Self {
        let mean = bounds
            .low
            .iter()
            .zip(&bounds.high)
            .map(|(l, h)| 0.5 * (h + l))
            .collect();
        let std = bounds
            .low
            .iter()
            .zip(&bounds.high)
            .map(|(l, h)| 0.5 * (h - l))
            .collect();
        Self { mean, std }
    }
}

/// One Adam state per policy network.
#[derive(Debug, Clone)]
pub enum PolicyOptimizer {
    Split { mean: Adam, var: Adam },
    Shared(Adam),
}

impl PolicyOptimizer {
    pub fn new(policy: &GaussianPolicy, learning_rate: f64) -> Self {
        match &policy.nets {
            PolicyNets::Split { mean, var } => PolicyOptimizer::Split {
                mean: Adam::new(mean.param_count(), learning_rate),
                var: Adam::new(var.param_count(), learning_rate),
            },
            PolicyNets::Shared(net) => PolicyOptimizer::Shared(Adam::new(net.param_count(), learning_rate)),
        }
    }

    pub fn step(&mut self, policy: &mut GaussianPolicy, grad: &PolicyGrad) -> Result<()> {
        match (self, &mut policy.nets, grad) {
            (
                PolicyOptimizer::Split { mean: am, var: av },
                PolicyNets::Split { mean, var },
                PolicyGrad::Split { mean: gm, var: gv },
            ) => {
                if let Some(g) = gm {
                    am.step(mean, g)?;
                }
                if let Some(g) = gv {
                    av.step(var, g)?;
                }
                Ok(())
            }
            (PolicyOptimizer::Shared(adam), PolicyNets::Shared(net), PolicyGrad::Shared(g)) => adam.step(net, g),
            _ => Err(Error::InvalidArgument(
                "optimizer, policy and gradient kinds differ".into(),
            )),
        }
    }
}

pub fn sample_from<R: Rng + ?Sized>(mean: &[f64], var: &[f64], rng: &mut R) -> Vec<f64> {
    mean.iter()
        .zip(var)
        .map(|(m, c)| {
            let z: f64 = rng.sample(StandardNormal);
            m + c.sqrt() * z
        })
        .collect()
}

/// `sum_j -0.5 (a_j - mu_j)^2 / c_j - 0.5 log c_j - 0.5 log 2 pi`.
pub fn gaussian_log_density(action: &[f64], mean: &[f64], var: &[f64]) -> f64 {
    action
        .iter()
        .zip(mean.iter().zip(var))
        .map(|(a, (m, c))| -0.5 * (a - m).powi(2) / c - 0.5 * c.ln() - 0.5 * (2.0 * PI).ln())
        .sum()
}

/// Differential entropy `0.5 sum_j log(2 pi e c_j)`.
pub fn gaussian_entropy(var: &[f64]) -> f64 {
    var.iter()
        .map(|c| 0.5 * (2.0 * PI * std::f64::consts::E * c).ln())
        .sum()
}
