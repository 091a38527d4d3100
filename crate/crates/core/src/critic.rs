//! Value network, experience records and Generalized Advantage Estimation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envs::EpisodeEnd;
use crate::error::{ensure_dim, Error, Result};
use crate::nn::{minibatch_indices, Adam, Matrix, Network, NetworkLayout};

/// One simulated step. Observations are already normalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperienceTuple {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub s_next: Vec<f64>,
    pub end: EpisodeEnd,
    pub t: usize,
}

/// The ordered steps of one episode.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub tuples: Vec<ExperienceTuple>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn undiscounted_return(&self) -> f64 {
        self.tuples.iter().map(|x| x.r).sum()
    }

    /// Timesteps count up from zero and only the last step may end the episode.
    pub fn validate(&self) -> Result<()> {
        for (i, tuple) in self.tuples.iter().enumerate() {
            if tuple.t != i {
                return Err(Error::InvalidArgument(format!(
                    "timestep {} at position {i}",
                    tuple.t
                )));
            }
            if tuple.end.is_done() && i + 1 != self.tuples.len() {
                return Err(Error::InvalidArgument("episode end before last step".into()));
            }
        }
        Ok(())
    }
}

/// Normalized episode time `t / T`.
pub fn time_feature(t: usize, episode_cap: usize) -> Result<f64> {
    if episode_cap == 0 {
        return Err(Error::InvalidArgument("episode cap must be >= 1".into()));
    }
    Ok(t as f64 / episode_cap as f64)
}

/// State-value network whose input is the observation plus the time feature.
#[derive(Debug, Clone)]
pub struct Critic {
    net: Network,
    adam: Adam,
    episode_cap: usize,
}

impl Critic {
    pub fn new(obs_dim: usize, hidden: &[usize], episode_cap: usize, seed: u64) -> Result<Self> {
        let net = Network::new(NetworkLayout::new(obs_dim + 1, hidden, 1), seed)?;
        Self::from_network(net, episode_cap)
    }

    pub fn from_network(net: Network, episode_cap: usize) -> Result<Self> {
        if net.output_dim() != 1 || net.input_dim() < 2 {
            return Err(Error::InvalidArgument(
                "critic network needs a scalar output and obs_dim + 1 inputs".into(),
            ));
        }
        if episode_cap == 0 {
            return Err(Error::InvalidArgument("episode cap must be >= 1".into()));
        }
        let adam = Adam::for_network(&net);
        Ok(Self {
            net,
            adam,
            episode_cap,
        })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn episode_cap(&self) -> usize {
        self.episode_cap
    }

    pub fn obs_dim(&self) -> usize {
        self.net.input_dim() - 1
    }

    /// Observation rows with `t / T` appended.
    pub fn inputs(&self, states: &[&[f64]], timesteps: &[usize]) -> Result<Matrix> {
        ensure_dim(states.len(), timesteps.len())?;
        let width = self.net.input_dim();
        let mut data = Vec::with_capacity(states.len() * width);
        for (s, &t) in states.iter().zip(timesteps) {
            ensure_dim(width - 1, s.len())?;
            data.extend_from_slice(s);
            data.push(time_feature(t, self.episode_cap)?);
        }
        Matrix::from_vec(states.len(), width, data)
    }

    pub fn values(&self, inputs: &Matrix) -> Result<Vec<f64>> {
        Ok(self.net.forward(inputs)?.into_vec())
    }

    pub fn value(&self, s: &[f64], t: usize) -> Result<f64> {
        let inputs = self.inputs(&[s], &[t])?;
        Ok(self.values(&inputs)?[0])
    }

    /// Mean absolute error and its (sub)gradient; `sign(0)` is taken as 0.
    pub fn l1_loss(&self, inputs: &Matrix, targets: &[f64]) -> Result<(f64, Vec<f64>)> {
        let m = inputs.rows();
        if m == 0 {
            return Err(Error::Empty("critic batch"));
        }
        ensure_dim(m, targets.len())?;
        let cache = self.net.forward_cached(inputs)?;
        let out = cache.output();
        let scale = 1.0 / m as f64;
        let mut loss = 0.0;
        let mut d_out = Matrix::zeros(m, 1);
        for i in 0..m {
            let err = out.row(i)[0] - targets[i];
            loss += scale * err.abs();
            d_out.row_mut(i)[0] = if err > 0.0 {
                scale
            } else if err < 0.0 {
                -scale
            } else {
                0.0
            };
        }
        let grad = self.net.backward_cached(&cache, &d_out)?;
        Ok((loss, grad))
    }

    /// `steps` Adam updates on minibatches of `batch_size` drawn from
    /// `(inputs, targets)`; returns the mean minibatch loss.
    pub fn train<R: Rng + ?Sized>(
        &mut self,
        inputs: &Matrix,
        targets: &[f64],
        steps: usize,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<f64> {
        ensure_dim(inputs.rows(), targets.len())?;
        if inputs.rows() == 0 {
            return Err(Error::Empty("critic training set"));
        }
        let mut total = 0.0;
        for _ in 0..steps {
            let idx = minibatch_indices(inputs.rows(), batch_size, rng);
            let x = inputs.select_rows(&idx);
            let y: Vec<f64> = idx.iter().map(|&i| targets[i]).collect();
            let (loss, grad) = self.l1_loss(&x, &y)?;
            self.adam.step(&mut self.net, &grad)?;
            total += loss;
        }
        Ok(if steps == 0 { 0.0 } else { total / steps as f64 })
    }

    /// Values of each tuple's state and successor state.
    pub fn trajectory_values(&self, trajectory: &Trajectory) -> Result<(Vec<f64>, Vec<f64>)> {
        let states: Vec<&[f64]> = trajectory.tuples.iter().map(|x| x.s.as_slice()).collect();
        let next: Vec<&[f64]> = trajectory.tuples.iter().map(|x| x.s_next.as_slice()).collect();
        let t: Vec<usize> = trajectory.tuples.iter().map(|x| x.t).collect();
        let t_next: Vec<usize> = t.iter().map(|t| t + 1).collect();
        let values = self.values(&self.inputs(&states, &t)?)?;
        let next_values = self.values(&self.inputs(&next, &t_next)?)?;
        Ok((values, next_values))
    }

    pub fn write_checkpoint<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        out.write_all(&(self.episode_cap as u64).to_le_bytes())?;
        self.net.write_checkpoint(out)
    }

    pub fn read_checkpoint<R: std::io::Read>(mut input: R) -> Result<Self> {
        let mut cap = [0u8; 8];
        input.read_exact(&mut cap)?;
        let net = Network::read_checkpoint(input)?;
        Self::from_network(net, u64::from_le_bytes(cap) as usize)
    }
}

/// Advantages and the baseline values they were computed with.
#[derive(Debug, Clone, PartialEq)]
pub struct GaeOutput {
    pub advantages: Vec<f64>,
    pub values: Vec<f64>,
}

impl GaeOutput {
    /// Lambda-return regression targets `A + V`.
    pub fn value_targets(&self) -> Vec<f64> {
        self.advantages.iter().zip(&self.values).map(|(a, v)| a + v).collect()
    }
}

/// GAE by backward recursion `A_t = delta_t + gamma lambda A_{t+1}` with
/// `delta_t = r_t + gamma V(s_{t+1}) - V(s_t)`. A terminal step has no
/// successor value; a timeout, or a trajectory that just stops, bootstraps from
/// `next_values`.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    next_values: &[f64],
    ends: &[EpisodeEnd],
    gamma: f64,
    lambda: f64,
) -> Result<Vec<f64>> {
    let n = rewards.len();
    if n == 0 {
        return Err(Error::Empty("trajectory"));
    }
    ensure_dim(n, values.len())?;
    ensure_dim(n, next_values.len())?;
    ensure_dim(n, ends.len())?;
    if !(0.0..=1.0).contains(&gamma) || !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidArgument(format!(
            "gamma {gamma} and lambda {lambda} must lie in [0, 1]"
        )));
    }
    let mut advantages = vec![0.0; n];
    let mut carry = 0.0;
    for t in (0..n).rev() {
        let bootstrap = match ends[t] {
            EpisodeEnd::Terminal => 0.0,
            EpisodeEnd::Timeout | EpisodeEnd::None => next_values[t],
        };
        let delta = rewards[t] + gamma * bootstrap - values[t];
        let continues = ends[t] == EpisodeEnd::None && t + 1 < n;
        carry = delta + if continues { gamma * lambda * carry } else { 0.0 };
        advantages[t] = carry;
    }
    Ok(advantages)
}

pub fn compute_gae(trajectory: &Trajectory, critic: &Critic, gamma: f64, lambda: f64) -> Result<GaeOutput> {
    if trajectory.is_empty() {
        return Err(Error::Empty("trajectory"));
    }
    let (values, next_values) = critic.trajectory_values(trajectory)?;
    let rewards: Vec<f64> = trajectory.tuples.iter().map(|x| x.r).collect();
    let ends: Vec<EpisodeEnd> = trajectory.tuples.iter().map(|x| x.end).collect();
    let advantages = gae(&rewards, &values, &next_values, &ends, gamma, lambda)?;
    Ok(GaeOutput { advantages, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tests::{max_rel_err, numeric_grad};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_critic(obs_dim: usize) -> Critic {
        Critic::from_network(Network::zeros(NetworkLayout::new(obs_dim + 1, &[4], 1)).unwrap(), 10).unwrap()
    }

    fn trajectory(rewards: &[f64], end: EpisodeEnd) -> Trajectory {
        let n = rewards.len();
        Trajectory {
            tuples: rewards
                .iter()
                .enumerate()
                .map(|(t, &r)| ExperienceTuple {
                    s: vec![t as f64 * 0.1],
                    a: vec![0.0],
                    r,
                    s_next: vec![(t + 1) as f64 * 0.1],
                    end: if t + 1 == n { end } else { EpisodeEnd::None },
                    t,
                })
                .collect(),
        }
    }

    #[test]
    fn time_feature_values() {
        assert_eq!(time_feature(0, 1000).unwrap(), 0.0);
        assert_eq!(time_feature(1000, 1000).unwrap(), 1.0);
        assert_eq!(time_feature(500, 1000).unwrap(), 0.5);
        assert!(time_feature(0, 0).is_err());
    }

    #[test]
    fn zero_critic_values_are_zero() {
        let c = zero_critic(3);
        assert_eq!(c.value(&[1.0, 2.0, 3.0], 4).unwrap(), 0.0);
    }

    #[test]
    fn value_depends_on_time() {
        // No hidden layer, unit weight on the time input only.
        let net = Network::from_params(NetworkLayout::new(2, &[], 1), vec![0.0, 1.0, 0.0]).unwrap();
        let c = Critic::from_network(net, 10).unwrap();
        assert_eq!(c.value(&[0.5], 3).unwrap(), c.value(&[0.5], 3).unwrap());
        assert!((c.value(&[0.5], 3).unwrap() - 0.3).abs() < 1e-15);
        assert_ne!(c.value(&[0.5], 3).unwrap(), c.value(&[0.5], 4).unwrap());
    }

    #[test]
    fn gae_gamma_zero_is_one_step_advantage() {
        let rewards = [1.0, -2.0, 0.5];
        let values = [0.3, 0.1, -0.4];
        let next = [9.0, 9.0, 9.0];
        let ends = [EpisodeEnd::None, EpisodeEnd::None, EpisodeEnd::Terminal];
        let a = gae(&rewards, &values, &next, &ends, 0.0, 0.95).unwrap();
        for t in 0..3 {
            assert_eq!(a[t], rewards[t] - values[t]);
        }
    }

    #[test]
    fn gae_two_step_example() {
        let traj = trajectory(&[1.0, 1.0], EpisodeEnd::Terminal);
        let out = compute_gae(&traj, &zero_critic(1), 0.5, 1.0).unwrap();
        assert_eq!(out.advantages, vec![1.5, 1.0]);
    }

    #[test]
    fn gae_errors() {
        assert!(compute_gae(&Trajectory::default(), &zero_critic(1), 0.9, 0.9).is_err());
        assert!(gae(&[1.0], &[0.0], &[0.0], &[EpisodeEnd::Terminal], 1.5, 0.9).is_err());
    }

    #[test]
    fn timeout_differs_from_terminal_only_by_bootstrap() {
        let rewards = [0.2, -0.1, 0.4, 1.0];
        let values = [0.5, -0.3, 0.2, 0.1];
        let next = [-0.3, 0.2, 0.1, 0.7];
        let (gamma, lambda) = (0.9, 0.8);
        let mut ends = vec![EpisodeEnd::None; 4];
        ends[3] = EpisodeEnd::Terminal;
        let terminal = gae(&rewards, &values, &next, &ends, gamma, lambda).unwrap();
        ends[3] = EpisodeEnd::Timeout;
        let timeout = gae(&rewards, &values, &next, &ends, gamma, lambda).unwrap();
        for t in 0..4 {
            let expected = (gamma * lambda).powi(3 - t as i32) * gamma * next[3];
            assert!((timeout[t] - terminal[t] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn l1_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for trial in 0..20 {
            let c = Critic::new(2, &[5, 4], 10, trial).unwrap();
            let inputs = Matrix::from_vec(6, 3, (0..18).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let targets: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
            let (_, grad) = c.l1_loss(&inputs, &targets).unwrap();
            let layout = c.network().layout().clone();
            let numeric = numeric_grad(c.network().params(), 1e-5, |p| {
                let n = Network::from_params(layout.clone(), p.to_vec()).unwrap();
                Critic::from_network(n, 10).unwrap().l1_loss(&inputs, &targets).unwrap().0
            });
            let err = max_rel_err(&grad, &numeric);
            assert!(err < 1e-4, "trial {trial}: {err}");
        }
    }

    #[test]
    fn l1_fixed_point_and_constant_gradient_size() {
        // Output equals the targets: zero subgradient, training leaves the net alone.
        let mut c = zero_critic(1);
        let inputs = Matrix::from_rows(2, &[[0.3, 0.1], [0.7, 0.2]]).unwrap();
        let before = c.network().clone();
        let loss = c.train(&inputs, &[0.0, 0.0], 5, 2, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(c.network(), &before);

        // Scalar y = w x + b: the gradient magnitude does not grow with the error.
        let net = Network::from_params(NetworkLayout::new(2, &[], 1), vec![1.0, 0.0, 0.0]).unwrap();
        let c = Critic::from_network(net, 1).unwrap();
        let x = Matrix::from_rows(2, &[[2.0, 0.0]]).unwrap();
        let (_, g_small) = c.l1_loss(&x, &[1.0]).unwrap();
        let (_, g_big) = c.l1_loss(&x, &[-100.0]).unwrap();
        assert_eq!(g_small, g_big);
        assert_eq!(g_small, vec![2.0, 0.0, 1.0]);
    }

    fn sine_dataset(scale: f64) -> (Matrix, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 512;
        let mut data = Vec::with_capacity(n * 3);
        let mut targets = Vec::with_capacity(n);
        for _ in 0..n {
            let x0: f64 = rng.random_range(-2.0..2.0);
            let x1: f64 = rng.random_range(-1.0..1.0);
            let t: f64 = rng.random_range(0.0..1.0);
            data.extend_from_slice(&[x0, x1, t]);
            targets.push(scale * x0.sin());
        }
        (Matrix::from_vec(n, 3, data).unwrap(), targets)
    }

    fn fit(scale: f64) -> (Critic, f64) {
        let (inputs, targets) = sine_dataset(scale);
        let mut c = Critic::new(2, &[128, 128], 100, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        c.train(&inputs, &targets, 2000, 128, &mut rng).unwrap();
        let pred = c.values(&inputs).unwrap();
        let mae = pred.iter().zip(&targets).map(|(p, t)| (p - t).abs()).sum::<f64>() / targets.len() as f64;
        (c, mae)
    }

    #[test]
    fn l1_regression_fits_sine() {
        let (_, mae) = fit(1.0);
        assert!(mae < 0.05, "mean absolute error {mae}");
    }

    #[test]
    fn l1_regression_scales_with_targets() {
        let (c1, _) = fit(1.0);
        let (c10, _) = fit(10.0);
        let probe = c1.inputs(&[&[1.2, 0.0], &[-0.8, 0.5], &[1.5, -0.5]], &[20, 50, 80]).unwrap();
        let v1 = c1.values(&probe).unwrap();
        let v10 = c10.values(&probe).unwrap();
        for (a, b) in v1.iter().zip(&v10) {
            assert!((b / a / 10.0 - 1.0).abs() < 0.05, "{b} vs 10 x {a}");
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let c = Critic::new(3, &[4], 17, 1).unwrap();
        let mut buf = Vec::new();
        c.write_checkpoint(&mut buf).unwrap();
        let back = Critic::read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back.network(), c.network());
        assert_eq!(back.episode_cap(), 17);
    }

    #[test]
    fn trajectory_validation() {
        let mut traj = trajectory(&[1.0, 2.0, 3.0], EpisodeEnd::Timeout);
        traj.validate().unwrap();
        traj.tuples[0].end = EpisodeEnd::Terminal;
        assert!(traj.validate().is_err());
        let mut traj = trajectory(&[1.0, 2.0], EpisodeEnd::Terminal);
        traj.tuples[1].t = 5;
        assert!(traj.validate().is_err());
        assert_eq!(trajectory(&[1.0, 2.0], EpisodeEnd::Terminal).undiscounted_return(), 3.0);
    }
}
