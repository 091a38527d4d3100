//! Simplified CMA-ES: top-half log-rank weights, the rank-μ covariance update
//! around the old mean, and an evolution-path rank-one term. No step-size
//! control.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};

/// Eigenvalue floor kept on the covariance.
pub const EIGEN_FLOOR: f64 = 1e-12;

/// Weights for a population ranked by `fitness` (higher is better). The best
/// `m = floor(pop / 2)` samples get `log(m + 0.5) - log(rank)`, normalized to
/// sum to one; the rest get zero. Equal fitness keeps index order.
pub fn rank_weights(fitness: &[f64]) -> Result<Vec<f64>> {
    let pop = fitness.len();
    if pop < 2 {
        return Err(Error::InvalidArgument(format!("population {pop} < 2")));
    }
    if fitness.iter().any(|f| !f.is_finite()) {
        return Err(Error::NonFinite("fitness"));
    }
    let mut order: Vec<usize> = (0..pop).collect();
    order.sort_by(|&a, &b| fitness[b].total_cmp(&fitness[a]));
    let m = pop / 2;
    let raw: Vec<f64> = (1..=m).map(|rank| (m as f64 + 0.5).ln() - (rank as f64).ln()).collect();
    let total: f64 = raw.iter().sum();
    let mut weights = vec![0.0; pop];
    for (rank, &i) in order.iter().take(m).enumerate() {
        weights[i] = raw[rank] / total;
    }
    Ok(weights)
}

/// `(1 - c_mu - c_1) C + c_mu sum_i w_i (x_i - center)(x_i - center)^T + c_1 p p^T`.
pub fn covariance_update(
    cov: &DMatrix<f64>,
    samples: &[DVector<f64>],
    weights: &[f64],
    center: &DVector<f64>,
    path: &DVector<f64>,
    c_mu: f64,
    c_1: f64,
) -> DMatrix<f64> {
    let n = center.len();
    let mut rank_mu = DMatrix::zeros(n, n);
    for (x, &w) in samples.iter().zip(weights) {
        if w != 0.0 {
            let d = x - center;
            rank_mu += w * &d * d.transpose();
        }
    }
    cov * (1.0 - c_mu - c_1) + rank_mu * c_mu + path * path.transpose() * c_1
}

#[derive(Debug, Clone, PartialEq)]
pub struct CmaState {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub path: DVector<f64>,
    pub pop: usize,
    pub iteration: usize,
    pub c_mu: f64,
    pub c_1: f64,
    pub c_c: f64,
}

/// Result of one iteration.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CmaTraceRow {
    pub iteration: usize,
    pub best_fitness: f64,
    pub mean_norm: f64,
    pub cov_trace: f64,
    pub path_norm: f64,
}

impl CmaState {
    pub fn new(mean: Vec<f64>, cov: DMatrix<f64>, pop: usize) -> Result<Self> {
        let n = mean.len();
        if n == 0 {
            return Err(Error::Empty("mean"));
        }
        ensure_dim(n, cov.nrows())?;
        ensure_dim(n, cov.ncols())?;
        if pop < 2 {
            return Err(Error::InvalidArgument(format!("population {pop} < 2")));
        }
        let m = (pop / 2) as f64;
        let nf = n as f64;
        let mut state = Self {
            mean: DVector::from_vec(mean),
            cov,
            path: DVector::zeros(n),
            pop,
            iteration: 0,
            c_mu: 0.5 * (2.0 * m / (nf + 2.0).powi(2)).min(1.0),
            c_1: 2.0 / ((nf + 1.3).powi(2) + m),
            c_c: 4.0 / (nf + 4.0),
        };
        state.stabilize();
        Ok(state)
    }

    /// Isotropic start `N(mean, sigma^2 I)`.
    pub fn isotropic(mean: Vec<f64>, sigma: f64, pop: usize) -> Result<Self> {
        let n = mean.len();
        Self::new(mean, DMatrix::identity(n, n) * (sigma * sigma), pop)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Evolution-path decay `1 - c_c`.
    pub fn beta0(&self) -> f64 {
        1.0 - self.c_c
    }

    /// Evolution-path gain `sqrt(c_c (2 - c_c))`.
    pub fn beta1(&self) -> f64 {
        (self.c_c * (2.0 - self.c_c)).sqrt()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.cov.clone()).eigenvalues.min()
    }

    /// Symmetrizes the covariance and lifts its smallest eigenvalue above
    /// [`EIGEN_FLOOR`] by adding a multiple of the identity.
    fn stabilize(&mut self) {
        let sym = (&self.cov + self.cov.transpose()) * 0.5;
        self.cov = sym;
        let min = self.min_eigenvalue();
        if min <= EIGEN_FLOOR {
            let n = self.dim();
            self.cov += DMatrix::identity(n, n) * (2.0 * EIGEN_FLOOR - min);
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<DVector<f64>> {
        let n = self.dim();
        let chol = self
            .cov
            .clone()
            .cholesky()
            .expect("covariance is kept positive definite");
        let l = chol.l();
        (0..self.pop)
            .map(|_| {
                let z = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
                &self.mean + &l * z
            })
            .collect()
    }

    /// Updates covariance (around the old mean), then mean, then path.
    pub fn update(&mut self, samples: &[DVector<f64>], fitness: &[f64]) -> Result<()> {
        ensure_dim(self.pop, samples.len())?;
        ensure_dim(self.pop, fitness.len())?;
        let weights = rank_weights(fitness)?;
        let old_mean = self.mean.clone();
        self.cov = covariance_update(
            &self.cov,
            samples,
            &weights,
            &old_mean,
            &self.path,
            self.c_mu,
            self.c_1,
        );
        let mut new_mean = DVector::zeros(self.dim());
        for (x, &w) in samples.iter().zip(&weights) {
            new_mean += x * w;
        }
        self.path = &self.path * self.beta0() + (&new_mean - &old_mean) * self.beta1();
        self.mean = new_mean;
        self.stabilize();
        self.iteration += 1;
        Ok(())
    }

    /// Samples, evaluates `objective` (maximized) and updates the state.
    pub fn iterate<R, F>(&mut self, mut objective: F, rng: &mut R) -> Result<CmaTraceRow>
    where
        R: Rng + ?Sized,
        F: FnMut(&[f64]) -> f64,
    {
        let samples = self.sample(rng);
        let fitness: Vec<f64> = samples.iter().map(|x| objective(x.as_slice())).collect();
        if fitness.iter().any(|f| !f.is_finite()) {
            return Err(Error::NonFiniteObjective {
                iteration: self.iteration + 1,
            });
        }
        let best = fitness.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        self.update(&samples, &fitness)?;
        Ok(CmaTraceRow {
            iteration: self.iteration,
            best_fitness: best,
            mean_norm: self.mean.norm(),
            cov_trace: self.cov.trace(),
            path_norm: self.path.norm(),
        })
    }
}

pub fn write_trace_csv<W: Write>(out: W, rows: &[CmaTraceRow]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}
