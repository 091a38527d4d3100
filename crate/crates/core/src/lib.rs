//! PPO-CMA: proximal policy optimization with CMA-ES style variance
//! adaptation, alongside PPO, vanilla policy gradient and a simplified CMA-ES.

pub mod algorithms;
pub mod cma;
pub mod critic;
pub mod envs;
pub mod error;
pub mod harness;
pub mod nn;
pub mod policy;
pub mod scores;
pub mod sweep;
pub mod viz;

pub use error::{Error, Result};
