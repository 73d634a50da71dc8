//! Bayesian sparse Gaussian graphical models for two-class data.
//!
//! Class-specific precision matrices are parameterized as `Ω = S (A ⊙ R) S`
//! and sampled jointly with a shared differential-edge indicator. The same
//! chain classifies unlabeled samples. Posterior summaries give edge
//! inclusion probabilities and Bayesian-FDR network calls.

pub mod baselines;
pub mod error;
pub mod inference;
pub mod model;
pub mod pdcore;
pub mod sampler;
pub mod synthetic;

pub use error::{Error, Result};
pub use model::{Class, Dataset, Hyperparameters};
