//! Stochastic variational Bayes for small likelihood models.
//!
//! A multivariate-normal approximate posterior, parameterized by its mean and
//! Cholesky factor, is fitted by maximizing the free energy (evidence lower
//! bound): the KL divergence to an MVN prior is computed in closed form and
//! the expected log-likelihood is estimated with reparameterized samples.
//! Gradients come from a small scalar reverse-mode tape ([`autodiff`]) and
//! the optimizer is Adam. A brute-force grid posterior ([`grid_oracle`])
//! serves as the reference solution.
//!
//! Data-parallel paths (grid evaluation, the multi-sample final free energy,
//! independent restarts) run on rayon when the `parallel` feature is on and
//! fall back to sequential loops otherwise; see [`parallel`].

pub mod autodiff;
pub mod distributions;
pub mod engine;
pub mod error;
pub mod grid_oracle;
pub mod optimizer;
pub mod parallel;
pub mod posterior;
pub mod rng;

pub use autodiff::{finite_diff_check, FdReport, Gradient, NodeId, Tape};
pub use distributions::{Dataset, ModelKind, NaturalParams, ThetaVector};
pub use engine::{fit, BatchSize, FitResult, FreeEnergyTrace, TrainConfig};
pub use error::{Result, SvbError};
pub use grid_oracle::{compare, grid_posterior, Comparison, GridResult, GridSpec, GridSummary};
pub use optimizer::{AdamConfig, AdamState};
pub use parallel::Execution;
pub use posterior::{extract_posterior, PosteriorParams, PosteriorSummary, PriorSpec};
pub use rng::SvbRng;
