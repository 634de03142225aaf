//! Simulation and estimation engine for a two-sided labor-market matching
//! model with information frictions and endogenous worker schooling.
//!
//! The model: `n` workers simultaneously choose one of two education levels
//! before matching (a Bayesian game with logit taste shocks), then firms,
//! ranked by a noisy capital index `v = beta * K + eta`, pick workers in
//! descending-index order (serial dictatorship), each taking a uniformly
//! random worker from the education pool it prefers. Wages follow a Nash
//! bargaining split between match output and the worker's outside option.
//!
//! The crate provides:
//! - analytic matching probabilities built from order statistics of normal
//!   mixtures ([`matchprob`], [`orderstat`]),
//! - the equilibrium schooling fixed point ([`equilibrium`]),
//! - the matching simulator and outcome statistics ([`matcher`]),
//! - maximum-likelihood estimation of preference parameters with parametric
//!   bootstrap confidence intervals, Monte Carlo tests and test-inversion
//!   confidence regions for the friction parameter ([`inference`]),
//! - batch experiment drivers with seeded, parallelism-independent output
//!   ([`experiments`]).

pub mod config;
pub mod equilibrium;
pub mod experiments;
pub mod inference;
pub mod matcher;
pub mod matchprob;
pub mod model;
pub mod optim;
pub mod orderstat;
pub mod report;
pub mod rng;

pub use config::{Config, EconomyConfig, OutsideForm, ProductionForm};
pub use model::{FirmPreferenceSplit, WorkerSample};

/// Library version string embedded in every output file.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Unified error type for configuration, data, and numerical failures.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(
        "fixed point did not converge in {max_iter} iterations (last residual {residual:.3e})"
    )]
    NoConvergence {
        max_iter: usize,
        residual: f64,
        /// Iterates visited before giving up, for post-mortem inspection.
        trajectory: Vec<f64>,
    },
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("bootstrap failed in {failed} of {total} replications")]
    BootstrapFailures { failed: usize, total: usize },
    #[error("malformed data file {path} at line {line}: {msg}")]
    DataFormat {
        path: String,
        line: usize,
        msg: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Classifies errors for process exit codes: configuration and input-format
/// problems exit 2, numerical failures exit 3.
impl Error {
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::DataFormat { .. } | Error::Io(_) | Error::Csv(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
