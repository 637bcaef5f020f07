//! Nonparametric estimation of a distribution function from interval-censored
//! (case 2) data.
//!
//! The crate provides:
//! - the current-status estimator (convex minorant / PAVA),
//! - a one-step least squares estimator built from a cusum diagram,
//! - the full least squares estimator computed by the iterative convex
//!   minorant algorithm with Lagrange multipliers, cross-checked by an
//!   interior-point log-barrier solver,
//! - the nonparametric MLE for case 2 interval censoring,
//! - Fenchel optimality-condition verification for the fitted estimators,
//! - the limit-theory scale/drift calculators and a Monte Carlo estimate of
//!   the variance of the Chernoff-type argmin limit,
//! - score-equation machinery for smooth functionals (e.g. the mean),
//! - reproducible seeded simulation studies and a CLI tying it together.

pub mod asymptotics;
pub mod characterization;
pub mod cli;
pub mod data_model;
pub mod estimators;
pub mod isotonic;
pub mod simulation;
pub mod smooth_functionals;

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("numerical failure: {0}")]
    Numerical(String),
}
