//! Codegree-matching estimators for partially linear regression with
//! network fixed effects.
//!
//! The library covers the full pipeline: network/node-sample ingestion,
//! empirical codegree distance matrices (binary, weighted-max, and
//! link-covariate-conditional), kernel-weighted pairwise-difference
//! estimation with jackknife bias correction, plug-in variance estimation
//! and confidence intervals, linear-in-means peer-effects estimation, and
//! a Monte Carlo laboratory that reproduces the reference simulation
//! designs.

pub mod cli;
pub mod codegree;
pub mod estimators;
pub mod inference;
pub mod kernels;
pub mod netdata;
pub mod norm;
pub mod peerfx;
pub mod simlab;

use thiserror::Error;

/// Library-wide error type.
#[derive(Debug, Error)]
pub enum NetregError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl NetregError {
    pub fn validation(msg: impl Into<String>) -> Self {
        NetregError::Validation(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        NetregError::Numerical(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, NetregError>;
