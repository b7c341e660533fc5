use thiserror::Error;

use crate::experiments::RateTable;

/// Errors produced by the partitioning toolkit.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("resource limit exceeded: {0}")]
    Resource(String),

    #[error("sampling failed: {0}")]
    Sampling(String),

    #[error("quadrature did not converge: achieved error {achieved:e}, requested {requested:e}")]
    Quadrature { achieved: f64, requested: f64 },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    /// A replication failed; rows completed before the failure are kept.
    #[error("sweep aborted at n = {n}, replication {replication}: {source}")]
    SweepAborted {
        n: usize,
        replication: usize,
        partial: Box<RateTable>,
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid_input(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

pub(crate) fn invalid_param(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
