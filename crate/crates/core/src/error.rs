use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("lattice {width}x{height} is too small for a periodic wrap (need at least 3x3)")]
    DimensionTooSmall { width: usize, height: usize },

    #[error("no simple {d}-regular graph on {n} vertices")]
    Infeasible { n: usize, d: usize },

    #[error("enumeration over {configurations} configurations exceeds the cap of {cap}")]
    InstanceTooLarge { configurations: f64, cap: u64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("size mismatch: {what} has length {got}, expected {expected}")]
    SizeMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },

    #[error("message passing did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("all {0} Monte-Carlo samples failed to converge")]
    AllSamplesFailed(usize),

    #[error("no fixed point of the saddle-point equation was found")]
    NoFixedPoint,

    #[error("malformed {format} input: {reason}")]
    Parse { format: &'static str, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn parse(format: &'static str, reason: impl Into<String>) -> Self {
        Error::Parse {
            format,
            reason: reason.into(),
        }
    }
}
