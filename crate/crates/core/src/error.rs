use std::io;

use thiserror::Error;

/// Errors raised anywhere in the relocalisation pipeline.
///
/// The CLI maps each variant onto its own exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] io::Error),

    /// Bad magic, unsupported version or a malformed record.
    #[error("format error: {0}")]
    Format(String),

    /// Dangling or duplicated identifiers.
    #[error("integrity error: {0}")]
    Integrity(String),

    /// Non-finite or otherwise invalid numeric content.
    #[error("data error: {0}")]
    Data(String),

    /// Dimension mismatch between a model and its inputs.
    #[error("shape error: {0}")]
    Shape(String),

    /// Invalid parameter or precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Geometric degeneracy (collinear points, zero extent, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Training produced a non-finite loss term.
    #[error("divergence in {term} at iteration {iteration}")]
    Divergence { term: &'static str, iteration: usize },

    /// Fewer correspondences than the estimator needs.
    #[error("insufficient matches: {found} < {required}")]
    InsufficientMatches { found: usize, required: usize },

    #[error("no submap: retrieval returned no map points")]
    EmptySubmap,

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
