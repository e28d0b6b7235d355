use thiserror::Error;

/// Errors produced by the samplers, oracles and minorization tools.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("all importance weights vanished at t = {t}")]
    ZeroWeight { t: usize },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("particle index {index} out of range for N = {n}")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("model does not support {0}")]
    UnsupportedModel(&'static str),

    #[error("invalid particle count N = {n}: {reason}")]
    InvalidN { n: usize, reason: &'static str },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("model produced a non-finite quantity: {0}")]
    NonFiniteModel(String),

    #[error("observation sequence has zero likelihood (first vanishing prefix ends at t = {t})")]
    ZeroLikelihood { t: usize },

    #[error("enumeration size {size} exceeds cap {cap}")]
    CapExceeded { size: u128, cap: u128 },

    #[error("no sup-norm bound on the importance weight is available")]
    UnboundedWeight,

    #[error("work budget exceeded: {0}")]
    BudgetExceeded(String),

    #[error("numerical degeneracy: {0}")]
    NumericalDegeneracy(String),

    #[error("empty sample")]
    EmptySample,

    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
