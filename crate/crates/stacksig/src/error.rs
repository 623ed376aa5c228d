//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by model construction, the solver pipeline, and the CLI.
#[derive(Debug, Error)]
pub enum Error {
    /// A matrix expected to be positive semi-definite has an eigenvalue below
    /// the clamp threshold.
    #[error("matrix is not positive semi-definite: min eigenvalue {min_eig:.3e} (threshold {threshold:.3e})")]
    NotPsd { min_eig: f64, threshold: f64 },

    /// A matrix required to be positive definite is singular at working
    /// precision.
    #[error("{context}: matrix is not positive definite (min eigenvalue {min_eig:.3e})")]
    NotPd { context: &'static str, min_eig: f64 },

    /// `R_R' R_R` (or another normal-equation matrix) is singular, so the
    /// receiver best response is not well defined.
    #[error("receiver weight matrix R_R'R_R is singular at working precision (min eigenvalue {min_eig:.3e})")]
    SingularRr { min_eig: f64 },

    /// Operands have incompatible shapes.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Model invariants violated (non-square, non-finite, singular A, ...).
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// A rank-1 sender weight was required (alpha extraction) but the stage
    /// policy has a different rank.
    #[error("stage {stage}: sender weight matrix has rank {rank}, expected rank 1")]
    RankNotOne { stage: usize, rank: usize },

    /// The brute-force oracle only supports p = 2 and short horizons.
    #[error("oracle supports p = 2 and n <= 3 (got p = {p}, n = {n})")]
    UnsupportedDimension { p: usize, n: usize },

    /// The oracle enumeration would exceed its evaluation budget.
    #[error("oracle budget exceeded: {evals:.3e} chain evaluations (cap {cap:.3e})")]
    BudgetExceeded { evals: f64, cap: f64 },

    /// Scenario configuration rejected on load.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 1 config, 2 verification, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidModel(_) | Error::Io(_) | Error::Json(_) => 1,
            _ => 3,
        }
    }
}
