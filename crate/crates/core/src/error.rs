use thiserror::Error;

#[derive(Error, Debug)]
pub enum KreinError {
    #[error("dimension mismatch: {context} (expected {expected}, got {got})")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("matrix not positive semidefinite: smallest eigenvalue {min_eig:.3e}")]
    NotPositiveSemidefinite { min_eig: f64 },

    #[error("eta must be negative, got {0}")]
    EtaNotNegative(f64),

    #[error("shift z = {z} is not below the operator lower bound {lower_bound}")]
    ShiftTooHigh { z: f64, lower_bound: f64 },

    #[error("banded block of the shifted pencil is not positive definite")]
    IndefiniteInterior,

    #[error("deficiency decomposition singular (mesh too coarse or eta values too close)")]
    SingularDecomposition,

    #[error("divergent integral: the full singular form is infinite on functions with nonzero trace at 0")]
    DivergentIntegral,

    #[error("beta = 2 requires kappa > 1 for a relative bound a < 1 (got kappa = {kappa})")]
    HardyRegime { kappa: f64 },

    #[error("indefinite pencil: K + b*M not positive definite at b = {b}")]
    IndefinitePencil { b: f64 },

    #[error("eigensolver failed to converge: residual {residual:.3e} after {iterations} iterations")]
    EigenConvergence { residual: f64, iterations: usize },

    #[error("invalid configuration: {0}")]
    Validation(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, KreinError>;
