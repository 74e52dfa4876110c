use thiserror::Error;

/// Errors reported by the toolkit.
///
/// Numerical predicates (PSD, marginal equality, hermiticity) carry the
/// offending residual so callers can report how badly a check failed.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("duplicate factor label `{label}`")]
    DuplicateLabel { label: String },

    #[error("unknown factor label `{label}`")]
    UnknownLabel { label: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("matrix is not Hermitian (max |M - M^dag| = {deviation:.3e})")]
    NotHermitian { deviation: f64 },

    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:.3e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("purification marginals disagree on shared factors (residual {residual:.3e})")]
    MarginalMismatch { residual: f64 },

    #[error("purifying space too small: cannot map dimension {from} into dimension {to}")]
    DimensionOrder { from: usize, to: usize },

    #[error("map is not CP and trace-non-increasing (min eigenvalue {min_eigenvalue:.3e}, marginal excess {marginal_excess:.3e})")]
    NotCptni {
        min_eigenvalue: f64,
        marginal_excess: f64,
    },

    #[error("action callback is not linear (residual {residual:.3e})")]
    NonLinearAction { residual: f64 },

    #[error("operator marginal is not identity (x) state (residual {residual:.3e})")]
    BadMarginal { residual: f64 },

    #[error("supermap is not completely positive (min eigenvalue {min_eigenvalue:.3e})")]
    NotCpp { min_eigenvalue: f64 },

    #[error("solver failed: {0}")]
    SolverFailure(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("supermap is not completely CPTNI-preserving (value {alpha:.9} > 1)")]
    NotCompletelyCptni { alpha: f64 },

    #[error("not a superchannel (psd residual {psd:.3e}, memory marginal residual {marginal:.3e}, identity marginal residual {identity:.3e})")]
    NotSuperchannel { psd: f64, marginal: f64, identity: f64 },

    #[error("instrument branches do not sum to a superchannel (psd residual {psd:.3e}, memory marginal residual {marginal:.3e}, identity marginal residual {identity:.3e})")]
    BranchesDoNotSumToSuperchannel { psd: f64, marginal: f64, identity: f64 },

    #[error("index {index} out of range for {len} branches")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid comb realization: {0}")]
    InvalidComb(String),
}
