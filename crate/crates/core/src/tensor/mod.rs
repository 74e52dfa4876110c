//! Labeled tensor-factor linear algebra.
//!
//! Everything downstream manipulates operators on tensor products of small
//! Hilbert spaces. [`FactoredMatrix`] tracks the factor decomposition by
//! label so that partial traces, partial transposes and factor reorderings
//! can be requested by name instead of by index arithmetic. [`PureVector`]
//! is the rank-one counterpart used for purifications.
//!
//! Index convention: row-major Kronecker ordering, leftmost factor slowest.

mod factored;
mod pure;

pub use factored::{
    maximally_mixed, pauli_x, pauli_y, pauli_z, phi_plus, Factor, FactoredMatrix, HERMITIAN_RTOL,
    PSD_ABS_FLOOR, PSD_RTOL,
};
pub use pure::{phi_plus_vec, purify, PureVector, RANK_CUTOFF};
