//! Choi-picture toolkit for quantum supermaps.

pub mod certify;
pub mod choi;
pub mod comb;
pub mod error;
pub mod sdp;
pub mod supermap;
pub mod tensor;

pub use error::Error;

/// Convenience alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[cfg(test)]
mod smoke {
    use nalgebra::{DMatrix, SymmetricEigen};
    use num_complex::Complex64;

    #[test]
    fn complex_hermitian_eigen_works() {
        let m = DMatrix::from_row_slice(
            2,
            2,
            &[
                Complex64::new(1.0, 0.0),
                Complex64::new(0.0, -1.0),
                Complex64::new(0.0, 1.0),
                Complex64::new(1.0, 0.0),
            ],
        );
        let se = SymmetricEigen::new(m.clone());
        let mut vals: Vec<f64> = se.eigenvalues.iter().cloned().collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((vals[0] - 0.0).abs() < 1e-12);
        assert!((vals[1] - 2.0).abs() < 1e-12);
        // reconstruct
        let d = DMatrix::from_fn(2, 2, |i, j| {
            if i == j {
                Complex64::new(se.eigenvalues[i], 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        let r = &se.eigenvectors * d * se.eigenvectors.adjoint();
        assert!((r - m).norm() < 1e-12);
    }

    #[test]
    fn complex_qr_works() {
        let g = DMatrix::from_fn(4, 2, |i, j| Complex64::new((i + j) as f64 + 0.5, i as f64 - 1.3));
        let qr = g.clone().qr();
        let q = qr.q();
        assert_eq!(q.nrows(), 4);
        assert_eq!(q.ncols(), 2);
        let id = q.adjoint() * &q;
        assert!((id - DMatrix::<Complex64>::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn complex_cholesky_works() {
        let m = DMatrix::from_row_slice(
            2,
            2,
            &[
                Complex64::new(2.0, 0.0),
                Complex64::new(0.0, -0.5),
                Complex64::new(0.0, 0.5),
                Complex64::new(2.0, 0.0),
            ],
        );
        let ch = m.clone().cholesky().expect("pd");
        let l = ch.l();
        assert!((&l * l.adjoint() - m).norm() < 1e-12);
    }
}
