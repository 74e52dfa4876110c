use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::{Error, Result};

/// Relative tolerance for the Hermiticity check.
pub const HERMITIAN_RTOL: f64 = 1e-9;
/// An eigenvalue >= -PSD_RTOL * lambda_max counts as nonnegative.
pub const PSD_RTOL: f64 = 1e-8;
/// Absolute slack added to the PSD threshold so near-zero matrices pass.
pub const PSD_ABS_FLOOR: f64 = 1e-12;

/// One labeled tensor factor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Factor {
    pub label: String,
    pub dim: usize,
}

/// A square complex matrix on a labeled tensor product of factors.
///
/// The flat index is row-major over the factor list: the leftmost factor is
/// the slowest index. All structural operations (partial trace, partial
/// transpose, permutation, splitting and merging of factors) preserve that
/// convention.
#[derive(Debug, Clone)]
pub struct FactoredMatrix {
    mat: DMatrix<Complex64>,
    factors: Vec<Factor>,
}

fn check_factors(factors: &[Factor]) -> Result<usize> {
    let mut dim = 1usize;
    for (i, f) in factors.iter().enumerate() {
        if f.dim == 0 {
            return Err(Error::ShapeMismatch(format!(
                "factor `{}` has dimension zero",
                f.label
            )));
        }
        if factors[..i].iter().any(|g| g.label == f.label) {
            return Err(Error::DuplicateLabel {
                label: f.label.clone(),
            });
        }
        dim *= f.dim;
    }
    Ok(dim)
}

fn to_factors(spec: &[(&str, usize)]) -> Vec<Factor> {
    spec.iter()
        .map(|(l, d)| Factor {
            label: (*l).to_string(),
            dim: *d,
        })
        .collect()
}

/// stride[i] = product of dims to the right of factor i.
fn strides(factors: &[Factor]) -> Vec<usize> {
    let mut s = vec![1usize; factors.len()];
    for i in (0..factors.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * factors[i + 1].dim;
    }
    s
}

/// Flat offsets of every multi-index over the chosen factor positions,
/// enumerated with the leftmost listed position slowest.
fn subset_offsets(factors: &[Factor], strides: &[usize], positions: &[usize]) -> Vec<usize> {
    let total: usize = positions.iter().map(|&p| factors[p].dim).product();
    let mut out = Vec::with_capacity(total);
    for idx in 0..total {
        let mut t = idx;
        let mut off = 0usize;
        for &p in positions.iter().rev() {
            let d = factors[p].dim;
            off += (t % d) * strides[p];
            t /= d;
        }
        out.push(off);
    }
    out
}

impl FactoredMatrix {
    /// Wraps a square matrix whose dimension is the product of the factor dims.
    pub fn new(mat: DMatrix<Complex64>, factors: &[(&str, usize)]) -> Result<Self> {
        let factors = to_factors(factors);
        let dim = check_factors(&factors)?;
        if mat.nrows() != mat.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "matrix is {}x{}, expected square",
                mat.nrows(),
                mat.ncols()
            )));
        }
        if mat.nrows() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: mat.nrows(),
            });
        }
        Ok(Self { mat, factors })
    }

    pub(crate) fn from_parts(mat: DMatrix<Complex64>, factors: Vec<Factor>) -> Self {
        debug_assert_eq!(
            mat.nrows(),
            factors.iter().map(|f| f.dim).product::<usize>()
        );
        Self { mat, factors }
    }

    pub fn identity(factors: &[(&str, usize)]) -> Result<Self> {
        let factors = to_factors(factors);
        let dim = check_factors(&factors)?;
        Ok(Self {
            mat: DMatrix::identity(dim, dim),
            factors,
        })
    }

    pub fn zeros(factors: &[(&str, usize)]) -> Result<Self> {
        let factors = to_factors(factors);
        let dim = check_factors(&factors)?;
        Ok(Self {
            mat: DMatrix::zeros(dim, dim),
            factors,
        })
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.mat
    }

    pub fn into_matrix(self) -> DMatrix<Complex64> {
        self.mat
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn factor_dim(&self, label: &str) -> Result<usize> {
        Ok(self.factors[self.position(label)?].dim)
    }

    pub fn has_factor(&self, label: &str) -> bool {
        self.factors.iter().any(|f| f.label == label)
    }

    fn position(&self, label: &str) -> Result<usize> {
        self.factors
            .iter()
            .position(|f| f.label == label)
            .ok_or_else(|| Error::UnknownLabel {
                label: label.to_string(),
            })
    }

    fn positions(&self, labels: &[&str]) -> Result<Vec<usize>> {
        labels.iter().map(|l| self.position(l)).collect()
    }

    pub fn trace(&self) -> Complex64 {
        self.mat.diagonal().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.mat.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.mat.norm()
    }

    /// Frobenius distance; factor labels are ignored, dimensions must agree.
    pub fn frobenius_distance(&self, other: &Self) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        Ok((&self.mat - &other.mat).norm())
    }

    pub fn hermiticity_deviation(&self) -> f64 {
        let adj = self.mat.adjoint();
        (&self.mat - adj).iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermiticity_deviation() <= HERMITIAN_RTOL * (1.0 + self.max_abs())
    }

    /// Eigendecomposition of a Hermitian matrix; the matrix is symmetrized
    /// to (M + M^dag)/2 first. Eigenvalues are returned in ascending order.
    pub fn hermitian_eigen(&self) -> Result<(DVector<f64>, DMatrix<Complex64>)> {
        if !self.is_hermitian() {
            return Err(Error::NotHermitian {
                deviation: self.hermiticity_deviation(),
            });
        }
        let h = (&self.mat + self.mat.adjoint()).scale(0.5);
        let se = SymmetricEigen::new(h);
        let n = se.eigenvalues.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| se.eigenvalues[a].partial_cmp(&se.eigenvalues[b]).unwrap());
        let vals = DVector::from_iterator(n, order.iter().map(|&i| se.eigenvalues[i]));
        let mut vecs = DMatrix::zeros(n, n);
        for (k, &i) in order.iter().enumerate() {
            vecs.set_column(k, &se.eigenvectors.column(i));
        }
        Ok((vals, vecs))
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        let (vals, _) = self.hermitian_eigen()?;
        Ok(vals[0])
    }

    pub fn max_eigenvalue(&self) -> Result<f64> {
        let (vals, _) = self.hermitian_eigen()?;
        Ok(vals[vals.len() - 1])
    }

    /// How far below zero the spectrum reaches: max(0, -lambda_min).
    pub fn psd_residual(&self) -> Result<f64> {
        Ok((-self.min_eigenvalue()?).max(0.0))
    }

    pub fn is_psd(&self) -> Result<bool> {
        let (vals, _) = self.hermitian_eigen()?;
        let lmax = vals[vals.len() - 1];
        Ok(vals[0] >= -(PSD_RTOL * lmax.max(0.0) + PSD_ABS_FLOOR))
    }

    pub fn kron(&self, other: &Self) -> Result<Self> {
        let mut factors = self.factors.clone();
        factors.extend(other.factors.iter().cloned());
        check_factors(&factors)?;
        Ok(Self {
            mat: self.mat.kronecker(&other.mat),
            factors,
        })
    }

    /// Matrix product; the factor lists must agree exactly.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.factors != other.factors {
            return Err(Error::ShapeMismatch(
                "matrix product requires identical factor lists".to_string(),
            ));
        }
        Ok(Self {
            mat: &self.mat * &other.mat,
            factors: self.factors.clone(),
        })
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            mat: self.mat.scale(s),
            factors: self.factors.clone(),
        }
    }

    pub fn scaled_c(&self, s: Complex64) -> Self {
        Self {
            mat: &self.mat * s,
            factors: self.factors.clone(),
        }
    }

    pub fn try_add(&self, other: &Self) -> Result<Self> {
        if self.factors != other.factors {
            return Err(Error::ShapeMismatch(
                "sum requires identical factor lists".to_string(),
            ));
        }
        Ok(Self {
            mat: &self.mat + &other.mat,
            factors: self.factors.clone(),
        })
    }

    pub fn try_sub(&self, other: &Self) -> Result<Self> {
        if self.factors != other.factors {
            return Err(Error::ShapeMismatch(
                "difference requires identical factor lists".to_string(),
            ));
        }
        Ok(Self {
            mat: &self.mat - &other.mat,
            factors: self.factors.clone(),
        })
    }

    /// Full transpose in the computational basis; factors unchanged.
    pub fn transpose_full(&self) -> Self {
        Self {
            mat: self.mat.transpose(),
            factors: self.factors.clone(),
        }
    }

    pub fn adjoint_full(&self) -> Self {
        Self {
            mat: self.mat.adjoint(),
            factors: self.factors.clone(),
        }
    }

    /// Traces out the listed factors; remaining factors keep their order.
    pub fn partial_trace(&self, drop: &[&str]) -> Result<Self> {
        let drop_pos = self.positions(drop)?;
        let keep_pos: Vec<usize> = (0..self.factors.len())
            .filter(|p| !drop_pos.contains(p))
            .collect();
        let st = strides(&self.factors);
        let keep_off = subset_offsets(&self.factors, &st, &keep_pos);
        let drop_off = subset_offsets(&self.factors, &st, &drop_pos);
        let dk = keep_off.len();
        let mut out = DMatrix::zeros(dk, dk);
        for (r, &ro) in keep_off.iter().enumerate() {
            for (c, &co) in keep_off.iter().enumerate() {
                let mut acc = Complex64::new(0.0, 0.0);
                for &t in &drop_off {
                    acc += self.mat[(ro + t, co + t)];
                }
                out[(r, c)] = acc;
            }
        }
        let factors = keep_pos.iter().map(|&p| self.factors[p].clone()).collect();
        Ok(Self { mat: out, factors })
    }

    /// Transposes the listed factors in place, leaving the rest untouched.
    pub fn partial_transpose(&self, on: &[&str]) -> Result<Self> {
        let on_pos = self.positions(on)?;
        let off_pos: Vec<usize> = (0..self.factors.len())
            .filter(|p| !on_pos.contains(p))
            .collect();
        let st = strides(&self.factors);
        let on_off = subset_offsets(&self.factors, &st, &on_pos);
        let off_off = subset_offsets(&self.factors, &st, &off_pos);
        let mut out = DMatrix::zeros(self.dim(), self.dim());
        for &o1 in &off_off {
            for &o2 in &off_off {
                for &a1 in &on_off {
                    for &a2 in &on_off {
                        out[(o1 + a1, o2 + a2)] = self.mat[(o1 + a2, o2 + a1)];
                    }
                }
            }
        }
        Ok(Self {
            mat: out,
            factors: self.factors.clone(),
        })
    }

    /// Reorders factors; `order` must list every label exactly once.
    pub fn permute_factors(&self, order: &[&str]) -> Result<Self> {
        if order.len() != self.factors.len() {
            return Err(Error::ShapeMismatch(format!(
                "permutation lists {} labels, matrix has {} factors",
                order.len(),
                self.factors.len()
            )));
        }
        let new_pos = self.positions(order)?;
        {
            let mut seen = new_pos.clone();
            seen.sort_unstable();
            seen.dedup();
            if seen.len() != new_pos.len() {
                return Err(Error::ShapeMismatch(
                    "permutation repeats a label".to_string(),
                ));
            }
        }
        let st = strides(&self.factors);
        let d = self.dim();
        let mut map = Vec::with_capacity(d);
        for idx in 0..d {
            let mut t = idx;
            let mut off = 0usize;
            for &p in new_pos.iter().rev() {
                let df = self.factors[p].dim;
                off += (t % df) * st[p];
                t /= df;
            }
            map.push(off);
        }
        let mut out = DMatrix::zeros(d, d);
        for r in 0..d {
            for c in 0..d {
                out[(r, c)] = self.mat[(map[r], map[c])];
            }
        }
        let factors = new_pos.iter().map(|&p| self.factors[p].clone()).collect();
        Ok(Self { mat: out, factors })
    }

    /// Reinterprets one factor as a product of parts (leftmost part slowest).
    /// The matrix data is unchanged.
    pub fn split_factor(&self, label: &str, parts: &[(&str, usize)]) -> Result<Self> {
        let pos = self.position(label)?;
        let parts = to_factors(parts);
        let prod: usize = parts.iter().map(|f| f.dim).product();
        if prod != self.factors[pos].dim {
            return Err(Error::DimensionMismatch {
                expected: self.factors[pos].dim,
                got: prod,
            });
        }
        let mut factors = self.factors.clone();
        factors.splice(pos..=pos, parts);
        check_factors(&factors)?;
        Ok(Self {
            mat: self.mat.clone(),
            factors,
        })
    }

    /// Merges a contiguous run of factors into one; `labels` must match the
    /// run in order. The matrix data is unchanged.
    pub fn merge_factors(&self, labels: &[&str], new_label: &str) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::ShapeMismatch("cannot merge zero factors".to_string()));
        }
        let start = self.position(labels[0])?;
        for (k, l) in labels.iter().enumerate() {
            let p = self.position(l)?;
            if p != start + k {
                return Err(Error::ShapeMismatch(format!(
                    "factors to merge must be contiguous and in order; `{l}` is out of place"
                )));
            }
        }
        let dim: usize = labels
            .iter()
            .map(|l| self.factor_dim(l))
            .collect::<Result<Vec<_>>>()?
            .iter()
            .product();
        let mut factors = self.factors.clone();
        factors.splice(
            start..start + labels.len(),
            [Factor {
                label: new_label.to_string(),
                dim,
            }],
        );
        check_factors(&factors)?;
        Ok(Self {
            mat: self.mat.clone(),
            factors,
        })
    }

    pub fn rename_factor(&self, old: &str, new: &str) -> Result<Self> {
        let pos = self.position(old)?;
        let mut factors = self.factors.clone();
        factors[pos].label = new.to_string();
        check_factors(&factors)?;
        Ok(Self {
            mat: self.mat.clone(),
            factors,
        })
    }

    /// Replaces every factor label via the (old, new) pairs.
    pub fn rename_factors(&self, renames: &[(&str, &str)]) -> Result<Self> {
        let mut cur = self.clone();
        for (old, new) in renames {
            cur = cur.rename_factor(old, new)?;
        }
        Ok(cur)
    }

    /// Projects one factor onto a basis index and removes it:
    /// out = <k|_label M |k>_label.
    pub fn compress_factor(&self, label: &str, index: usize) -> Result<Self> {
        let pos = self.position(label)?;
        let dl = self.factors[pos].dim;
        if index >= dl {
            return Err(Error::IndexOutOfRange { index, len: dl });
        }
        let keep_pos: Vec<usize> = (0..self.factors.len()).filter(|&p| p != pos).collect();
        let st = strides(&self.factors);
        let keep_off = subset_offsets(&self.factors, &st, &keep_pos);
        let base = index * st[pos];
        let dk = keep_off.len();
        let mut out = DMatrix::zeros(dk, dk);
        for (r, &ro) in keep_off.iter().enumerate() {
            for (c, &co) in keep_off.iter().enumerate() {
                out[(r, c)] = self.mat[(ro + base, co + base)];
            }
        }
        let factors = keep_pos.iter().map(|&p| self.factors[p].clone()).collect();
        Ok(Self { mat: out, factors })
    }
}

/// Maximally mixed state I/d on one factor.
pub fn maximally_mixed(label: &str, d: usize) -> FactoredMatrix {
    FactoredMatrix::new(
        DMatrix::identity(d, d).scale(1.0 / d as f64),
        &[(label, d)],
    )
    .expect("valid factor")
}

/// Unnormalized maximally entangled operator sum_jk |jj><kk| (trace d).
pub fn phi_plus(l1: &str, l2: &str, d: usize) -> FactoredMatrix {
    let mut m = DMatrix::zeros(d * d, d * d);
    for j in 0..d {
        for k in 0..d {
            m[(j * d + j, k * d + k)] = Complex64::new(1.0, 0.0);
        }
    }
    FactoredMatrix::new(m, &[(l1, d), (l2, d)]).expect("valid factors")
}

pub fn pauli_x() -> DMatrix<Complex64> {
    DMatrix::from_row_slice(
        2,
        2,
        &[
            Complex64::new(0.0, 0.0),
            Complex64::new(1.0, 0.0),
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 0.0),
        ],
    )
}

pub fn pauli_y() -> DMatrix<Complex64> {
    DMatrix::from_row_slice(
        2,
        2,
        &[
            Complex64::new(0.0, 0.0),
            Complex64::new(0.0, -1.0),
            Complex64::new(0.0, 1.0),
            Complex64::new(0.0, 0.0),
        ],
    )
}

pub fn pauli_z() -> DMatrix<Complex64> {
    DMatrix::from_row_slice(
        2,
        2,
        &[
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 0.0),
            Complex64::new(0.0, 0.0),
            Complex64::new(-1.0, 0.0),
        ],
    )
}
