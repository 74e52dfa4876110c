use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::factored::{Factor, FactoredMatrix, PSD_ABS_FLOOR, PSD_RTOL};
use crate::{Error, Result};

/// Relative spectral cutoff used when choosing the purifying dimension.
pub const RANK_CUTOFF: f64 = 1e-12;

/// A vector on a labeled tensor product of factors (leftmost slowest).
#[derive(Debug, Clone)]
pub struct PureVector {
    amp: DVector<Complex64>,
    factors: Vec<Factor>,
}

impl PureVector {
    pub fn new(amp: DVector<Complex64>, factors: &[(&str, usize)]) -> Result<Self> {
        let probe = FactoredMatrix::zeros(factors)?;
        if probe.dim() != amp.len() {
            return Err(Error::DimensionMismatch {
                expected: probe.dim(),
                got: amp.len(),
            });
        }
        Ok(Self {
            amp,
            factors: probe.factors().to_vec(),
        })
    }

    pub(crate) fn from_parts(amp: DVector<Complex64>, factors: Vec<Factor>) -> Self {
        debug_assert_eq!(
            amp.len(),
            factors.iter().map(|f| f.dim).product::<usize>()
        );
        Self { amp, factors }
    }

    pub fn amplitudes(&self) -> &DVector<Complex64> {
        &self.amp
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn dim(&self) -> usize {
        self.amp.len()
    }

    pub fn factor_dim(&self, label: &str) -> Result<usize> {
        self.factors
            .iter()
            .find(|f| f.label == label)
            .map(|f| f.dim)
            .ok_or_else(|| Error::UnknownLabel {
                label: label.to_string(),
            })
    }

    pub fn norm_sq(&self) -> f64 {
        self.amp.iter().map(|c| c.norm_sqr()).sum()
    }

    /// |psi><psi| with the same factor list.
    pub fn outer(&self) -> FactoredMatrix {
        let d = self.dim();
        let mut m = DMatrix::zeros(d, d);
        for r in 0..d {
            for c in 0..d {
                m[(r, c)] = self.amp[r] * self.amp[c].conj();
            }
        }
        FactoredMatrix::from_parts(m, self.factors.clone())
    }

    pub fn kron(&self, other: &Self) -> Result<Self> {
        let mut factors = self.factors.clone();
        factors.extend(other.factors.iter().cloned());
        // reuse FactoredMatrix label validation
        let spec: Vec<(&str, usize)> = factors.iter().map(|f| (f.label.as_str(), f.dim)).collect();
        FactoredMatrix::zeros(&spec)?;
        Ok(Self {
            amp: self.amp.kronecker(&other.amp),
            factors,
        })
    }

    pub fn permute_factors(&self, order: &[&str]) -> Result<Self> {
        if order.len() != self.factors.len() {
            return Err(Error::ShapeMismatch(format!(
                "permutation lists {} labels, vector has {} factors",
                order.len(),
                self.factors.len()
            )));
        }
        let positions: Vec<usize> = order
            .iter()
            .map(|l| {
                self.factors
                    .iter()
                    .position(|f| f.label == *l)
                    .ok_or_else(|| Error::UnknownLabel {
                        label: (*l).to_string(),
                    })
            })
            .collect::<Result<_>>()?;
        {
            let mut seen = positions.clone();
            seen.sort_unstable();
            seen.dedup();
            if seen.len() != positions.len() {
                return Err(Error::ShapeMismatch(
                    "permutation repeats a label".to_string(),
                ));
            }
        }
        let mut strides = vec![1usize; self.factors.len()];
        for i in (0..self.factors.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.factors[i + 1].dim;
        }
        let d = self.dim();
        let mut amp = DVector::zeros(d);
        for idx in 0..d {
            let mut t = idx;
            let mut off = 0usize;
            for &p in positions.iter().rev() {
                let df = self.factors[p].dim;
                off += (t % df) * strides[p];
                t /= df;
            }
            amp[idx] = self.amp[off];
        }
        let factors = positions.iter().map(|&p| self.factors[p].clone()).collect();
        Ok(Self { amp, factors })
    }

    /// Enlarges one factor, embedding existing amplitudes at the low indices.
    pub fn pad_factor(&self, label: &str, new_dim: usize) -> Result<Self> {
        let pos = self
            .factors
            .iter()
            .position(|f| f.label == label)
            .ok_or_else(|| Error::UnknownLabel {
                label: label.to_string(),
            })?;
        let old_dim = self.factors[pos].dim;
        if new_dim < old_dim {
            return Err(Error::DimensionOrder {
                from: old_dim,
                to: new_dim,
            });
        }
        if new_dim == old_dim {
            return Ok(self.clone());
        }
        let mut new_factors = self.factors.clone();
        new_factors[pos].dim = new_dim;
        let slow: usize = self.factors[..pos].iter().map(|f| f.dim).product();
        let fast: usize = self.factors[pos + 1..].iter().map(|f| f.dim).product();
        let mut amp = DVector::zeros(slow * new_dim * fast);
        for s in 0..slow {
            for k in 0..old_dim {
                for f in 0..fast {
                    amp[(s * new_dim + k) * fast + f] = self.amp[(s * old_dim + k) * fast + f];
                }
            }
        }
        Ok(Self {
            amp,
            factors: new_factors,
        })
    }

    /// Reshapes the amplitudes into a matrix with the first `n_row_factors`
    /// factors indexing rows and the rest indexing columns.
    pub fn grouped_matrix(&self, n_row_factors: usize) -> DMatrix<Complex64> {
        let dr: usize = self.factors[..n_row_factors].iter().map(|f| f.dim).product();
        let dc: usize = self.factors[n_row_factors..].iter().map(|f| f.dim).product();
        DMatrix::from_fn(dr, dc, |r, c| self.amp[r * dc + c])
    }

    /// Marginal on the listed factors after projecting out the rest.
    pub fn marginal(&self, keep: &[&str]) -> Result<FactoredMatrix> {
        let drop: Vec<&str> = self
            .factors
            .iter()
            .filter(|f| !keep.contains(&f.label.as_str()))
            .map(|f| f.label.as_str())
            .collect();
        let m = self.outer().partial_trace(&drop)?;
        m.permute_factors(keep)
    }
}

/// Purifies a PSD matrix: returns |psi> on (factors of m, aux) whose marginal
/// over `aux` reproduces m. The aux dimension is the numerical rank at the
/// relative cutoff, never below 1.
pub fn purify(m: &FactoredMatrix, aux_label: &str, cutoff: f64) -> Result<PureVector> {
    if m.has_factor(aux_label) {
        return Err(Error::DuplicateLabel {
            label: aux_label.to_string(),
        });
    }
    let (vals, vecs) = m.hermitian_eigen()?;
    let n = vals.len();
    let lmax = vals[n - 1];
    if vals[0] < -(PSD_RTOL * lmax.max(0.0) + PSD_ABS_FLOOR) {
        return Err(Error::NotPsd {
            min_eigenvalue: vals[0],
        });
    }
    let threshold = cutoff * lmax.max(0.0);
    // descending order so the largest weight sits at aux index 0
    let kept: Vec<usize> = (0..n).rev().filter(|&i| vals[i] > threshold).collect();
    let r = kept.len().max(1);
    let mut amp = DVector::zeros(n * r);
    for (e, &i) in kept.iter().enumerate() {
        let w = vals[i].max(0.0).sqrt();
        for s in 0..n {
            amp[s * r + e] = vecs[(s, i)] * Complex64::new(w, 0.0);
        }
    }
    let mut factors = m.factors().to_vec();
    factors.push(Factor {
        label: aux_label.to_string(),
        dim: r,
    });
    Ok(PureVector::from_parts(amp, factors))
}

/// Unnormalized maximally entangled vector sum_j |jj> (norm^2 = d).
pub fn phi_plus_vec(l1: &str, l2: &str, d: usize) -> PureVector {
    let mut amp = DVector::zeros(d * d);
    for j in 0..d {
        amp[j * d + j] = Complex64::new(1.0, 0.0);
    }
    PureVector::new(amp, &[(l1, d), (l2, d)]).expect("valid factors")
}
