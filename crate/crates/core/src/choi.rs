//! Choi matrices of linear maps between matrix spaces.
//!
//! A map E from d_in x d_in to d_out x d_out matrices is stored as its Choi
//! operator J = sum_jk |j><k| (x) E(|j><k|) on the factors (in, out), with
//! the input factor slowest. E is CP iff J >= 0, trace preserving iff the
//! in-marginal Tr_out J equals the identity, trace-non-increasing iff that
//! marginal is at most the identity.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::{maximally_mixed, FactoredMatrix, PureVector, RANK_CUTOFF};
use crate::{Error, Result};

/// Absolute entrywise tolerance for marginal equality checks.
pub const MARGINAL_ATOL: f64 = 1e-8;

pub const IN_LABEL: &str = "in";
pub const OUT_LABEL: &str = "out";

/// Choi operator of a linear map between matrix algebras.
#[derive(Debug, Clone)]
pub struct MapChoi {
    d_in: usize,
    d_out: usize,
    j: FactoredMatrix,
}

/// CP / TP / TNI classification with numerical witnesses.
#[derive(Debug, Clone, Copy)]
pub struct MapClass {
    pub cp: bool,
    pub tp: bool,
    pub tni: bool,
    /// Smallest eigenvalue of the Choi operator.
    pub min_eigenvalue: f64,
    /// Largest entrywise deviation of the in-marginal from the identity.
    pub marginal_deviation: f64,
    /// How far the in-marginal exceeds the identity: max(0, -lambda_min(I - marginal)).
    pub marginal_excess: f64,
}

impl MapChoi {
    pub fn new(mat: DMatrix<Complex64>, d_in: usize, d_out: usize) -> Result<Self> {
        let j = FactoredMatrix::new(mat, &[(IN_LABEL, d_in), (OUT_LABEL, d_out)])?;
        Ok(Self { d_in, d_out, j })
    }

    /// Wraps a factored operator, merging the first `n_in` factors into the
    /// input and the rest into the output.
    pub fn from_grouped(fm: &FactoredMatrix, n_in: usize) -> Result<Self> {
        let labels: Vec<&str> = fm.factors().iter().map(|f| f.label.as_str()).collect();
        if n_in == 0 || n_in >= labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "cannot group {} of {} factors as map input",
                n_in,
                labels.len()
            )));
        }
        let merged_in = fm.merge_factors(&labels[..n_in], IN_LABEL)?;
        let out_labels: Vec<&str> = labels[n_in..].to_vec();
        let merged = merged_in.merge_factors(&out_labels, OUT_LABEL)?;
        let d_in = merged.factor_dim(IN_LABEL)?;
        let d_out = merged.factor_dim(OUT_LABEL)?;
        Ok(Self {
            d_in,
            d_out,
            j: merged,
        })
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    pub fn factored(&self) -> &FactoredMatrix {
        &self.j
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        self.j.matrix()
    }

    /// Identity channel: Choi is the unnormalized maximally entangled operator.
    pub fn identity(d: usize) -> Self {
        let j = crate::tensor::phi_plus(IN_LABEL, OUT_LABEL, d);
        Self { d_in: d, d_out: d, j }
    }

    /// Channel implementing conjugation by a fixed matrix (unitary or isometry).
    pub fn conjugation(v: &DMatrix<Complex64>) -> Result<Self> {
        choi_from_kraus(&[v.clone()])
    }

    /// Constant channel rho -> Tr[rho] sigma.
    pub fn constant(sigma: &FactoredMatrix, d_in: usize) -> Result<Self> {
        let i_in = FactoredMatrix::identity(&[(IN_LABEL, d_in)])?;
        let out = FactoredMatrix::new(sigma.matrix().clone(), &[(OUT_LABEL, sigma.dim())])?;
        let j = i_in.kron(&out)?;
        Ok(Self {
            d_in,
            d_out: sigma.dim(),
            j,
        })
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            d_in: self.d_in,
            d_out: self.d_out,
            j: self.j.scaled(s),
        }
    }

    pub fn try_add(&self, other: &Self) -> Result<Self> {
        Ok(Self {
            d_in: self.d_in,
            d_out: self.d_out,
            j: self.j.try_add(&other.j)?,
        })
    }

    pub fn try_sub(&self, other: &Self) -> Result<Self> {
        Ok(Self {
            d_in: self.d_in,
            d_out: self.d_out,
            j: self.j.try_sub(&other.j)?,
        })
    }

    pub fn scaled_c(&self, s: Complex64) -> Self {
        Self {
            d_in: self.d_in,
            d_out: self.d_out,
            j: self.j.scaled_c(s),
        }
    }

    /// In-marginal Tr_out J.
    pub fn in_marginal(&self) -> FactoredMatrix {
        self.j.partial_trace(&[OUT_LABEL]).expect("out factor exists")
    }

    /// Out-marginal Tr_in J (the image of the maximally mixed input, times d_in).
    pub fn out_marginal(&self) -> FactoredMatrix {
        self.j.partial_trace(&[IN_LABEL]).expect("in factor exists")
    }

    /// Applies the map to a state: Tr_in[J (rho^T (x) I_out)].
    pub fn apply(&self, rho: &FactoredMatrix) -> Result<FactoredMatrix> {
        if rho.dim() != self.d_in {
            return Err(Error::DimensionMismatch {
                expected: self.d_in,
                got: rho.dim(),
            });
        }
        let rho_t = FactoredMatrix::new(rho.matrix().transpose(), &[(IN_LABEL, self.d_in)])?;
        let lhs = rho_t.kron(&FactoredMatrix::identity(&[(OUT_LABEL, self.d_out)])?)?;
        lhs.matmul(&self.j)?.partial_trace(&[IN_LABEL])
    }

    pub fn classify(&self) -> Result<MapClass> {
        let (vals, _) = self.j.hermitian_eigen()?;
        let min_eigenvalue = vals[0];
        let lmax = vals[vals.len() - 1];
        let cp = min_eigenvalue
            >= -(crate::tensor::PSD_RTOL * lmax.max(0.0) + crate::tensor::PSD_ABS_FLOOR);
        let marg = self.in_marginal();
        let ident = FactoredMatrix::identity(&[(IN_LABEL, self.d_in)])?;
        let dev = marg.try_sub(&ident)?.max_abs();
        let tp = dev <= MARGINAL_ATOL;
        let slack = ident.try_sub(&marg)?;
        let slack_min = slack.min_eigenvalue()?;
        let tni = slack_min >= -MARGINAL_ATOL;
        Ok(MapClass {
            cp,
            tp,
            tni,
            min_eigenvalue,
            marginal_deviation: dev,
            marginal_excess: (-slack_min).max(0.0),
        })
    }

    /// Kraus operators from the spectral decomposition of the Choi operator.
    pub fn kraus_ops(&self) -> Result<Vec<DMatrix<Complex64>>> {
        let (vals, vecs) = self.j.hermitian_eigen()?;
        let n = vals.len();
        let lmax = vals[n - 1];
        if vals[0] < -(crate::tensor::PSD_RTOL * lmax.max(0.0) + crate::tensor::PSD_ABS_FLOOR) {
            return Err(Error::NotPsd {
                min_eigenvalue: vals[0],
            });
        }
        let mut out = Vec::new();
        for i in (0..n).rev() {
            if vals[i] > RANK_CUTOFF * lmax.max(0.0) {
                let w = vals[i].max(0.0).sqrt();
                let mut k = DMatrix::zeros(self.d_out, self.d_in);
                for ii in 0..self.d_in {
                    for oo in 0..self.d_out {
                        k[(oo, ii)] = vecs[(ii * self.d_out + oo, i)] * Complex64::new(w, 0.0);
                    }
                }
                out.push(k);
            }
        }
        if out.is_empty() {
            out.push(DMatrix::zeros(self.d_out, self.d_in));
        }
        Ok(out)
    }

    /// Whitens the in-marginal to the exact identity while preserving CP:
    /// J -> (G^{-1/2} (x) I) J (G^{-1/2} (x) I) with G the in-marginal.
    /// Useful for turning a numerically-almost-TP Choi into an exactly-TP one.
    pub fn renormalize_trace_preserving(&self) -> Result<Self> {
        let g = self.in_marginal();
        let (vals, vecs) = g.hermitian_eigen()?;
        let lmax = vals[vals.len() - 1].max(0.0);
        let mut inv_sqrt = DMatrix::zeros(self.d_in, self.d_in);
        for i in 0..vals.len() {
            if vals[i] > RANK_CUTOFF * lmax {
                let w = Complex64::new(1.0 / vals[i].sqrt(), 0.0);
                let col = vecs.column(i);
                for r in 0..self.d_in {
                    for c in 0..self.d_in {
                        inv_sqrt[(r, c)] += col[r] * w * col[c].conj();
                    }
                }
            }
        }
        let s = FactoredMatrix::new(inv_sqrt, &[(IN_LABEL, self.d_in)])?
            .kron(&FactoredMatrix::identity(&[(OUT_LABEL, self.d_out)])?)?;
        let j = s.matmul(&self.j)?.matmul(&s)?;
        Ok(Self {
            d_in: self.d_in,
            d_out: self.d_out,
            j,
        })
    }
}

/// Builds the Choi operator of the map with the given Kraus operators.
pub fn choi_from_kraus(kraus: &[DMatrix<Complex64>]) -> Result<MapChoi> {
    let first = kraus.first().ok_or_else(|| {
        Error::ShapeMismatch("at least one Kraus operator is required".to_string())
    })?;
    let (d_out, d_in) = (first.nrows(), first.ncols());
    if d_in == 0 || d_out == 0 {
        return Err(Error::ShapeMismatch("empty Kraus operator".to_string()));
    }
    let mut j = DMatrix::zeros(d_in * d_out, d_in * d_out);
    for k in kraus {
        if k.nrows() != d_out || k.ncols() != d_in {
            return Err(Error::ShapeMismatch(format!(
                "Kraus operators disagree in shape: {}x{} vs {}x{}",
                k.nrows(),
                k.ncols(),
                d_out,
                d_in
            )));
        }
        // vec(K)[(i,o)] = K[o,i]; J += vec(K) vec(K)^dag
        for i1 in 0..d_in {
            for o1 in 0..d_out {
                let a = k[(o1, i1)];
                if a.norm_sqr() == 0.0 {
                    continue;
                }
                for i2 in 0..d_in {
                    for o2 in 0..d_out {
                        j[(i1 * d_out + o1, i2 * d_out + o2)] += a * k[(o2, i2)].conj();
                    }
                }
            }
        }
    }
    MapChoi::new(j, d_in, d_out)
}

/// Seeded random channel from a Stinespring dilation: a Gaussian matrix is
/// orthonormalized by QR into an isometry d_in -> d_out * kraus_rank, whose
/// environment blocks are the Kraus operators. Deterministic in `seed`.
pub fn random_channel(d_in: usize, d_out: usize, kraus_rank: usize, seed: u64) -> Result<MapChoi> {
    if kraus_rank == 0 {
        return Err(Error::ShapeMismatch("kraus_rank must be positive".to_string()));
    }
    if d_out * kraus_rank < d_in {
        return Err(Error::ShapeMismatch(format!(
            "dilation {}x{} too small for input dimension {}",
            d_out, kraus_rank, d_in
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sample = || -> f64 { StandardNormal.sample(&mut rng) };
    let g = DMatrix::from_fn(d_out * kraus_rank, d_in, |_, _| {
        Complex64::new(sample(), sample())
    });
    let q = g.qr().q();
    let kraus: Vec<DMatrix<Complex64>> = (0..kraus_rank)
        .map(|m| {
            DMatrix::from_fn(d_out, d_in, |o, i| q[(m * d_out + o, i)])
        })
        .collect();
    choi_from_kraus(&kraus)
}

/// Completes a CPTNI map to a channel by routing the missing trace weight
/// into the maximally mixed output: J' = (I - Tr_out J) (x) I/d_out.
pub fn complete_map_to_channel(map: &MapChoi) -> Result<MapChoi> {
    let cls = map.classify()?;
    if !(cls.cp && cls.tni) {
        return Err(Error::NotCptni {
            min_eigenvalue: cls.min_eigenvalue,
            marginal_excess: cls.marginal_excess,
        });
    }
    let defect = FactoredMatrix::identity(&[(IN_LABEL, map.d_in())])?
        .try_sub(&map.in_marginal())?;
    let j = defect.kron(&maximally_mixed(OUT_LABEL, map.d_out()))?;
    Ok(MapChoi {
        d_in: map.d_in(),
        d_out: map.d_out(),
        j,
    })
}

/// Applies a channel to a subset of factors of a larger operator. The listed
/// input factors are consumed (merged in the given order, slowest first) and
/// replaced by the `out_factors`, appended after the untouched factors.
pub fn apply_on(
    state: &FactoredMatrix,
    channel: &MapChoi,
    in_labels: &[&str],
    out_factors: &[(&str, usize)],
) -> Result<FactoredMatrix> {
    const IN_TMP: &str = "__apply_in";
    const OUT_TMP: &str = "__apply_out";
    let others: Vec<&str> = state
        .factors()
        .iter()
        .map(|f| f.label.as_str())
        .filter(|l| !in_labels.contains(l))
        .collect();
    let order: Vec<&str> = others.iter().chain(in_labels.iter()).cloned().collect();
    let s = state.permute_factors(&order)?;
    let s = s.merge_factors(in_labels, IN_TMP)?;
    let d_s = s.factor_dim(IN_TMP)?;
    if d_s != channel.d_in() {
        return Err(Error::DimensionMismatch {
            expected: channel.d_in(),
            got: d_s,
        });
    }
    let d_o: usize = out_factors.iter().map(|(_, d)| *d).product();
    if d_o != channel.d_out() {
        return Err(Error::DimensionMismatch {
            expected: channel.d_out(),
            got: d_o,
        });
    }
    let st = s.partial_transpose(&[IN_TMP])?;
    let big = st.kron(&FactoredMatrix::identity(&[(OUT_TMP, d_o)])?)?;
    let others_spec: Vec<(&str, usize)> = s
        .factors()
        .iter()
        .filter(|f| f.label != IN_TMP)
        .map(|f| (f.label.as_str(), f.dim))
        .collect();
    let jlift = FactoredMatrix::identity(&others_spec)?.kron(
        &channel
            .factored()
            .rename_factors(&[(IN_LABEL, IN_TMP), (OUT_LABEL, OUT_TMP)])?,
    )?;
    let res = big.matmul(&jlift)?.partial_trace(&[IN_TMP])?;
    res.split_factor(OUT_TMP, out_factors)
}

/// Given two purifications of the same marginal on the shared factors,
/// returns the Choi operator of the isometry channel that maps the purifying
/// factors of `psi1` onto those of `psi2` (padded with fresh orthonormal
/// directions where the Schmidt rank falls short).
///
/// The purifying factors are merged in order of appearance, so callers fix
/// the input/output factor layout by permuting the vectors beforehand.
pub fn relate_purifications(
    psi1: &PureVector,
    psi2: &PureVector,
    shared: &[&str],
) -> Result<MapChoi> {
    let rest = |psi: &PureVector| -> Vec<String> {
        psi.factors()
            .iter()
            .map(|f| f.label.clone())
            .filter(|l| !shared.contains(&l.as_str()))
            .collect()
    };
    let rest1 = rest(psi1);
    let rest2 = rest(psi2);
    let order1: Vec<&str> = shared
        .iter()
        .cloned()
        .chain(rest1.iter().map(|s| s.as_str()))
        .collect();
    let order2: Vec<&str> = shared
        .iter()
        .cloned()
        .chain(rest2.iter().map(|s| s.as_str()))
        .collect();
    let p1 = psi1.permute_factors(&order1)?;
    let p2 = psi2.permute_factors(&order2)?;
    for l in shared {
        let d1 = p1.factor_dim(l)?;
        let d2 = p2.factor_dim(l)?;
        if d1 != d2 {
            return Err(Error::DimensionMismatch { expected: d1, got: d2 });
        }
    }
    let ds: usize = shared
        .iter()
        .map(|l| p1.factor_dim(l))
        .collect::<Result<Vec<_>>>()?
        .iter()
        .product();
    let de1 = p1.dim() / ds;
    let de2 = p2.dim() / ds;
    if de1 > de2 {
        return Err(Error::DimensionOrder { from: de1, to: de2 });
    }
    let m1 = p1.grouped_matrix(shared.len());
    let m2 = p2.grouped_matrix(shared.len());
    let k1 = &m1 * m1.adjoint();
    let k2 = &m2 * m2.adjoint();
    let residual = (&k1 - &k2).norm();
    if residual > 1e-7 * (1.0 + k1.norm().max(k2.norm())) {
        return Err(Error::MarginalMismatch { residual });
    }
    let k = FactoredMatrix::new((&k1 + &k2) * Complex64::new(0.5, 0.0), &[("__shared", ds)])?;
    let (vals, vecs) = k.hermitian_eigen()?;
    let lmax = vals[vals.len() - 1].max(0.0);
    let kept: Vec<usize> = (0..vals.len())
        .rev()
        .filter(|&i| vals[i] > RANK_CUTOFF * lmax)
        .take(de1)
        .collect();
    let r = kept.len();
    // W = M^dag U Sigma^{-1}; columns are orthonormal because M M^dag = K.
    let mut w1 = DMatrix::zeros(de1, r);
    let mut w2 = DMatrix::zeros(de2, r);
    for (col, &i) in kept.iter().enumerate() {
        let inv_sigma = Complex64::new(1.0 / vals[i].sqrt(), 0.0);
        let u = vecs.column(i);
        for e in 0..de1 {
            let mut acc = Complex64::new(0.0, 0.0);
            for s in 0..ds {
                acc += m1[(s, e)].conj() * u[s];
            }
            w1[(e, col)] = acc * inv_sigma;
        }
        for e in 0..de2 {
            let mut acc = Complex64::new(0.0, 0.0);
            for s in 0..ds {
                acc += m2[(s, e)].conj() * u[s];
            }
            w2[(e, col)] = acc * inv_sigma;
        }
    }
    let w1e = extend_orthonormal(&w1, de1)?;
    let w2e = extend_orthonormal(&w2, de1)?;
    // V = conj(W2e) W1e^T maps the psi1 purifier onto the psi2 purifier.
    let v = w2e.conjugate() * w1e.transpose();
    let ch = MapChoi::conjugation(&v)?;
    let check = (&m1 * v.transpose() - &m2).norm();
    if check > 1e-6 * (1.0 + m2.norm()) {
        return Err(Error::NumericalFailure(format!(
            "purification relating failed to reproduce the target (residual {check:.3e})"
        )));
    }
    Ok(ch)
}

/// Extends `w` (orthonormal columns, untouched) with fresh orthonormal
/// columns up to `total` columns, chosen from the standard basis by
/// Gram-Schmidt.
fn extend_orthonormal(w: &DMatrix<Complex64>, total: usize) -> Result<DMatrix<Complex64>> {
    let n = w.nrows();
    let r = w.ncols();
    if total < r || total > n {
        return Err(Error::ShapeMismatch(format!(
            "cannot extend {r} orthonormal columns to {total} in dimension {n}"
        )));
    }
    let mut out = DMatrix::zeros(n, total);
    out.columns_mut(0, r).copy_from(w);
    let mut have = r;
    for cand in 0..n {
        if have == total {
            break;
        }
        let mut v = DVector::<Complex64>::zeros(n);
        v[cand] = Complex64::new(1.0, 0.0);
        // two Gram-Schmidt passes for numerical hygiene
        for _ in 0..2 {
            for c in 0..have {
                let col = out.column(c);
                let ov: Complex64 = col.iter().zip(v.iter()).map(|(a, b)| a.conj() * b).sum();
                for i in 0..n {
                    v[i] -= out[(i, c)] * ov;
                }
            }
        }
        let norm = v.norm();
        if norm > 1e-8 {
            for i in 0..n {
                out[(i, have)] = v[i] / Complex64::new(norm, 0.0);
            }
            have += 1;
        }
    }
    if have < total {
        return Err(Error::NumericalFailure(
            "failed to complete an orthonormal basis".to_string(),
        ));
    }
    Ok(out)
}
