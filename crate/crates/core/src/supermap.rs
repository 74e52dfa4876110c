//! Choi representation of supermaps: linear maps sending maps A0 -> A1 to
//! maps B0 -> B1.
//!
//! A supermap Theta is stored through its own Choi operator on the four
//! factors (A0, A1, B0, B1), built by feeding the elementary matrix units
//! through the action. Applying Theta to a map with Choi J_E contracts the
//! A factors: J_{Theta[E]} = Tr_A[J_Theta (J_E^T (x) I_B)].

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::choi::MapChoi;
use crate::tensor::{maximally_mixed, phi_plus, phi_plus_vec, purify, FactoredMatrix, RANK_CUTOFF};
use crate::{Error, Result};

pub const A0: &str = "A0";
pub const A1: &str = "A1";
pub const B0: &str = "B0";
pub const B1: &str = "B1";

/// Frobenius-relative tolerance for the marginal condition checked by
/// [`realize_marginal`].
pub const REALIZE_MARGINAL_RTOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SupermapDims {
    pub a0: usize,
    pub a1: usize,
    pub b0: usize,
    pub b1: usize,
}

impl SupermapDims {
    pub fn new(a0: usize, a1: usize, b0: usize, b1: usize) -> Result<Self> {
        if a0 == 0 || a1 == 0 || b0 == 0 || b1 == 0 {
            return Err(Error::ShapeMismatch(
                "all four dimensions must be positive".to_string(),
            ));
        }
        Ok(Self { a0, a1, b0, b1 })
    }

    pub fn a_dim(&self) -> usize {
        self.a0 * self.a1
    }

    pub fn b_dim(&self) -> usize {
        self.b0 * self.b1
    }

    pub fn total(&self) -> usize {
        self.a_dim() * self.b_dim()
    }
}

/// Residuals of the three superchannel conditions; all vanish exactly when
/// the supermap sends channels to channels even in the presence of memory.
#[derive(Debug, Clone, Copy)]
pub struct SuperchannelReport {
    /// max(0, -lambda_min) of the supermap Choi operator.
    pub psd_residual: f64,
    /// Deviation of the (A, B0) marginal from (A0, B0) marginal (x) uniform A1.
    pub marginal_residual: f64,
    /// Deviation of the (A1, B0) marginal from the identity.
    pub identity_residual: f64,
}

impl SuperchannelReport {
    pub fn is_superchannel(&self, tol: f64) -> bool {
        self.psd_residual <= tol && self.marginal_residual <= tol && self.identity_residual <= tol
    }

    pub fn max_residual(&self) -> f64 {
        self.psd_residual
            .max(self.marginal_residual)
            .max(self.identity_residual)
    }
}

#[derive(Debug, Clone)]
pub struct SuperChoi {
    dims: SupermapDims,
    j: FactoredMatrix,
}

impl SuperChoi {
    pub fn new(mat: DMatrix<Complex64>, dims: SupermapDims) -> Result<Self> {
        let j = FactoredMatrix::new(
            mat,
            &[(A0, dims.a0), (A1, dims.a1), (B0, dims.b0), (B1, dims.b1)],
        )?;
        Ok(Self { dims, j })
    }

    /// Wraps an operator carrying the four factors A0, A1, B0, B1 in any
    /// order.
    pub fn from_factored(fm: &FactoredMatrix) -> Result<Self> {
        let j = fm.permute_factors(&[A0, A1, B0, B1])?;
        let dims = SupermapDims::new(
            j.factor_dim(A0)?,
            j.factor_dim(A1)?,
            j.factor_dim(B0)?,
            j.factor_dim(B1)?,
        )?;
        Ok(Self { dims, j })
    }

    /// Builds the Choi operator of a supermap from its action on maps, by
    /// feeding through all matrix units, then validates linearity of the
    /// action on a few random (generally non-Hermitian) inputs.
    pub fn from_action<F>(dims: SupermapDims, action: F) -> Result<Self>
    where
        F: Fn(&MapChoi) -> Result<MapChoi>,
    {
        let (a0, a1) = (dims.a0, dims.a1);
        let b = dims.b_dim();
        let mut big = DMatrix::<Complex64>::zeros(dims.total(), dims.total());
        for j in 0..a0 {
            for k in 0..a0 {
                for l in 0..a1 {
                    for m in 0..a1 {
                        let mut e = DMatrix::<Complex64>::zeros(a0 * a1, a0 * a1);
                        e[(j * a1 + l, k * a1 + m)] = Complex64::new(1.0, 0.0);
                        let out = action(&MapChoi::new(e, a0, a1)?)?;
                        if out.d_in() != dims.b0 || out.d_out() != dims.b1 {
                            return Err(Error::DimensionMismatch {
                                expected: dims.b_dim(),
                                got: out.d_in() * out.d_out(),
                            });
                        }
                        let block = out.matrix();
                        let r0 = (j * a1 + l) * b;
                        let c0 = (k * a1 + m) * b;
                        for r in 0..b {
                            for c in 0..b {
                                big[(r0 + r, c0 + c)] += block[(r, c)];
                            }
                        }
                    }
                }
            }
        }
        let sm = Self::new(big, dims)?;

        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_11eb);
        for _ in 0..3 {
            let a = dims.a_dim();
            let r = DMatrix::from_fn(a, a, |_, _| {
                Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
            });
            let probe = MapChoi::new(r, a0, a1)?;
            let direct = action(&probe)?;
            let via = sm.apply_to(&probe)?;
            let residual = (direct.matrix() - via.matrix()).norm();
            if residual > 1e-8 * (1.0 + direct.matrix().norm()) {
                return Err(Error::NonLinearAction { residual });
            }
        }
        Ok(sm)
    }

    pub fn dims(&self) -> SupermapDims {
        self.dims
    }

    pub fn factored(&self) -> &FactoredMatrix {
        &self.j
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        self.j.matrix()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            dims: self.dims,
            j: self.j.scaled(s),
        }
    }

    pub fn try_add(&self, other: &Self) -> Result<Self> {
        if self.dims != other.dims {
            return Err(Error::DimensionMismatch {
                expected: self.dims.total(),
                got: other.dims.total(),
            });
        }
        Ok(Self {
            dims: self.dims,
            j: self.j.try_add(&other.j)?,
        })
    }

    pub fn try_sub(&self, other: &Self) -> Result<Self> {
        if self.dims != other.dims {
            return Err(Error::DimensionMismatch {
                expected: self.dims.total(),
                got: other.dims.total(),
            });
        }
        Ok(Self {
            dims: self.dims,
            j: self.j.try_sub(&other.j)?,
        })
    }

    /// Applies the supermap to a map A0 -> A1, producing a map B0 -> B1.
    pub fn apply_to(&self, e: &MapChoi) -> Result<MapChoi> {
        if e.d_in() != self.dims.a0 || e.d_out() != self.dims.a1 {
            return Err(Error::DimensionMismatch {
                expected: self.dims.a_dim(),
                got: e.d_in() * e.d_out(),
            });
        }
        let je = e
            .factored()
            .rename_factors(&[(crate::choi::IN_LABEL, A0), (crate::choi::OUT_LABEL, A1)])?;
        let lhs = je
            .transpose_full()
            .kron(&FactoredMatrix::identity(&[(B0, self.dims.b0), (B1, self.dims.b1)])?)?;
        let jf = lhs.matmul(&self.j)?.partial_trace(&[A0, A1])?;
        MapChoi::from_grouped(&jf, 1)
    }

    /// Marginal on (A0, A1, B0).
    pub fn ab0_marginal(&self) -> FactoredMatrix {
        self.j.partial_trace(&[B1]).expect("B1 present")
    }

    /// Marginal on (A0, B0).
    pub fn a0b0_marginal(&self) -> FactoredMatrix {
        self.j.partial_trace(&[A1, B1]).expect("factors present")
    }

    /// Marginal on (A1, B0).
    pub fn a1b0_marginal(&self) -> FactoredMatrix {
        self.j.partial_trace(&[A0, B1]).expect("factors present")
    }

    /// Positivity of the Choi operator, i.e. complete positivity of the
    /// supermap in the preserving sense.
    pub fn is_cpp(&self) -> Result<bool> {
        Ok(self.j.is_psd()?)
    }

    pub fn psd_residual(&self) -> Result<f64> {
        self.j.psd_residual()
    }

    /// Evaluates the three structural conditions characterizing supermaps
    /// that send channels to channels even when applied to one share of a
    /// larger system.
    pub fn superchannel_report(&self) -> Result<SuperchannelReport> {
        let psd_residual = self.j.psd_residual()?;
        let ab0 = self.ab0_marginal();
        let want = self
            .a0b0_marginal()
            .kron(&maximally_mixed(A1, self.dims.a1))?
            .permute_factors(&[A0, A1, B0])?;
        let marginal_residual = ab0.try_sub(&want)?.max_abs();
        let a1b0 = self.a1b0_marginal();
        let identity_residual = a1b0
            .try_sub(&FactoredMatrix::identity(&[(A1, self.dims.a1), (B0, self.dims.b0)])?)?
            .max_abs();
        Ok(SuperchannelReport {
            psd_residual,
            marginal_residual,
            identity_residual,
        })
    }

    /// Correlated single-shot value Tr[J^{A B0} (J_N (x) rho)^T]: the
    /// probability-like functional obtained by feeding one share of `rho`
    /// through the transformed channel and pairing with the rest.
    pub fn pairing(&self, n: &MapChoi, rho: &FactoredMatrix) -> Result<f64> {
        if n.d_in() != self.dims.a0 || n.d_out() != self.dims.a1 {
            return Err(Error::DimensionMismatch {
                expected: self.dims.a_dim(),
                got: n.d_in() * n.d_out(),
            });
        }
        if rho.dim() != self.dims.b0 {
            return Err(Error::DimensionMismatch {
                expected: self.dims.b0,
                got: rho.dim(),
            });
        }
        let jn = n
            .factored()
            .rename_factors(&[(crate::choi::IN_LABEL, A0), (crate::choi::OUT_LABEL, A1)])?;
        let rho_b = FactoredMatrix::new(rho.matrix().clone(), &[(B0, self.dims.b0)])?;
        let k = jn.kron(&rho_b)?.transpose_full();
        Ok(self.ab0_marginal().matmul(&k)?.trace().re)
    }
}

/// Qubit singlet density operator (|01> - |10>)/sqrt(2), trace one.
pub fn singlet_state(l1: &str, l2: &str) -> FactoredMatrix {
    let mut m = DMatrix::<Complex64>::zeros(4, 4);
    let h = Complex64::new(0.5, 0.0);
    m[(1, 1)] = h;
    m[(2, 2)] = h;
    m[(1, 2)] = -h;
    m[(2, 1)] = -h;
    FactoredMatrix::new(m, &[(l1, 2), (l2, 2)]).expect("fixed shape")
}

/// The qubit supermap with Choi operator I^{A0} (x) singlet^{A1 B0} (x) u^{B1}.
/// It sends every channel to a channel, yet fails the memory-assisted
/// conditions: its correlated value over product strategies never exceeds 1
/// while entangled inputs reach 2.
pub fn singlet_counterexample() -> SuperChoi {
    let fm = FactoredMatrix::identity(&[(A0, 2)])
        .and_then(|i| i.kron(&singlet_state(A1, B0)))
        .and_then(|m| m.kron(&maximally_mixed(B1, 2)))
        .expect("fixed construction");
    SuperChoi::from_factored(&fm).expect("canonical order")
}

/// The identity supermap Theta[E] = E (requires matching dimensions).
pub fn identity_supermap(dims: SupermapDims) -> Result<SuperChoi> {
    if dims.a0 != dims.b0 || dims.a1 != dims.b1 {
        return Err(Error::ShapeMismatch(
            "identity supermap needs a0 == b0 and a1 == b1".to_string(),
        ));
    }
    let fm = phi_plus(A0, B0, dims.a0).kron(&phi_plus(A1, B1, dims.a1))?;
    SuperChoi::from_factored(&fm)
}

/// The superchannel that ignores its argument channel's effect entirely:
/// feed in the maximally mixed state, discard the output, reprepare uniform.
pub fn discard_and_reprepare(dims: SupermapDims) -> Result<SuperChoi> {
    let fm = maximally_mixed(A0, dims.a0)
        .kron(&FactoredMatrix::identity(&[(A1, dims.a1)])?)?
        .kron(&FactoredMatrix::identity(&[(B0, dims.b0)])?)?
        .kron(&maximally_mixed(B1, dims.b1))?;
    SuperChoi::from_factored(&fm)
}

/// A channel plus state realizing a given (A0, A1, B0) marginal.
#[derive(Debug, Clone)]
pub struct MarginalRealization {
    /// Channel from (R0, A0) to A1, with R0 the slower part of the merged
    /// input factor.
    pub channel: MapChoi,
    pub r0_dim: usize,
    /// Pure extension of the B0 state to (R0, B0).
    pub state: FactoredMatrix,
}

/// Decomposes a positive operator M on (A0, A1, B0) with Tr_{A1} M =
/// I^{A0} (x) rho^{B0} into a side state on (R0, B0) and a channel
/// (R0, A0) -> A1 whose combined action reproduces M. This realizes the
/// operator as an actual correlated strategy: share rho's purification, act
/// with the channel on the R0 half and the A0 probe.
pub fn realize_marginal(m: &FactoredMatrix) -> Result<MarginalRealization> {
    let m = m.permute_factors(&[A0, A1, B0])?;
    let a0 = m.factor_dim(A0)?;
    let a1 = m.factor_dim(A1)?;
    if !m.is_psd()? {
        return Err(Error::NotPsd {
            min_eigenvalue: m.min_eigenvalue()?,
        });
    }
    let rho = m
        .partial_trace(&[A0, A1])?
        .scaled(1.0 / a0 as f64);
    let want = FactoredMatrix::identity(&[(A0, a0)])?
        .kron(&rho)?
        .permute_factors(&[A0, B0])?;
    let got = m.partial_trace(&[A1])?;
    let residual = got.try_sub(&want)?.frobenius_norm();
    if residual > REALIZE_MARGINAL_RTOL * (1.0 + want.frobenius_norm()) {
        return Err(Error::BadMarginal { residual });
    }

    let phi = purify(&rho, "R0", RANK_CUTOFF)?; // factors (B0, R0)
    let r0 = phi.factor_dim("R0")?;
    let psi1 = phi_plus_vec(A0, "At", a0).kron(&phi)?; // (A0, At, B0, R0)
    let tau = purify(&m, "F0", RANK_CUTOFF)?; // (A0, A1, B0, F0)
    let f0 = tau.factor_dim("F0")?;
    let needed = (a0 * r0).div_ceil(a1);
    let tau = if f0 < needed {
        tau.pad_factor("F0", needed)?
    } else {
        tau
    };
    let v = crate::choi::relate_purifications(&psi1, &tau, &[A0, B0])?;
    // v: purifier (At, R0) -> (A1, F0); discard F0, reorder input to (R0, At)
    let f0 = v.d_out() / a1;
    let fc = v
        .factored()
        .split_factor(crate::choi::IN_LABEL, &[("At", a0), ("R0", r0)])?
        .split_factor(crate::choi::OUT_LABEL, &[(A1, a1), ("F0", f0)])?
        .partial_trace(&["F0"])?
        .permute_factors(&["R0", "At", A1])?;
    let channel = MapChoi::from_grouped(&fc, 2)?;
    Ok(MarginalRealization {
        channel,
        r0_dim: r0,
        state: phi.outer().permute_factors(&["R0", B0])?,
    })
}

/// Forward formula for the marginal produced by a side state on (R0, B0)
/// and a channel (R0, A0) -> A1:
/// M = Tr_{R0}[(state (x) I^{A0 A1}) (J_N^{T_{R0}} (x) I^{B0})].
pub fn marginal_from_channel_state(
    channel: &MapChoi,
    r0_dim: usize,
    state: &FactoredMatrix,
) -> Result<FactoredMatrix> {
    let state = state.permute_factors(&["R0", B0])?;
    let r0 = state.factor_dim("R0")?;
    let b0 = state.factor_dim(B0)?;
    if r0 != r0_dim || channel.d_in() % r0 != 0 {
        return Err(Error::DimensionMismatch {
            expected: r0_dim,
            got: r0,
        });
    }
    let a0 = channel.d_in() / r0;
    let a1 = channel.d_out();
    let jn = channel
        .factored()
        .split_factor(crate::choi::IN_LABEL, &[("R0", r0), (A0, a0)])?
        .rename_factor(crate::choi::OUT_LABEL, A1)?
        .partial_transpose(&["R0"])?
        .kron(&FactoredMatrix::identity(&[(B0, b0)])?)?;
    let lhs = state
        .kron(&FactoredMatrix::identity(&[(A0, a0), (A1, a1)])?)?
        .permute_factors(&["R0", A0, A1, B0])?;
    lhs.matmul(&jn)?.partial_trace(&["R0"])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::choi::{choi_from_kraus, random_channel};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_density(d: usize, label: &str, seed: u64) -> FactoredMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = DMatrix::from_fn(d, d, |_, _| c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5));
        let p = &g * g.adjoint();
        let t = p.diagonal().sum().re;
        FactoredMatrix::new(p * Complex64::new(1.0 / t, 0.0), &[(label, d)]).unwrap()
    }

    fn qubit_dims() -> SupermapDims {
        SupermapDims::new(2, 2, 2, 2).unwrap()
    }

    #[test]
    fn identity_supermap_choi_is_paired_entangled_operators() {
        let sm = identity_supermap(qubit_dims()).unwrap();
        let want = phi_plus(A0, B0, 2)
            .kron(&phi_plus(A1, B1, 2))
            .unwrap()
            .permute_factors(&[A0, A1, B0, B1])
            .unwrap();
        assert!(sm.factored().frobenius_distance(&want).unwrap() < 1e-14);
    }

    #[test]
    fn identity_supermap_applies_as_identity() {
        let sm = identity_supermap(qubit_dims()).unwrap();
        let e = random_channel(2, 2, 2, 3).unwrap();
        let out = sm.apply_to(&e).unwrap();
        assert!((out.matrix() - e.matrix()).norm() < 1e-12);
    }

    #[test]
    fn from_action_on_identity_action_recovers_identity_supermap() {
        let sm = SuperChoi::from_action(qubit_dims(), |e| Ok(e.clone())).unwrap();
        let want = identity_supermap(qubit_dims()).unwrap();
        assert!(sm.factored().frobenius_distance(want.factored()).unwrap() < 1e-12);
    }

    #[test]
    fn from_action_roundtrips_an_arbitrary_supermap() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let dims = qubit_dims();
        let g = DMatrix::from_fn(dims.total(), dims.total(), |_, _| {
            c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
        });
        let big = SuperChoi::new(&g + g.adjoint(), dims).unwrap();
        let rebuilt = SuperChoi::from_action(dims, |e| big.apply_to(e)).unwrap();
        assert!(
            rebuilt.factored().frobenius_distance(big.factored()).unwrap()
                < 1e-8 * (1.0 + big.matrix().norm())
        );
    }

    #[test]
    fn from_action_rejects_nonlinear_action() {
        let dims = qubit_dims();
        let fixed = random_channel(2, 2, 2, 5).unwrap();
        let got = SuperChoi::from_action(dims, |_| Ok(fixed.clone()));
        assert!(matches!(got, Err(Error::NonLinearAction { .. })));
    }

    #[test]
    fn counterexample_choi_matches_action_built_from_its_formula() {
        // The action behind the fixed Choi: E maps to
        // Tr_{A1}[singlet (E(I)^T (x) I)] (x) uniform.
        let dims = qubit_dims();
        let by_action = SuperChoi::from_action(dims, |e| {
            let ei = e
                .apply(&FactoredMatrix::identity(&[("S", 2)]).unwrap())?
                .rename_factor("out", A1)?;
            let contracted = singlet_state(A1, B0)
                .matmul(&ei.transpose_full().kron(&FactoredMatrix::identity(&[(B0, 2)])?)?)?
                .partial_trace(&[A1])?;
            let jf = contracted.kron(&maximally_mixed(B1, 2))?;
            MapChoi::from_grouped(&jf, 1)
        })
        .unwrap();
        let fixed = singlet_counterexample();
        assert!(
            by_action
                .factored()
                .frobenius_distance(fixed.factored())
                .unwrap()
                < 1e-10
        );
    }

    #[test]
    fn counterexample_halves_the_identity_channel() {
        // applying to the identity yields half the reprepare-uniform map:
        // trace-decreasing output, witnessing that the supermap is no
        // superchannel even though it treats single channels lawfully
        let sm = singlet_counterexample();
        let out = sm.apply_to(&MapChoi::identity(2)).unwrap();
        let want = DMatrix::<Complex64>::identity(4, 4) * c(0.25, 0.0);
        assert!((out.matrix() - want).norm() < 1e-12);
        let cls = out.classify().unwrap();
        assert!(cls.cp && cls.tni && !cls.tp);
    }

    #[test]
    fn counterexample_is_cpp_but_not_a_superchannel() {
        let sm = singlet_counterexample();
        assert!(sm.is_cpp().unwrap());
        let rep = sm.superchannel_report().unwrap();
        assert!(rep.psd_residual < 1e-12);
        // the (A1, B0) marginal is 2 * singlet, far from the identity
        assert!(rep.identity_residual > 0.4);
        assert!(!rep.is_superchannel(1e-6));
    }

    #[test]
    fn discard_and_reprepare_is_a_superchannel() {
        let dims = SupermapDims::new(2, 3, 2, 2).unwrap();
        let sm = discard_and_reprepare(dims).unwrap();
        let rep = sm.superchannel_report().unwrap();
        assert!(rep.is_superchannel(1e-12), "{rep:?}");
        // its output never depends on the argument channel
        let e1 = random_channel(2, 3, 2, 1).unwrap();
        let e2 = random_channel(2, 3, 1, 2).unwrap();
        let o1 = sm.apply_to(&e1).unwrap();
        let o2 = sm.apply_to(&e2).unwrap();
        assert!((o1.matrix() - o2.matrix()).norm() < 1e-10);
    }

    #[test]
    fn identity_supermap_is_a_superchannel() {
        let rep = identity_supermap(qubit_dims())
            .unwrap()
            .superchannel_report()
            .unwrap();
        assert!(rep.is_superchannel(1e-12), "{rep:?}");
    }

    #[test]
    fn pairing_with_product_strategy_evaluates_the_transformed_channel() {
        // For J^{A B0} = sum, the pairing with (N, rho) equals
        // Tr[Theta-half applied...]; on the fixed example with the identity
        // strategy and uniform rho it gives Tr[singlet (I/2 (x) I)] ... = 1/2.
        let sm = singlet_counterexample();
        let n = MapChoi::identity(2);
        let rho = maximally_mixed("r", 2);
        let v = sm.pairing(&n, &rho).unwrap();
        // Tr[(I (x) singlet)(J_phi+^T (x) u)] with J_phi+^T = phi+^T:
        // direct evaluation gives 1/2 * Tr[phi+^T_{A1B0->...}] ... frozen: 0.25
        // oracle below recomputes it straight from definitions
        let ab0 = sm.ab0_marginal();
        let jn = n
            .factored()
            .rename_factors(&[("in", A0), ("out", A1)])
            .unwrap();
        let k = jn
            .kron(&FactoredMatrix::new(rho.matrix().clone(), &[(B0, 2)]).unwrap())
            .unwrap();
        let want: Complex64 = (ab0.matrix() * k.matrix().transpose()).diagonal().sum();
        assert!((v - want.re).abs() < 1e-14);
        assert!(want.im.abs() < 1e-14);
    }

    #[test]
    fn pairing_is_linear_in_the_state() {
        let sm = singlet_counterexample();
        let n = random_channel(2, 2, 2, 9).unwrap();
        let r1 = random_density(2, "r", 1);
        let r2 = random_density(2, "r", 2);
        let mix = r1.scaled(0.25).try_add(&r2.scaled(0.75)).unwrap();
        let lhs = sm.pairing(&n, &mix).unwrap();
        let rhs = 0.25 * sm.pairing(&n, &r1).unwrap() + 0.75 * sm.pairing(&n, &r2).unwrap();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn realize_marginal_roundtrips_a_product_marginal() {
        let sigma = random_density(2, A1, 31);
        let rho = random_density(2, B0, 32);
        let m = FactoredMatrix::identity(&[(A0, 2)])
            .unwrap()
            .kron(&sigma)
            .unwrap()
            .kron(&rho)
            .unwrap();
        let real = realize_marginal(&m).unwrap();
        let back = marginal_from_channel_state(&real.channel, real.r0_dim, &real.state).unwrap();
        assert!(back.frobenius_distance(&m).unwrap() < 1e-7);
        let cls = real.channel.classify().unwrap();
        assert!(cls.cp && cls.tp, "{cls:?}");
    }

    #[test]
    fn realize_marginal_roundtrips_the_entangled_marginal() {
        let m = FactoredMatrix::identity(&[(A0, 2)])
            .unwrap()
            .kron(&singlet_state(A1, B0))
            .unwrap();
        let real = realize_marginal(&m).unwrap();
        let back = marginal_from_channel_state(&real.channel, real.r0_dim, &real.state).unwrap();
        assert!(back.frobenius_distance(&m).unwrap() < 1e-7);
    }

    #[test]
    fn realize_marginal_roundtrips_forward_built_marginals() {
        for seed in 0..6u64 {
            let r0 = 2;
            let n = random_channel(r0 * 2, 2, 2, 700 + seed).unwrap();
            let rho_b = random_density(2, B0, 800 + seed);
            let psi = purify(&rho_b, "R0", RANK_CUTOFF).unwrap();
            let psi = if psi.factor_dim("R0").unwrap() < r0 {
                psi.pad_factor("R0", r0).unwrap()
            } else {
                psi
            };
            let state = psi.outer().permute_factors(&["R0", B0]).unwrap();
            let m = marginal_from_channel_state(&n, r0, &state).unwrap();
            let real = realize_marginal(&m).unwrap();
            let back =
                marginal_from_channel_state(&real.channel, real.r0_dim, &real.state).unwrap();
            assert!(
                back.frobenius_distance(&m).unwrap() < 1e-7,
                "seed {seed}: {}",
                back.frobenius_distance(&m).unwrap()
            );
        }
    }

    #[test]
    fn realize_marginal_rejects_bad_marginals() {
        let m = random_density(8, "x", 3)
            .split_factor("x", &[(A0, 2), (A1, 2), (B0, 2)])
            .unwrap();
        assert!(matches!(
            realize_marginal(&m),
            Err(Error::BadMarginal { .. })
        ));
    }

    #[test]
    fn forward_marginal_satisfies_the_marginal_condition() {
        let n = random_channel(4, 3, 2, 41).unwrap();
        let rho_b = random_density(2, B0, 42);
        let psi = purify(&rho_b, "R0", RANK_CUTOFF).unwrap().pad_factor("R0", 2).unwrap();
        let state = psi.outer().permute_factors(&["R0", B0]).unwrap();
        let m = marginal_from_channel_state(&n, 2, &state).unwrap();
        // Tr_{A1} M = I^{A0} (x) rho for a trace-preserving inner channel
        let got = m.partial_trace(&[A1]).unwrap();
        let want = FactoredMatrix::identity(&[(A0, 2)])
            .unwrap()
            .kron(&rho_b)
            .unwrap();
        assert!(got.frobenius_distance(&want).unwrap() < 1e-9);
        assert!(m.is_psd().unwrap());
    }

    #[test]
    fn unitary_kraus_action_matches_supermap_conjugation() {
        // pre/post rotation supermap: Theta[E] = V E V^dag pointwise via Choi
        let u = random_channel(2, 2, 1, 50).unwrap().kraus_ops().unwrap()[0].clone();
        let dims = qubit_dims();
        let sm = SuperChoi::from_action(dims, |e| {
            // conjugate the OUTPUT of e by u: Choi transforms as (I (x) u) J (I (x) u)^dag
            let lift = DMatrix::identity(2, 2).kronecker(&u);
            MapChoi::new(&lift * e.matrix() * lift.adjoint(), 2, 2)
        })
        .unwrap();
        let e = random_channel(2, 2, 2, 51).unwrap();
        let out = sm.apply_to(&e).unwrap();
        let lift = DMatrix::identity(2, 2).kronecker(&u);
        let want = &lift * e.matrix() * lift.adjoint();
        assert!((out.matrix() - want).norm() < 1e-10);
        assert!(sm.superchannel_report().unwrap().is_superchannel(1e-9));
    }

    #[test]
    fn kraus_identity_check_for_singlet_state() {
        let s = singlet_state("a", "b");
        assert!((s.trace().re - 1.0).abs() < 1e-15);
        assert!(s.is_psd().unwrap());
        // maximally entangled: both marginals uniform
        let ma = s.partial_trace(&["b"]).unwrap();
        assert!(ma.frobenius_distance(&maximally_mixed("a", 2)).unwrap() < 1e-15);
        // antisymmetric: swapping the two qubits flips the sign of the vector,
        // so the density operator is swap-invariant
        let swapped = s.permute_factors(&["b", "a"]).unwrap();
        assert!((swapped.matrix() - s.matrix()).norm() < 1e-15);
        let _ = choi_from_kraus(&[DMatrix::<Complex64>::identity(2, 2)]).unwrap();
    }
}
