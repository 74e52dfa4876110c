//! Certification of supermaps: does a given Choi operator describe a
//! transformation that remains lawful when the input channel is correlated
//! with a reference system?
//!
//! The central quantity is
//!
//! ```text
//!   alpha = max Tr[J^{A B0} (J_N (x) rho)^T]
//! ```
//!
//! over channels N: A0 -> A1 acting jointly with a side state rho on B0,
//! where the maximization relaxes exactly to a semidefinite program over
//! operators M >= 0 with Tr M = |A0| and M^{A0 B0} = u^{A0} (x) M^{B0}.
//! Supermaps that send channels to channels in full generality have
//! alpha = 1; a strictly larger value certifies that no completion to such
//! a supermap exists, and the optimizer is an explicit witness strategy.
//! The equality multipliers of the same program hand back the completing
//! partner whenever alpha <= 1.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::choi::{random_channel, MapChoi, IN_LABEL, OUT_LABEL};
use crate::sdp::{hermitian_basis, SdpProblem, SdpStatus};
use crate::supermap::{
    discard_and_reprepare, SuperChoi, SuperchannelReport, SupermapDims, A0, A1, B0, B1,
};
use crate::tensor::{maximally_mixed, FactoredMatrix};
use crate::{Error, Result};

/// Default verdict tolerance: how far alpha may exceed 1 before the supermap
/// counts as not completely lawful.
pub const DEFAULT_TOL: f64 = 1e-6;
/// Default interior-point convergence tolerance.
pub const DEFAULT_SDP_TOL: f64 = 1e-8;
/// Below this alpha the supermap is essentially zero and the completion
/// falls back to a fixed canonical superchannel.
pub const DEGENERATE_ALPHA: f64 = 1e-9;

/// Optimal value and certificates of the correlated-strategy program.
#[derive(Debug, Clone)]
pub struct AlphaCertificate {
    pub alpha: f64,
    /// Multiplier of the trace constraint; |A0| * dual_trace equals alpha at
    /// the optimum, a useful cross-check on solver quality.
    pub dual_trace: f64,
    /// Optimal strategy operator M on (A0, A1, B0): the witness achieving
    /// alpha.
    pub witness: FactoredMatrix,
    /// Transposed equality-multiplier operator on (A0, B0) feeding the
    /// completion construction; unnormalized.
    pub sigma: FactoredMatrix,
    pub iterations: usize,
}

/// Solves the strategy relaxation for a supermap Choi operator.
pub fn complete_cptni_value(theta: &SuperChoi, sdp_tol: f64) -> Result<AlphaCertificate> {
    let dims = theta.dims();
    let (a0, a1, b0) = (dims.a0, dims.a1, dims.b0);
    let n = a0 * a1 * b0;
    let j_ab0 = theta.ab0_marginal();
    let c = j_ab0.transpose_full();

    let mut constraints: Vec<DMatrix<Complex64>> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    constraints.push(DMatrix::identity(n, n));
    rhs.push(a0 as f64);
    let basis = hermitian_basis(a0 * b0);
    for h in &basis {
        let h_fm = FactoredMatrix::new(h.clone(), &[(A0, a0), (B0, b0)])?;
        let lifted = h_fm
            .kron(&FactoredMatrix::identity(&[(A1, a1)])?)?
            .permute_factors(&[A0, A1, B0])?;
        let h_b0 = h_fm.partial_trace(&[A0])?.scaled(1.0 / a0 as f64);
        let second = FactoredMatrix::identity(&[(A0, a0), (A1, a1)])?.kron(&h_b0)?;
        constraints.push(lifted.try_sub(&second)?.into_matrix());
        rhs.push(0.0);
    }

    let problem = SdpProblem::new(c.into_matrix(), constraints, rhs)?;
    let sol = problem.solve(sdp_tol, 200)?;
    if sol.status != SdpStatus::Optimal {
        return Err(Error::SolverFailure(format!(
            "strategy relaxation ended with status {:?} after {} iterations",
            sol.status, sol.iterations
        )));
    }
    let mut s = DMatrix::<Complex64>::zeros(a0 * b0, a0 * b0);
    for (j, h) in basis.iter().enumerate() {
        let y = sol.y[1 + j];
        if y != 0.0 {
            s += h * Complex64::new(y, 0.0);
        }
    }
    let sigma = FactoredMatrix::new(s.transpose(), &[(A0, a0), (B0, b0)])?;
    let witness = FactoredMatrix::new(sol.x.clone(), &[(A0, a0), (A1, a1), (B0, b0)])?;
    Ok(AlphaCertificate {
        alpha: sol.primal_value,
        dual_trace: sol.y[0],
        witness,
        sigma,
        iterations: sol.iterations,
    })
}

/// A partner supermap restoring the superchannel conditions.
#[derive(Debug, Clone)]
pub struct Completion {
    pub alpha: f64,
    /// The added supermap; zero when the input already is a superchannel.
    pub partner: SuperChoi,
    /// Input plus partner.
    pub total: SuperChoi,
    /// Condition residuals of the total.
    pub report: SuperchannelReport,
}

/// Completes a positive supermap to a superchannel by adding a partner,
/// provided the strategy value allows it. The partner is reconstructed in
/// closed form from the equality multipliers of the strategy program: its
/// (A0, B0) block is |A1| (u (x) I + sigma - u (x) sigma^{B0}) with sigma
/// the rescaled multiplier operator, and the remaining factors are uniform.
pub fn complete_to_superchannel(theta: &SuperChoi, sdp_tol: f64, tol: f64) -> Result<Completion> {
    if !theta.is_cpp()? {
        return Err(Error::NotCpp {
            min_eigenvalue: theta.factored().min_eigenvalue()?,
        });
    }
    let cert = complete_cptni_value(theta, sdp_tol)?;
    if cert.alpha > 1.0 + tol {
        return Err(Error::NotCompletelyCptni { alpha: cert.alpha });
    }
    let dims = theta.dims();
    if cert.alpha <= DEGENERATE_ALPHA {
        // the input is numerically zero; any superchannel completes it
        let total = discard_and_reprepare(dims)?;
        let partner = total.try_sub(theta)?;
        let report = total.superchannel_report()?;
        return Ok(Completion {
            alpha: cert.alpha,
            partner,
            total,
            report,
        });
    }
    let r = cert.dual_trace;
    if r <= 1e-12 {
        return Err(Error::NumericalFailure(format!(
            "trace multiplier {r:.3e} is too small to rescale the completion"
        )));
    }
    let sigma = cert.sigma.scaled(1.0 / (r * dims.a0 as f64));
    let u_a0 = maximally_mixed(A0, dims.a0);
    let sigma_b0 = sigma.partial_trace(&[A0])?;
    let phi_block = u_a0
        .kron(&FactoredMatrix::identity(&[(B0, dims.b0)])?)?
        .try_add(&sigma)?
        .try_sub(&u_a0.kron(&sigma_b0)?)?
        .scaled(dims.a1 as f64); // J_Phi on (A0, B0)
    let partner_ab0 = phi_block
        .kron(&maximally_mixed(A1, dims.a1))?
        .permute_factors(&[A0, A1, B0])?
        .try_sub(&theta.ab0_marginal())?;
    let partner_fm = partner_ab0.kron(&maximally_mixed(B1, dims.b1))?;
    let partner = SuperChoi::from_factored(&partner_fm)?;
    let total = theta.try_add(&partner)?;
    let report = total.superchannel_report()?;
    Ok(Completion {
        alpha: cert.alpha,
        partner,
        total,
        report,
    })
}

/// Options for the alternating product-strategy search.
#[derive(Debug, Clone, Copy)]
pub struct SeesawOptions {
    pub restarts: usize,
    pub rounds: usize,
    /// Convergence threshold on the value between rounds.
    pub tol: f64,
    /// Interior-point tolerance for the channel half-steps.
    pub sdp_tol: f64,
    pub seed: u64,
}

impl Default for SeesawOptions {
    fn default() -> Self {
        Self {
            restarts: 32,
            rounds: 200,
            tol: 1e-9,
            sdp_tol: 1e-9,
            seed: 0,
        }
    }
}

/// Best product strategy found by alternating maximization.
#[derive(Debug, Clone)]
pub struct SeesawOutcome {
    pub value: f64,
    pub channel: MapChoi,
    /// Optimal side state on B0.
    pub state: FactoredMatrix,
    pub rounds_used: usize,
}

/// Lower-bounds the supremum of the correlated value over product
/// strategies (channel, state) by alternating exact half-step
/// maximizations from several seeded random starts. The returned channel is
/// exactly trace preserving, so the value is a true attainable bound.
pub fn product_value_lower_bound(
    theta: &SuperChoi,
    opts: &SeesawOptions,
) -> Result<SeesawOutcome> {
    let dims = theta.dims();
    let results: Vec<Result<SeesawOutcome>> = (0..opts.restarts.max(1))
        .into_par_iter()
        .map(|idx| {
            let seed = opts
                .seed
                .wrapping_add(0x9e3779b9u64.wrapping_mul(idx as u64 + 1));
            seesaw_single(theta, dims, seed, opts)
        })
        .collect();
    let mut best: Option<SeesawOutcome> = None;
    for r in results {
        let out = r?;
        let replace = match &best {
            None => true,
            Some(b) => out.value > b.value,
        };
        if replace {
            best = Some(out);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn seesaw_single(
    theta: &SuperChoi,
    dims: SupermapDims,
    seed: u64,
    opts: &SeesawOptions,
) -> Result<SeesawOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rho = random_pure_state(dims.b0, &mut rng)?;
    let rank = 2.max(dims.a0.div_ceil(dims.a1));
    let mut channel = random_channel(dims.a0, dims.a1, rank, rng.gen())?;
    let mut value = theta.pairing(&channel, &rho)?;
    let mut rounds_used = opts.rounds;
    for round in 0..opts.rounds {
        channel = best_channel_for_state(theta, dims, &rho, opts.sdp_tol)?;
        rho = best_state_for_channel(theta, &channel)?;
        let new_value = theta.pairing(&channel, &rho)?;
        if (new_value - value).abs() <= opts.tol * (1.0 + new_value.abs()) {
            value = new_value;
            rounds_used = round + 1;
            break;
        }
        value = new_value;
    }
    Ok(SeesawOutcome {
        value,
        channel,
        state: rho,
        rounds_used,
    })
}

fn random_pure_state(d: usize, rng: &mut ChaCha8Rng) -> Result<FactoredMatrix> {
    let mut v = DVector::<Complex64>::zeros(d);
    loop {
        for i in 0..d {
            v[i] = Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
        }
        let n = v.norm();
        if n > 1e-6 {
            v /= Complex64::new(n, 0.0);
            break;
        }
    }
    let m = DMatrix::from_fn(d, d, |r, c| v[r] * v[c].conj());
    FactoredMatrix::new(m, &[(B0, d)])
}

/// Exact half step: for fixed side state, the best channel maximizes a
/// linear functional over the trace-preserving positive Choi cone section.
fn best_channel_for_state(
    theta: &SuperChoi,
    dims: SupermapDims,
    rho: &FactoredMatrix,
    sdp_tol: f64,
) -> Result<MapChoi> {
    let rho_t = FactoredMatrix::new(rho.matrix().transpose(), &[(B0, dims.b0)])?;
    let lhs = FactoredMatrix::identity(&[(A0, dims.a0), (A1, dims.a1)])?.kron(&rho_t)?;
    let f = lhs.matmul(&theta.ab0_marginal())?.partial_trace(&[B0])?; // (A0, A1)
    let c = f.transpose_full();
    let mut constraints = Vec::new();
    let mut rhs = Vec::new();
    for h in hermitian_basis(dims.a0) {
        let tr_h = h.diagonal().sum().re;
        let lifted = FactoredMatrix::new(h, &[(A0, dims.a0)])?
            .kron(&FactoredMatrix::identity(&[(A1, dims.a1)])?)?;
        constraints.push(lifted.into_matrix());
        rhs.push(tr_h);
    }
    let sol = SdpProblem::new(c.into_matrix(), constraints, rhs)?.solve(sdp_tol, 200)?;
    if sol.status != SdpStatus::Optimal {
        return Err(Error::SolverFailure(format!(
            "channel half-step ended with status {:?}",
            sol.status
        )));
    }
    // snap to an exactly trace-preserving channel so the reported value is
    // attained by a genuine strategy
    MapChoi::new(sol.x, dims.a0, dims.a1)?.renormalize_trace_preserving()
}

/// Exact half step: for fixed channel, the best state is the top eigenvector
/// of the effective observable on B0.
fn best_state_for_channel(theta: &SuperChoi, channel: &MapChoi) -> Result<FactoredMatrix> {
    let dims = theta.dims();
    let jn = channel
        .factored()
        .rename_factors(&[(IN_LABEL, A0), (OUT_LABEL, A1)])?;
    let lhs = jn
        .transpose_full()
        .kron(&FactoredMatrix::identity(&[(B0, dims.b0)])?)?;
    let g = lhs
        .matmul(&theta.ab0_marginal())?
        .partial_trace(&[A0, A1])?
        .transpose_full();
    let (_, vecs) = g.hermitian_eigen()?;
    let top = vecs.column(vecs.ncols() - 1);
    let m = DMatrix::from_fn(dims.b0, dims.b0, |r, c| top[r] * top[c].conj());
    FactoredMatrix::new(m, &[(B0, dims.b0)])
}

/// An outcome-resolved supermap: positive branches summing to a
/// superchannel. Constructing one validates the structure, so a value of
/// this type always describes a physical measurement-like process.
#[derive(Debug, Clone)]
pub struct SuperInstrument {
    branches: Vec<SuperChoi>,
    total: SuperChoi,
}

impl SuperInstrument {
    pub fn new(branches: Vec<SuperChoi>, tol: f64) -> Result<Self> {
        let first = branches
            .first()
            .ok_or_else(|| Error::ShapeMismatch("no branches given".to_string()))?;
        let mut total = first.clone();
        for b in &branches[1..] {
            total = total.try_add(b)?;
        }
        for b in &branches {
            if !b.is_cpp()? {
                return Err(Error::NotCpp {
                    min_eigenvalue: b.factored().min_eigenvalue()?,
                });
            }
        }
        let rep = total.superchannel_report()?;
        if !rep.is_superchannel(tol) {
            return Err(Error::BranchesDoNotSumToSuperchannel {
                psd: rep.psd_residual,
                marginal: rep.marginal_residual,
                identity: rep.identity_residual,
            });
        }
        Ok(Self { branches, total })
    }

    pub fn branches(&self) -> &[SuperChoi] {
        &self.branches
    }

    pub fn total(&self) -> &SuperChoi {
        &self.total
    }

    pub fn dims(&self) -> SupermapDims {
        self.branches[0].dims()
    }

    /// Outcome distribution for a strategy (channel, side state). Inputs are
    /// checked for dimension only; feeding a non-channel simply produces
    /// numbers that need not form a distribution.
    pub fn outcome_statistics(
        &self,
        channel: &MapChoi,
        rho: &FactoredMatrix,
    ) -> Result<Vec<f64>> {
        self.branches
            .iter()
            .map(|b| b.pairing(channel, rho))
            .collect()
    }

    /// Splits into a shared pre-processing and per-outcome branches.
    pub fn decompose(&self, tol: f64) -> Result<crate::comb::CombRealization> {
        crate::comb::decompose_super_instrument(&self.branches, tol)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    /// The Choi operator is not positive: not a completely positive
    /// transformation of map spaces at all.
    NotCpp,
    /// Some product strategy already yields more than 1: the supermap can
    /// turn a trace-non-increasing input into a trace-increasing output.
    NotCptni,
    /// Every product strategy stays within 1, but correlated strategies
    /// exceed it: lawful in isolation, unlawful on shares of entangled
    /// systems, hence not completable to a superchannel.
    CptniOnly,
    /// The correlated value stays within 1: completable to a superchannel.
    CompletelyCptni,
}

#[derive(Debug, Clone)]
pub struct CertReport {
    pub verdict: Verdict,
    /// max(0, -lambda_min) of the supermap Choi operator.
    pub psd_residual: f64,
    /// Correlated-strategy value (when positivity holds).
    pub alpha: Option<f64>,
    /// Best product-strategy value found (when needed for the verdict).
    pub product_lower_bound: Option<f64>,
    /// Structural condition residuals, for context.
    pub superchannel: SuperchannelReport,
}

#[derive(Debug, Clone, Copy)]
pub struct CertifyOptions {
    pub tol: f64,
    pub sdp_tol: f64,
    pub seesaw: SeesawOptions,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            sdp_tol: DEFAULT_SDP_TOL,
            seesaw: SeesawOptions::default(),
        }
    }
}

/// Full classification of a supermap Choi operator.
pub fn certify(theta: &SuperChoi, opts: &CertifyOptions) -> Result<CertReport> {
    let superchannel = theta.superchannel_report()?;
    let psd_residual = superchannel.psd_residual;
    if !theta.is_cpp()? {
        return Ok(CertReport {
            verdict: Verdict::NotCpp,
            psd_residual,
            alpha: None,
            product_lower_bound: None,
            superchannel,
        });
    }
    let cert = complete_cptni_value(theta, opts.sdp_tol)?;
    if cert.alpha <= 1.0 + opts.tol {
        return Ok(CertReport {
            verdict: Verdict::CompletelyCptni,
            psd_residual,
            alpha: Some(cert.alpha),
            product_lower_bound: None,
            superchannel,
        });
    }
    let seesaw = product_value_lower_bound(theta, &opts.seesaw)?;
    let verdict = if seesaw.value > 1.0 + opts.tol {
        Verdict::NotCptni
    } else {
        Verdict::CptniOnly
    };
    Ok(CertReport {
        verdict,
        psd_residual,
        alpha: Some(cert.alpha),
        product_lower_bound: Some(seesaw.value),
        superchannel,
    })
}
