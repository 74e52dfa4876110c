//! Circuit realizations of superchannels: every supermap satisfying the
//! structural conditions factors into a pre-processing channel
//! B0 -> (A0, E0), a memory factor E0, and a post-processing channel
//! (A1, E0) -> B1. Instruments additionally split the post-processing into
//! outcome branches that sum to a channel.
//!
//! The factorization works by purifying the relevant marginals and relating
//! the purifications by an isometry on the purifying factors.

use crate::choi::{apply_on, random_channel, relate_purifications, MapChoi, OUT_LABEL};
use crate::supermap::{SuperChoi, SupermapDims, A0, A1, B0, B1};
use crate::tensor::{phi_plus, phi_plus_vec, purify, FactoredMatrix, PureVector, RANK_CUTOFF};
use crate::{Error, Result};

const E0: &str = "E0";
const A1T: &str = "A1t";
const B0T: &str = "B0t";
const X1: &str = "X1";

/// A superchannel or super-instrument in circuit form.
#[derive(Debug, Clone)]
pub struct CombRealization {
    /// Pre-processing channel B0 -> (A0, E0), output merged with A0 slower.
    pub pre: MapChoi,
    /// Post-processing branches (A1, E0) -> B1, input merged with A1 slower.
    /// A plain superchannel has a single branch; instrument branches sum to
    /// a channel.
    pub posts: Vec<MapChoi>,
    pub e0_dim: usize,
    pub dims: SupermapDims,
}

impl CombRealization {
    /// Rebuilds the supermap Choi operator of branch `x` by feeding halves
    /// of maximally entangled operators through the two processings.
    pub fn recompose_branch(&self, x: usize) -> Result<SuperChoi> {
        let post = self.posts.get(x).ok_or(Error::IndexOutOfRange {
            index: x,
            len: self.posts.len(),
        })?;
        recompose_pair(&self.pre, post, self.dims)
    }

    /// Rebuilds the total supermap (the sum over branches).
    pub fn recompose_total(&self) -> Result<SuperChoi> {
        let mut sum = self.posts[0].clone();
        for p in &self.posts[1..] {
            sum = sum.try_add(p)?;
        }
        recompose_pair(&self.pre, &sum, self.dims)
    }

    /// Checks that the stored channels really form a comb: coherent
    /// dimensions, a trace-preserving pre-processing, trace-non-increasing
    /// branches, and branches summing to a trace-preserving channel.
    pub fn validate(&self, tol: f64) -> Result<()> {
        let d = &self.dims;
        if self.pre.d_in() != d.b0 || self.pre.d_out() != d.a0 * self.e0_dim {
            return Err(Error::InvalidComb(format!(
                "pre-processing is {} -> {}, expected {} -> {}",
                self.pre.d_in(),
                self.pre.d_out(),
                d.b0,
                d.a0 * self.e0_dim
            )));
        }
        if self.posts.is_empty() {
            return Err(Error::InvalidComb("no post-processing branches".to_string()));
        }
        for (x, p) in self.posts.iter().enumerate() {
            if p.d_in() != d.a1 * self.e0_dim || p.d_out() != d.b1 {
                return Err(Error::InvalidComb(format!(
                    "branch {x} is {} -> {}, expected {} -> {}",
                    p.d_in(),
                    p.d_out(),
                    d.a1 * self.e0_dim,
                    d.b1
                )));
            }
        }
        let pre_cls = self.pre.classify()?;
        if !pre_cls.cp || pre_cls.marginal_deviation > tol {
            return Err(Error::InvalidComb(format!(
                "pre-processing is not a channel (min eigenvalue {:.3e}, marginal deviation {:.3e})",
                pre_cls.min_eigenvalue, pre_cls.marginal_deviation
            )));
        }
        let mut sum = self.posts[0].clone();
        for (x, p) in self.posts.iter().enumerate() {
            let cls = p.classify()?;
            if !cls.cp || cls.marginal_excess > tol {
                return Err(Error::InvalidComb(format!(
                    "branch {x} is not trace-non-increasing (min eigenvalue {:.3e}, excess {:.3e})",
                    cls.min_eigenvalue, cls.marginal_excess
                )));
            }
            if x > 0 {
                sum = sum.try_add(p)?;
            }
        }
        let sum_cls = sum.classify()?;
        if sum_cls.marginal_deviation > tol {
            return Err(Error::InvalidComb(format!(
                "branches sum to marginal deviation {:.3e}",
                sum_cls.marginal_deviation
            )));
        }
        Ok(())
    }
}

/// Feeds entangled-operator halves through `pre` and `post` to produce the
/// Choi operator of the realized supermap.
pub fn recompose_pair(pre: &MapChoi, post: &MapChoi, dims: SupermapDims) -> Result<SuperChoi> {
    if pre.d_in() != dims.b0 || pre.d_out() % dims.a0 != 0 {
        return Err(Error::DimensionMismatch {
            expected: dims.b0,
            got: pre.d_in(),
        });
    }
    let e0 = pre.d_out() / dims.a0;
    if post.d_in() != dims.a1 * e0 || post.d_out() != dims.b1 {
        return Err(Error::DimensionMismatch {
            expected: dims.a1 * e0,
            got: post.d_in(),
        });
    }
    let state = phi_plus(B0, B0T, dims.b0).kron(&phi_plus(A1, A1T, dims.a1))?;
    let s1 = apply_on(&state, pre, &[B0T], &[(A0, dims.a0), (E0, e0)])?;
    let s2 = apply_on(&s1, post, &[A1T, E0], &[(B1, dims.b1)])?;
    SuperChoi::from_factored(&s2)
}

/// Purifies the (A0, B0) marginal into the pre-processing channel and the
/// shared purification vector (factors A0, B0, E0).
fn pre_processing(total: &SuperChoi) -> Result<(MapChoi, PureVector, usize)> {
    let dims = total.dims();
    let half = total.a0b0_marginal().scaled(1.0 / dims.a1 as f64);
    let psi = purify(&half, E0, RANK_CUTOFF)?; // (A0, B0, E0)
    let e0 = psi.factor_dim(E0)?;
    let pre_fm = psi.outer().permute_factors(&[B0, A0, E0])?;
    let pre = MapChoi::from_grouped(&pre_fm, 1)?;
    Ok((pre, psi, e0))
}

/// Shared purification of the (A, B0) marginal: the pre-processing vector
/// tensored with an entangled pair on (A1, A1t); purifier order (A1t, E0).
fn shared_vector(psi: &PureVector, a1: usize) -> Result<PureVector> {
    psi.kron(&phi_plus_vec(A1, A1T, a1))?
        .permute_factors(&[A0, A1, B0, A1T, E0])
}

/// Splits a superchannel into pre- and post-processing around a minimal
/// memory factor. Fails with the condition residuals when the input is not
/// a superchannel at tolerance `tol`.
pub fn decompose_superchannel(theta: &SuperChoi, tol: f64) -> Result<CombRealization> {
    let rep = theta.superchannel_report()?;
    if !rep.is_superchannel(tol) {
        return Err(Error::NotSuperchannel {
            psd: rep.psd_residual,
            marginal: rep.marginal_residual,
            identity: rep.identity_residual,
        });
    }
    let dims = theta.dims();
    let (pre, psi, e0) = pre_processing(theta)?;
    let psi1 = shared_vector(&psi, dims.a1)?;
    let chi = purify(theta.factored(), "G0", RANK_CUTOFF)?; // (A0, A1, B0, B1, G0)
    let g0 = chi.factor_dim("G0")?;
    let needed = (dims.a1 * e0).div_ceil(dims.b1);
    let chi = if g0 < needed {
        chi.pad_factor("G0", needed)?
    } else {
        chi
    };
    let w = relate_purifications(&psi1, &chi, &[A0, A1, B0])?;
    let g0 = w.d_out() / dims.b1;
    let post_fm = w
        .factored()
        .split_factor(OUT_LABEL, &[(B1, dims.b1), ("G0", g0)])?
        .partial_trace(&["G0"])?;
    let post = MapChoi::from_grouped(&post_fm, 1)?;
    Ok(CombRealization {
        pre,
        posts: vec![post],
        e0_dim: e0,
        dims,
    })
}

/// Splits a super-instrument (positive branches summing to a superchannel)
/// into one shared pre-processing and per-outcome post-processing branches.
pub fn decompose_super_instrument(branches: &[SuperChoi], tol: f64) -> Result<CombRealization> {
    let first = branches
        .first()
        .ok_or_else(|| Error::ShapeMismatch("no branches given".to_string()))?;
    let dims = first.dims();
    let mut total = first.clone();
    for b in &branches[1..] {
        total = total.try_add(b)?;
    }
    for b in branches {
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
    let x_count = branches.len();
    let (pre, psi, e0) = pre_processing(&total)?;
    let psi1 = shared_vector(&psi, dims.a1)?;

    // flagged operator sum_x |x><x| (x) J_x, purified over (B1, X1, F0)
    let mut flagged: Option<FactoredMatrix> = None;
    for (x, b) in branches.iter().enumerate() {
        let mut unit = nalgebra::DMatrix::<num_complex::Complex64>::zeros(x_count, x_count);
        unit[(x, x)] = num_complex::Complex64::new(1.0, 0.0);
        let term = FactoredMatrix::new(unit, &[(X1, x_count)])?.kron(b.factored())?;
        flagged = Some(match flagged {
            None => term,
            Some(acc) => acc.try_add(&term)?,
        });
    }
    let flagged = flagged.expect("nonempty branches");
    let chi = purify(&flagged, "F0", RANK_CUTOFF)?
        .permute_factors(&[A0, A1, B0, B1, X1, "F0"])?;
    let f0 = chi.factor_dim("F0")?;
    let needed = (dims.a1 * e0).div_ceil(dims.b1 * x_count);
    let chi = if f0 < needed {
        chi.pad_factor("F0", needed)?
    } else {
        chi
    };
    let w = relate_purifications(&psi1, &chi, &[A0, A1, B0])?;
    let f0 = w.d_out() / (dims.b1 * x_count);
    let traced = w
        .factored()
        .split_factor(OUT_LABEL, &[(B1, dims.b1), (X1, x_count), ("F0", f0)])?
        .partial_trace(&["F0"])?; // (in, B1, X1)
    let posts = (0..x_count)
        .map(|x| {
            let fm = traced.compress_factor(X1, x)?;
            MapChoi::from_grouped(&fm, 1)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CombRealization {
        pre,
        posts,
        e0_dim: e0,
        dims,
    })
}

/// Seeded random superchannel built as a comb with memory dimension `e0`.
pub fn random_superchannel(dims: SupermapDims, e0: usize, seed: u64) -> Result<SuperChoi> {
    let (pre, post) = random_comb_channels(dims, e0, seed)?;
    recompose_pair(&pre, &post, dims)
}

/// Seeded random super-instrument with the given number of outcomes: one
/// random comb whose post-processing carries an outcome flag that is then
/// read out.
pub fn random_super_instrument(
    dims: SupermapDims,
    e0: usize,
    outcomes: usize,
    seed: u64,
) -> Result<Vec<SuperChoi>> {
    if outcomes == 0 {
        return Err(Error::ShapeMismatch("need at least one outcome".to_string()));
    }
    let (pre, _) = random_comb_channels(dims, e0, seed)?;
    let d_in = dims.a1 * e0;
    let d_out = dims.b1 * outcomes;
    let rank = required_rank(d_in, d_out);
    let flagged_post = random_channel(d_in, d_out, rank, seed.wrapping_add(0x5bd1e995))?;
    let split = flagged_post
        .factored()
        .split_factor(OUT_LABEL, &[(B1, dims.b1), (X1, outcomes)])?;
    (0..outcomes)
        .map(|x| {
            let fm = split.compress_factor(X1, x)?;
            let post_x = MapChoi::from_grouped(&fm, 1)?;
            recompose_pair(&pre, &post_x, dims)
        })
        .collect()
}

fn required_rank(d_in: usize, d_out: usize) -> usize {
    2.max(d_in.div_ceil(d_out))
}

fn random_comb_channels(
    dims: SupermapDims,
    e0: usize,
    seed: u64,
) -> Result<(MapChoi, MapChoi)> {
    if e0 == 0 {
        return Err(Error::ShapeMismatch("memory dimension must be positive".to_string()));
    }
    let pre_out = dims.a0 * e0;
    let pre = random_channel(dims.b0, pre_out, required_rank(dims.b0, pre_out), seed)?;
    let post_in = dims.a1 * e0;
    let post = random_channel(
        post_in,
        dims.b1,
        required_rank(post_in, dims.b1),
        seed.wrapping_add(0x9e3779b9),
    )?;
    Ok((pre, post))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::supermap::{
        discard_and_reprepare, identity_supermap, singlet_counterexample,
    };

    fn qubit_dims() -> SupermapDims {
        SupermapDims::new(2, 2, 2, 2).unwrap()
    }

    #[test]
    fn identity_superchannel_decomposes_with_trivial_memory() {
        let sc = identity_supermap(qubit_dims()).unwrap();
        let comb = decompose_superchannel(&sc, 1e-9).unwrap();
        assert_eq!(comb.e0_dim, 1);
        comb.validate(1e-9).unwrap();
        let back = comb.recompose_total().unwrap();
        assert!(
            back.factored().frobenius_distance(sc.factored()).unwrap() < 1e-10,
            "{}",
            back.factored().frobenius_distance(sc.factored()).unwrap()
        );
    }

    #[test]
    fn discard_and_reprepare_round_trips() {
        let sc = discard_and_reprepare(SupermapDims::new(2, 3, 2, 2).unwrap()).unwrap();
        let comb = decompose_superchannel(&sc, 1e-9).unwrap();
        comb.validate(1e-8).unwrap();
        let back = comb.recompose_total().unwrap();
        assert!(back.factored().frobenius_distance(sc.factored()).unwrap() < 1e-9);
    }

    #[test]
    fn random_superchannels_round_trip() {
        for (e0, seed) in [(1usize, 3u64), (2, 4), (2, 5)] {
            let sc = random_superchannel(qubit_dims(), e0, seed).unwrap();
            let rep = sc.superchannel_report().unwrap();
            assert!(rep.is_superchannel(1e-9), "seed {seed}: {rep:?}");
            let comb = decompose_superchannel(&sc, 1e-8).unwrap();
            comb.validate(1e-8).unwrap();
            let back = comb.recompose_total().unwrap();
            let dist = back.factored().frobenius_distance(sc.factored()).unwrap();
            assert!(dist < 1e-8, "seed {seed}: {dist}");
        }
    }

    #[test]
    fn decomposition_memory_is_stable_under_roundtrip() {
        let sc = random_superchannel(qubit_dims(), 2, 11).unwrap();
        let comb = decompose_superchannel(&sc, 1e-8).unwrap();
        let again = decompose_superchannel(&comb.recompose_total().unwrap(), 1e-8).unwrap();
        assert_eq!(comb.e0_dim, again.e0_dim);
        assert!(comb.e0_dim <= 2 * 2); // bounded by rank of the purified marginal
    }

    #[test]
    fn decompose_rejects_the_counterexample() {
        let sm = singlet_counterexample();
        assert!(matches!(
            decompose_superchannel(&sm, 1e-6),
            Err(Error::NotSuperchannel { .. })
        ));
    }

    #[test]
    fn decomposed_channels_are_channels() {
        let sc = random_superchannel(qubit_dims(), 2, 21).unwrap();
        let comb = decompose_superchannel(&sc, 1e-8).unwrap();
        let pre_cls = comb.pre.classify().unwrap();
        assert!(pre_cls.cp && pre_cls.tp, "{pre_cls:?}");
        let post_cls = comb.posts[0].classify().unwrap();
        assert!(post_cls.cp && post_cls.tp, "{post_cls:?}");
    }

    #[test]
    fn instrument_branches_round_trip_and_sum_to_channel() {
        let branches = random_super_instrument(qubit_dims(), 2, 2, 31).unwrap();
        assert_eq!(branches.len(), 2);
        let comb = decompose_super_instrument(&branches, 1e-8).unwrap();
        comb.validate(1e-7).unwrap();
        for (x, b) in branches.iter().enumerate() {
            let back = comb.recompose_branch(x).unwrap();
            let dist = back.factored().frobenius_distance(b.factored()).unwrap();
            assert!(dist < 1e-7, "branch {x}: {dist}");
            let cls = comb.posts[x].classify().unwrap();
            assert!(cls.cp && cls.tni, "branch {x}: {cls:?}");
        }
        let mut post_sum = comb.posts[0].clone();
        for p in &comb.posts[1..] {
            post_sum = post_sum.try_add(p).unwrap();
        }
        let sum_cls = post_sum.classify().unwrap();
        assert!(sum_cls.cp && sum_cls.tp, "{sum_cls:?}");
    }

    #[test]
    fn single_branch_instrument_matches_superchannel_decomposition() {
        let sc = random_superchannel(qubit_dims(), 1, 41).unwrap();
        let as_instrument = decompose_super_instrument(std::slice::from_ref(&sc), 1e-8).unwrap();
        let back = as_instrument.recompose_branch(0).unwrap();
        assert!(back.factored().frobenius_distance(sc.factored()).unwrap() < 1e-8);
    }

    #[test]
    fn instrument_decomposition_rejects_branches_whose_sum_is_not_a_superchannel() {
        let sm = singlet_counterexample();
        let half = sm.scaled(0.5);
        assert!(matches!(
            decompose_super_instrument(&[half.clone(), half], 1e-6),
            Err(Error::BranchesDoNotSumToSuperchannel { .. })
        ));
    }

    #[test]
    fn validate_flags_tampered_posts() {
        let sc = random_superchannel(qubit_dims(), 1, 51).unwrap();
        let mut comb = decompose_superchannel(&sc, 1e-8).unwrap();
        comb.posts[0] = comb.posts[0].scaled(1.5);
        assert!(matches!(comb.validate(1e-6), Err(Error::InvalidComb(_))));
    }

    #[test]
    fn recompose_is_linear_in_the_post_processing() {
        let dims = qubit_dims();
        let (pre, post) = random_comb_channels(dims, 2, 61).unwrap();
        let whole = recompose_pair(&pre, &post, dims).unwrap();
        let half = recompose_pair(&pre, &post.scaled(0.5), dims).unwrap();
        let sum = half.try_add(&half).unwrap();
        assert!(whole.factored().frobenius_distance(sum.factored()).unwrap() < 1e-12);
    }

    #[test]
    fn asymmetric_dimensions_round_trip() {
        let dims = SupermapDims::new(2, 3, 3, 2).unwrap();
        let sc = random_superchannel(dims, 2, 71).unwrap();
        let rep = sc.superchannel_report().unwrap();
        assert!(rep.is_superchannel(1e-9), "{rep:?}");
        let comb = decompose_superchannel(&sc, 1e-8).unwrap();
        let back = comb.recompose_total().unwrap();
        assert!(back.factored().frobenius_distance(sc.factored()).unwrap() < 1e-7);
    }
}
