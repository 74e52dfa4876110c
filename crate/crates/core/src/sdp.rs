//! Semidefinite programming over complex Hermitian matrices.
//!
//! Solves the pair
//!
//! ```text
//!   maximize   <C, X>          minimize   b . y
//!   subject to <A_i, X> = b_i  subject to sum_i y_i A_i - C = Z
//!              X >= 0                     Z >= 0
//! ```
//!
//! with `<A, B> = Re tr(A B)` for Hermitian arguments, using a primal-dual
//! interior-point method with Nesterov-Todd scaling and a predictor-corrector
//! step. Redundant or contradictory equality constraints are detected up
//! front; multipliers for dropped rows are reported as zero.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use num_complex::Complex64;

use crate::{Error, Result};

/// Hermiticity tolerance for problem data, relative to the largest entry.
const DATA_HERM_RTOL: f64 = 1e-9;
/// Relative threshold under which a constraint row counts as dependent.
const DEPENDENCY_RTOL: f64 = 1e-9;
/// Tolerance for right-hand-side consistency of dependent rows.
const CONSISTENCY_ATOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIter,
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub x: DMatrix<Complex64>,
    /// Equality multipliers, index-aligned with the constraints passed in
    /// (zero for rows dropped as redundant).
    pub y: DVector<f64>,
    pub z: DMatrix<Complex64>,
    pub primal_value: f64,
    pub dual_value: f64,
    /// Complementarity gap tr(X Z) at the returned iterate.
    pub gap: f64,
    pub iterations: usize,
    pub status: SdpStatus,
}

#[derive(Debug, Clone)]
pub struct SdpProblem {
    n: usize,
    c: DMatrix<Complex64>,
    kept_a: Vec<DMatrix<Complex64>>,
    kept_b: DVector<f64>,
    kept_idx: Vec<usize>,
    m_orig: usize,
    inconsistent: bool,
}

fn herm_inner(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum()
}

fn symmetrize(m: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    (m + m.adjoint()) * Complex64::new(0.5, 0.0)
}

fn herm_eig(h: &DMatrix<Complex64>) -> (DVector<f64>, DMatrix<Complex64>) {
    let se = SymmetricEigen::new(symmetrize(h));
    (se.eigenvalues, se.eigenvectors)
}

fn check_hermitian(m: &DMatrix<Complex64>, what: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "{what} is {}x{}, expected square",
            m.nrows(),
            m.ncols()
        )));
    }
    let dev = (m - m.adjoint())
        .iter()
        .map(|v| v.norm())
        .fold(0.0_f64, f64::max);
    let scale = 1.0 + m.iter().map(|v| v.norm()).fold(0.0_f64, f64::max);
    if dev > DATA_HERM_RTOL * scale {
        return Err(Error::NotHermitian { deviation: dev });
    }
    Ok(())
}

fn chol_jitter(s: &DMatrix<Complex64>) -> Result<Cholesky<Complex64, Dyn>> {
    let n = s.nrows();
    let scale = s
        .diagonal()
        .iter()
        .map(|d| d.re.abs())
        .fold(0.0_f64, f64::max)
        .max(1e-300);
    let mut eps = 0.0_f64;
    for _ in 0..8 {
        let trial = if eps == 0.0 {
            s.clone()
        } else {
            s + DMatrix::<Complex64>::identity(n, n) * Complex64::new(eps * scale, 0.0)
        };
        if let Some(ch) = Cholesky::new(trial) {
            return Ok(ch);
        }
        eps = if eps == 0.0 { 1e-14 } else { eps * 100.0 };
        if eps > 1e-4 {
            break;
        }
    }
    Err(Error::SolverFailure(
        "iterate lost positive definiteness".to_string(),
    ))
}

fn chol_spd_real(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let n = m.nrows();
    let scale = m
        .diagonal()
        .iter()
        .map(|d| d.abs())
        .fold(0.0_f64, f64::max)
        .max(1e-300);
    let mut eps = 0.0_f64;
    for _ in 0..10 {
        let trial = if eps == 0.0 {
            m.clone()
        } else {
            m + DMatrix::<f64>::identity(n, n) * (eps * scale)
        };
        if let Some(ch) = Cholesky::new(trial) {
            return Ok(ch);
        }
        eps = if eps == 0.0 { 1e-13 } else { eps * 100.0 };
        if eps > 1e-2 {
            break;
        }
    }
    Err(Error::SolverFailure(
        "normal equations are numerically singular".to_string(),
    ))
}

/// Largest step alpha such that S + alpha dS stays positive semidefinite,
/// given the Cholesky factor of S. Returns +inf when every step is safe.
fn step_to_boundary(chol_s: &Cholesky<Complex64, Dyn>, ds: &DMatrix<Complex64>) -> f64 {
    let l = chol_s.l();
    let b = match l.solve_lower_triangular(ds) {
        Some(v) => v,
        None => return 0.0,
    };
    let t = match l.solve_lower_triangular(&b.adjoint()) {
        Some(v) => v.adjoint(),
        None => return 0.0,
    };
    let (vals, _) = herm_eig(&t);
    let lmin = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    if lmin < -1e-14 {
        1.0 / (-lmin)
    } else {
        f64::INFINITY
    }
}

impl SdpProblem {
    /// Validates Hermiticity of the objective and constraint matrices and
    /// prunes redundant rows. Contradictory rows mark the problem infeasible.
    pub fn new(
        c: DMatrix<Complex64>,
        constraints: Vec<DMatrix<Complex64>>,
        b: Vec<f64>,
    ) -> Result<Self> {
        check_hermitian(&c, "objective")?;
        let n = c.nrows();
        if constraints.len() != b.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} constraint matrices but {} right-hand sides",
                constraints.len(),
                b.len()
            )));
        }
        for (i, a) in constraints.iter().enumerate() {
            check_hermitian(a, &format!("constraint {i}"))?;
            if a.nrows() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: a.nrows(),
                });
            }
        }
        let c = symmetrize(&c);

        // Gram-Schmidt over vectorized rows; a row whose residual vanishes is
        // a linear combination of earlier kept rows, and its right-hand side
        // must match the same combination.
        let mut kept_a: Vec<DMatrix<Complex64>> = Vec::new();
        let mut kept_b: Vec<f64> = Vec::new();
        let mut kept_idx: Vec<usize> = Vec::new();
        let mut basis: Vec<(DMatrix<Complex64>, f64)> = Vec::new();
        let mut inconsistent = false;
        for (i, a) in constraints.iter().enumerate() {
            let a = symmetrize(a);
            let row_norm = a.norm();
            let mut r = a.clone();
            let mut beta = b[i];
            for _ in 0..2 {
                for (q, qb) in &basis {
                    let coeff = Complex64::new(herm_inner(q, &r), 0.0);
                    r -= q * coeff;
                    beta -= qb * coeff.re;
                }
            }
            let res = r.norm();
            if res > DEPENDENCY_RTOL * (1.0 + row_norm) {
                let inv = Complex64::new(1.0 / res, 0.0);
                basis.push((&r * inv, beta / res));
                kept_a.push(a);
                kept_b.push(b[i]);
                kept_idx.push(i);
            } else if beta.abs() > CONSISTENCY_ATOL * (1.0 + b[i].abs()) {
                inconsistent = true;
            }
        }
        Ok(Self {
            n,
            c,
            kept_a,
            kept_b: DVector::from_vec(kept_b),
            kept_idx,
            m_orig: constraints.len(),
            inconsistent,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn num_constraints(&self) -> usize {
        self.m_orig
    }

    pub fn num_kept_constraints(&self) -> usize {
        self.kept_a.len()
    }

    fn a_apply(&self, x: &DMatrix<Complex64>) -> DVector<f64> {
        DVector::from_iterator(
            self.kept_a.len(),
            self.kept_a.iter().map(|a| herm_inner(a, x)),
        )
    }

    fn a_star(&self, y: &DVector<f64>) -> DMatrix<Complex64> {
        let mut out = DMatrix::<Complex64>::zeros(self.n, self.n);
        for (a, &yi) in self.kept_a.iter().zip(y.iter()) {
            out += a * Complex64::new(yi, 0.0);
        }
        out
    }

    fn scatter_y(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut full = DVector::zeros(self.m_orig);
        for (slot, &idx) in self.kept_idx.iter().enumerate() {
            full[idx] = y[slot];
        }
        full
    }

    /// Initial primal iterate: scaled identity, honoring a plain trace
    /// constraint when one is present so the start is primal feasible for it.
    fn initial_x(&self) -> DMatrix<Complex64> {
        let n = self.n as f64;
        let mut scale = 1.0;
        for (a, &bi) in self.kept_a.iter().zip(self.kept_b.iter()) {
            let alpha = a.diagonal().sum().re / n;
            if alpha.abs() > 1e-12 {
                let dev = (a - DMatrix::<Complex64>::identity(self.n, self.n)
                    * Complex64::new(alpha, 0.0))
                .norm();
                if dev < 1e-12 * (1.0 + a.norm()) {
                    let s = bi / (alpha * n);
                    if s > 0.0 {
                        scale = s;
                        break;
                    }
                }
            }
        }
        DMatrix::<Complex64>::identity(self.n, self.n) * Complex64::new(scale.max(1e-6), 0.0)
    }

    pub fn solve(&self, tol: f64, max_iter: usize) -> Result<SdpSolution> {
        let n = self.n;
        let m = self.kept_a.len();
        if self.inconsistent {
            return Ok(SdpSolution {
                x: DMatrix::zeros(n, n),
                y: DVector::zeros(self.m_orig),
                z: DMatrix::zeros(n, n),
                primal_value: 0.0,
                dual_value: 0.0,
                gap: f64::INFINITY,
                iterations: 0,
                status: SdpStatus::Infeasible,
            });
        }
        let c_norm = self.c.norm();
        let b_norm = self.kept_b.norm();
        let mut x = self.initial_x();
        let mut z = DMatrix::<Complex64>::identity(n, n) * Complex64::new(1.0 + c_norm, 0.0);
        let mut y = DVector::<f64>::zeros(m);
        let mut status = SdpStatus::MaxIter;
        let mut iterations = max_iter;

        for iter in 0..max_iter {
            let pobj = herm_inner(&self.c, &x);
            let dobj = self.kept_b.dot(&y);
            let rp = &self.kept_b - self.a_apply(&x);
            let rd = symmetrize(&(self.a_star(&y) - &self.c - &z));
            let gap = herm_inner(&x, &z);
            let rel_p = rp.norm() / (1.0 + b_norm);
            let rel_d = rd.norm() / (1.0 + c_norm);
            let rel_g = gap.abs() / (1.0 + pobj.abs() + dobj.abs());
            if !pobj.is_finite() || !dobj.is_finite() || !gap.is_finite() {
                return Err(Error::SolverFailure(
                    "non-finite iterate encountered".to_string(),
                ));
            }
            if rel_p <= tol && rel_d <= tol && rel_g <= tol {
                status = SdpStatus::Optimal;
                iterations = iter;
                break;
            }
            if pobj > 1e10 * (1.0 + c_norm) && rel_p <= tol.sqrt() {
                status = SdpStatus::Unbounded;
                iterations = iter;
                break;
            }
            if y.norm() > 1e10 * (1.0 + b_norm) && rel_d <= tol.sqrt() {
                status = SdpStatus::Infeasible;
                iterations = iter;
                break;
            }

            let chol_x = chol_jitter(&x)?;
            let chol_z = chol_jitter(&z)?;
            let lx = chol_x.l();
            // W Z W = X with W = Lx (Lx^* Z Lx)^{-1/2} Lx^*
            let m0 = symmetrize(&(lx.adjoint() * &z * &lx));
            let (vals, vecs) = herm_eig(&m0);
            let lam_top = vals.iter().cloned().fold(0.0_f64, f64::max);
            let lam_floor = (lam_top * 1e-16).max(1e-300);
            let mut f = DMatrix::<Complex64>::zeros(n, n);
            for k in 0..n {
                let lam = vals[k].max(lam_floor);
                let w = Complex64::new(1.0 / lam.sqrt(), 0.0);
                let col = vecs.column(k);
                for r in 0..n {
                    for cc in 0..n {
                        f[(r, cc)] += col[r] * w * col[cc].conj();
                    }
                }
            }
            let w = symmetrize(&(&lx * f * lx.adjoint()));

            let wa: Vec<DMatrix<Complex64>> = self
                .kept_a
                .iter()
                .map(|a| symmetrize(&(&w * a * &w)))
                .collect();
            let mut normal = DMatrix::<f64>::zeros(m, m);
            for i in 0..m {
                for j in i..m {
                    let v = herm_inner(&self.kept_a[i], &wa[j]);
                    normal[(i, j)] = v;
                    normal[(j, i)] = v;
                }
            }
            let chol_m = if m > 0 {
                Some(chol_spd_real(&normal)?)
            } else {
                None
            };
            let z_inv = chol_z.inverse();
            let wrdw = symmetrize(&(&w * &rd * &w));
            let mu = gap / n as f64;

            let solve_dir = |rc: &DMatrix<Complex64>| -> (DVector<f64>, DMatrix<Complex64>, DMatrix<Complex64>) {
                let dy = if let Some(ch) = &chol_m {
                    let rhs = DVector::from_iterator(
                        m,
                        self.kept_a
                            .iter()
                            .enumerate()
                            .map(|(i, a)| herm_inner(a, rc) - herm_inner(a, &wrdw) - rp[i]),
                    );
                    ch.solve(&rhs)
                } else {
                    DVector::zeros(0)
                };
                let dz = symmetrize(&(self.a_star(&dy) + &rd));
                let dx = symmetrize(&(rc - &w * &dz * &w));
                (dy, dz, dx)
            };

            // predictor: pure Newton step toward complementarity zero
            let rc_aff = -&x;
            let (_dy_aff, dz_aff, dx_aff) = solve_dir(&rc_aff);
            let ap_aff = step_to_boundary(&chol_x, &dx_aff).min(1.0);
            let ad_aff = step_to_boundary(&chol_z, &dz_aff).min(1.0);
            let x_aff = &x + &dx_aff * Complex64::new(ap_aff, 0.0);
            let z_aff = &z + &dz_aff * Complex64::new(ad_aff, 0.0);
            let mu_aff = herm_inner(&x_aff, &z_aff) / n as f64;
            let sigma = if mu > 0.0 {
                ((mu_aff / mu).powi(3)).clamp(0.0, 1.0)
            } else {
                0.0
            };

            // corrector: recentered step reusing the same factorizations
            let rc = symmetrize(&(&z_inv * Complex64::new(sigma * mu, 0.0) - &x));
            let (dy, dz, dx) = solve_dir(&rc);
            let ap = (0.98 * step_to_boundary(&chol_x, &dx)).min(1.0);
            let ad = (0.98 * step_to_boundary(&chol_z, &dz)).min(1.0);
            if ap <= 1e-14 || ad <= 1e-14 {
                return Err(Error::SolverFailure(
                    "step length collapsed to zero".to_string(),
                ));
            }
            x = symmetrize(&(&x + &dx * Complex64::new(ap, 0.0)));
            z = symmetrize(&(&z + &dz * Complex64::new(ad, 0.0)));
            y += &dy * ad;
        }

        let primal_value = herm_inner(&self.c, &x);
        let dual_value = self.kept_b.dot(&y);
        let gap = herm_inner(&x, &z);
        Ok(SdpSolution {
            x,
            y: self.scatter_y(&y),
            z,
            primal_value,
            dual_value,
            gap,
            iterations,
            status,
        })
    }
}

/// Orthonormal basis of d x d Hermitian matrices under `<A, B> = tr(A B)`:
/// the diagonal units |k><k| in index order, then for each pair k < l
/// (row-major) the symmetric element (|k><l| + |l><k|)/sqrt(2) followed by
/// the antisymmetric element i(|k><l| - |l><k|)/sqrt(2).
pub fn hermitian_basis(d: usize) -> Vec<DMatrix<Complex64>> {
    let mut out = Vec::with_capacity(d * d);
    for k in 0..d {
        let mut m = DMatrix::<Complex64>::zeros(d, d);
        m[(k, k)] = Complex64::new(1.0, 0.0);
        out.push(m);
    }
    let s = 1.0 / 2.0_f64.sqrt();
    for k in 0..d {
        for l in (k + 1)..d {
            let mut m = DMatrix::<Complex64>::zeros(d, d);
            m[(k, l)] = Complex64::new(s, 0.0);
            m[(l, k)] = Complex64::new(s, 0.0);
            out.push(m);
            let mut m = DMatrix::<Complex64>::zeros(d, d);
            m[(k, l)] = Complex64::new(0.0, s);
            m[(l, k)] = Complex64::new(0.0, -s);
            out.push(m);
        }
    }
    out
}
