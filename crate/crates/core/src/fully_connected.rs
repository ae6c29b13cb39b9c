//! Fully-connected double-phase-shifter (DPS) precoding.
//!
//! With two phase shifters per connection an analog entry can take any value
//! of modulus at most 2, which turns the analog design into convex problems:
//! RF-only precoding for a fixed baseband is a complex LASSO in the dual, and
//! joint hybrid precoding is a truncated SVD.

use std::f64::consts::PI;

use nalgebra::DVector;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{frob_sq, hermitian_eigen, max_modulus, svd, unit_phase, CMat, CVec};

/// Largest modulus an entry realized by two unit phasors can reach.
pub const DPS_MAX_MODULUS: f64 = 2.0;

/// Weight of the l1 term in the dual LASSO.
pub const LASSO_WEIGHT: f64 = 2.0;

const SEMI_ORTHOGONAL_TOL: f64 = 1e-10;

/// `minimize 1/2 |A x - b|^2 + 2 |x|_1` with `A = S^{1/2} U^H`, where
/// `(D^H D)^{-1} = U S U^H`, `D = F_BB^T (x) I_{N_t}` and `b = A D^H f_opt`.
#[derive(Debug, Clone)]
pub struct LassoProblem {
    pub a: CMat,
    pub b: CVec,
    n_tx: usize,
    n_rf: usize,
    semi_orthogonal: bool,
}

impl LassoProblem {
    /// True when `F_BB F_BB^H = I`, in which case `A^H A = I` and the
    /// solution is a single soft-thresholding step.
    pub fn is_semi_orthogonal(&self) -> bool {
        self.semi_orthogonal
    }

    pub fn objective(&self, x: &CVec) -> f64 {
        0.5 * (&self.a * x - &self.b).norm_squared() + LASSO_WEIGHT * l1_norm(x)
    }

    /// Analog precoder recovered from a dual solution: `vec(F_RF) = A^H (b - A x)`.
    pub fn recover(&self, x: &CVec) -> CMat {
        let v = self.a.adjoint() * (&self.b - &self.a * x);
        CMat::from_column_slice(self.n_tx, self.n_rf, v.as_slice())
    }
}

/// Sum of entry moduli.
pub fn l1_norm(x: &CVec) -> f64 {
    x.iter().map(|z| z.norm()).sum()
}

/// Complex soft-threshold `e^{j angle(z)} (|z| - t)^+`.
pub fn soft_threshold(z: Complex64, t: f64) -> Complex64 {
    let m = z.norm();
    if m <= t {
        Complex64::new(0.0, 0.0)
    } else {
        unit_phase(z) * (m - t)
    }
}

/// Projection onto the disk of radius `r` (phase preserved).
pub fn project_disk(z: Complex64, r: f64) -> Complex64 {
    let m = z.norm();
    if m <= r {
        z
    } else {
        unit_phase(z) * r
    }
}

/// Builds the dual LASSO of RF-only precoding for baseband `f_bb`
/// (`N_RF x L`) and fully digital target `f_opt` (`N_t x L`).
pub fn build_lasso(f_bb: &CMat, f_opt: &CMat) -> Result<LassoProblem> {
    let (n_rf, l) = f_bb.shape();
    let n_tx = f_opt.nrows();
    if f_opt.ncols() != l {
        return Err(Error::ShapeMismatch {
            what: "F_opt columns vs F_BB columns",
            expected: (n_tx, l),
            got: f_opt.shape(),
        });
    }
    if n_rf == 0 || n_rf > l {
        return Err(Error::RankDeficient("F_BB"));
    }
    let gram = f_bb * f_bb.adjoint();
    // D^H D = conj(F_BB F_BB^H) (x) I, so the inverse factors through the
    // small N_RF x N_RF matrix.
    let small = gram.map(|z| z.conj());
    let (vals, q) = hermitian_eigen(&small);
    let top = vals[0];
    if !(top > 0.0) || vals[n_rf - 1] <= top * 1e-12 {
        return Err(Error::RankDeficient("F_BB"));
    }
    // (D^H D)^{-1} = (Q (x) I) (Lambda^{-1} (x) I) (Q (x) I)^H
    let mut a_small = q.adjoint();
    for (i, lam) in vals.iter().enumerate() {
        a_small.row_mut(i).scale_mut(1.0 / lam.sqrt());
    }
    let a = a_small.kronecker(&CMat::identity(n_tx, n_tx));
    let dh_f = f_opt * f_bb.adjoint();
    let dh_f = DVector::from_column_slice(dh_f.as_slice());
    let b = &a * dh_f;
    let semi_orthogonal = (gram - CMat::identity(n_rf, n_rf)).norm() <= SEMI_ORTHOGONAL_TOL;
    Ok(LassoProblem {
        a,
        b,
        n_tx,
        n_rf,
        semi_orthogonal,
    })
}

#[derive(Debug, Clone)]
pub struct LassoSolution {
    pub x: CVec,
    pub iterations: usize,
    pub closed_form: bool,
}

pub const LASSO_MAX_ITER: usize = 10_000;
pub const LASSO_REL_TOL: f64 = 1e-9;

/// Solves the LASSO: soft-thresholding of `A^H b` in closed form when `A`
/// is semi-orthogonal, proximal gradient otherwise.
pub fn solve_lasso(prob: &LassoProblem) -> Result<LassoSolution> {
    if prob.semi_orthogonal {
        let x = (prob.a.adjoint() * &prob.b).map(|z| soft_threshold(z, LASSO_WEIGHT));
        return Ok(LassoSolution {
            x,
            iterations: 0,
            closed_form: true,
        });
    }
    proximal_gradient(prob, LASSO_MAX_ITER, LASSO_REL_TOL)
}

/// Proximal gradient with fixed step `1 / lambda_max(A^H A)`, stopped when
/// the relative objective change drops below `rel_tol`.
pub fn proximal_gradient(
    prob: &LassoProblem,
    max_iter: usize,
    rel_tol: f64,
) -> Result<LassoSolution> {
    let aha = prob.a.adjoint() * &prob.a;
    let ahb = prob.a.adjoint() * &prob.b;
    let lipschitz = crate::linalg::hermitian_eigenvalues(&aha)[0];
    let step = 1.0 / lipschitz;
    let mut x = CVec::zeros(prob.a.ncols());
    let mut obj = prob.objective(&x);
    let mut rel = f64::INFINITY;
    for it in 1..=max_iter {
        let grad = &aha * &x - &ahb;
        let next = (&x - grad * Complex64::new(step, 0.0))
            .map(|z| soft_threshold(z, LASSO_WEIGHT * step));
        let next_obj = prob.objective(&next);
        rel = (obj - next_obj).abs() / next_obj.abs().max(f64::MIN_POSITIVE);
        x = next;
        obj = next_obj;
        if rel < rel_tol {
            return Ok(LassoSolution {
                x,
                iterations: it,
                closed_form: false,
            });
        }
    }
    Err(Error::NotConverged {
        iterations: max_iter,
        rel_change: rel,
        best: x.iter().copied().collect(),
    })
}

/// RF-only analog precoder for a fixed baseband: solve the dual LASSO and
/// recover `F_RF`. Iterative solutions are projected entrywise onto the
/// modulus-2 disk to remove residual infeasibility.
pub fn rf_only_precoder(f_opt: &CMat, f_bb: &CMat) -> Result<CMat> {
    let prob = build_lasso(f_bb, f_opt)?;
    let sol = solve_lasso(&prob)?;
    let f_rf = prob.recover(&sol.x);
    Ok(f_rf.map(|z| project_disk(z, DPS_MAX_MODULUS)))
}

/// Closed form for a semi-orthogonal baseband:
/// `F_RF = Z - e^{j angle(Z)} o (|Z| - 2)^+` with `Z = F_opt F_BB^H`.
pub fn rf_only_closed_form(f_opt: &CMat, f_bb: &CMat) -> CMat {
    (f_opt * f_bb.adjoint()).map(|z| z - soft_threshold(z, DPS_MAX_MODULUS))
}

/// Best rank-`n_rf` approximation of `F_opt` and its default split.
#[derive(Debug, Clone)]
pub struct LowRank {
    /// `U_1 S_1 V_1^H`
    pub f_hat: CMat,
    /// `U_1`
    pub f_rf: CMat,
    /// `S_1 V_1^H`
    pub f_bb: CMat,
    pub singular_values: Vec<f64>,
    /// `sum_{p > n_rf} sigma_p^2`
    pub residual: f64,
}

pub fn hybrid_lowrank(f_opt: &CMat, n_rf: usize) -> Result<LowRank> {
    let (rows, cols) = f_opt.shape();
    if n_rf == 0 || n_rf > rows.min(cols) {
        return Err(Error::InfeasibleDimensions(format!(
            "{n_rf} RF chains for a {rows}x{cols} matrix"
        )));
    }
    let dec = svd(f_opt);
    let f_rf = dec.u.columns(0, n_rf).into_owned();
    let mut f_bb = dec.v.columns(0, n_rf).adjoint();
    for (i, s) in dec.s.iter().take(n_rf).enumerate() {
        f_bb.row_mut(i).scale_mut(*s);
    }
    let f_hat = &f_rf * &f_bb;
    let residual = dec.s.iter().skip(n_rf).map(|s| s * s).sum();
    Ok(LowRank {
        f_hat,
        f_rf,
        f_bb,
        singular_values: dec.s,
        residual,
    })
}

/// `F_RF = [I; F2 F1^+]`, `F_BB = F1` (rows possibly permuted).
#[derive(Debug, Clone)]
pub struct IdentityBlock {
    pub f_rf: CMat,
    pub f_bb: CMat,
    /// Row order used when the leading block was too ill-conditioned:
    /// `permutation[i]` is the original row placed at position `i`.
    pub permutation: Option<Vec<usize>>,
    /// `2 n_rf (N_t - n_rf)`: identity rows need no phase shifters.
    pub phase_shifters: usize,
}

const IDENTITY_BLOCK_MAX_COND: f64 = 1e10;

/// Decomposes a rank-`n_rf` matrix so that `n_rf` rows of `F_RF` form an
/// identity. Uses the leading rows unless their condition number exceeds
/// 1e10, in which case rows are chosen by greedy pivoting.
pub fn decompose_identity_block(f_hat: &CMat, n_rf: usize) -> Result<IdentityBlock> {
    let n_tx = f_hat.nrows();
    if n_rf == 0 || n_rf > n_tx || n_rf > f_hat.ncols() {
        return Err(Error::InfeasibleDimensions(format!(
            "{n_rf} RF chains for a {n_tx}x{} matrix",
            f_hat.ncols()
        )));
    }
    let natural: Vec<usize> = (0..n_tx).collect();
    let cond = |order: &[usize]| {
        let top = f_hat.select_rows(&order[..n_rf]);
        let s = svd(&top).s;
        if s[n_rf - 1] > 0.0 {
            s[0] / s[n_rf - 1]
        } else {
            f64::INFINITY
        }
    };
    let (order, permuted) = if cond(&natural) <= IDENTITY_BLOCK_MAX_COND {
        (natural, false)
    } else {
        let order = pivot_rows(f_hat, n_rf);
        if cond(&order) > IDENTITY_BLOCK_MAX_COND {
            return Err(Error::RankDeficient("rank-n_rf approximation"));
        }
        (order, true)
    };
    let top = f_hat.select_rows(&order[..n_rf]);
    let dec = svd(&top);
    // top^+ = V S^{-1} U^H
    let mut v_scaled = dec.v.clone();
    for (j, s) in dec.s.iter().enumerate() {
        v_scaled.column_mut(j).scale_mut(1.0 / s);
    }
    let pinv = v_scaled * dec.u.adjoint();
    let mut f_rf = CMat::zeros(n_tx, n_rf);
    for (pos, &row) in order.iter().enumerate() {
        if pos < n_rf {
            f_rf[(row, pos)] = Complex64::new(1.0, 0.0);
        } else {
            let x = f_hat.row(row) * &pinv;
            f_rf.set_row(row, &x);
        }
    }
    Ok(IdentityBlock {
        f_rf,
        f_bb: top,
        permutation: permuted.then_some(order),
        phase_shifters: 2 * n_rf * (n_tx - n_rf),
    })
}

/// Greedy row pivoting (column-pivoted Gram-Schmidt on the rows): the first
/// `n_rf` entries are the chosen rows, the rest follow in natural order.
fn pivot_rows(m: &CMat, n_rf: usize) -> Vec<usize> {
    let mut resid = m.clone();
    let mut chosen = Vec::with_capacity(n_rf);
    for _ in 0..n_rf {
        let mut best = usize::MAX;
        let mut best_norm = -1.0;
        for i in 0..m.nrows() {
            if chosen.contains(&i) {
                continue;
            }
            let n = resid.row(i).norm();
            if n > best_norm {
                best_norm = n;
                best = i;
            }
        }
        chosen.push(best);
        let q = resid.row(best).into_owned() / Complex64::new(best_norm.max(f64::MIN_POSITIVE), 0.0);
        for i in 0..m.nrows() {
            let c = (resid.row(i) * q.adjoint())[(0, 0)];
            let upd = resid.row(i) - &q * c;
            resid.set_row(i, &upd);
        }
    }
    let mut order = chosen.clone();
    order.extend((0..m.nrows()).filter(|i| !chosen.contains(i)));
    order
}

/// Single-phase-shifter heuristic: keep only the phases of `U_1`
/// (`angle(0) = 0`), keep `S_1 V_1^H` as the baseband.
pub fn sps_phase_extract(low: &LowRank) -> (CMat, CMat) {
    (low.f_rf.map(unit_phase), low.f_bb.clone())
}

/// Phases of the two shifters realizing one analog entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhasePair {
    pub theta_plus: f64,
    pub theta_minus: f64,
}

impl PhasePair {
    pub fn value(&self) -> Complex64 {
        Complex64::from_polar(1.0, self.theta_plus) + Complex64::from_polar(1.0, self.theta_minus)
    }
}

/// `a e^{j theta} = e^{j(theta + phi)} + e^{j(theta - phi)}`, `phi = arccos(a / 2)`.
pub fn factor_double_phase(entry: Complex64) -> Result<PhasePair> {
    let a = entry.norm();
    if a > DPS_MAX_MODULUS + 1e-12 {
        return Err(Error::ModulusTooLarge(a));
    }
    let theta = crate::linalg::angle(entry);
    let phi = (a / 2.0).min(1.0).acos();
    Ok(PhasePair {
        theta_plus: theta + phi,
        theta_minus: theta - phi,
    })
}

/// Moves the scale `gamma = max|F_RF| / 2` from the analog to the digital
/// precoder so the largest analog entry has modulus exactly 2.
pub fn rescale_feasible(f_rf: &CMat, f_bb: &CMat) -> Result<(CMat, CMat, f64)> {
    let gamma = max_modulus(f_rf) / DPS_MAX_MODULUS;
    if gamma == 0.0 {
        return Err(Error::ZeroMatrix("F_RF"));
    }
    let inv = Complex64::new(1.0 / gamma, 0.0);
    Ok((f_rf * inv, f_bb * Complex64::new(gamma, 0.0), gamma))
}

/// `||F_opt - F_RF F_BB||_F^2`
pub fn approximation_error(f_opt: &CMat, f_rf: &CMat, f_bb: &CMat) -> f64 {
    frob_sq(&(f_opt - f_rf * f_bb))
}

/// Wraps a phase into `[0, 2 pi)`.
pub fn wrap_phase(p: f64) -> f64 {
    p.rem_euclid(2.0 * PI)
}
