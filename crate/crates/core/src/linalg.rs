//! Dense complex linear algebra helpers on top of `nalgebra`.
//!
//! Everything here works on `DMatrix<Complex64>`. Decompositions are
//! returned with singular values / eigenvalues sorted in descending order and
//! with a fixed phase convention on singular vectors so that results are
//! reproducible across runs.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

pub const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
pub const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };

/// Thin SVD `m = u * diag(s) * v^H`, singular values in descending order.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: CMat,
    pub s: Vec<f64>,
    pub v: CMat,
}

impl Svd {
    /// Rank-`r` truncation `u_r * diag(s_r) * v_r^H`.
    pub fn truncated(&self, r: usize) -> CMat {
        let r = r.min(self.s.len());
        let mut us = self.u.columns(0, r).into_owned();
        for (j, sigma) in self.s.iter().take(r).enumerate() {
            us.column_mut(j).scale_mut(*sigma);
        }
        us * self.v.columns(0, r).adjoint()
    }
}

/// Phase of `z`, with the convention that the phase of zero is zero.
pub fn angle(z: Complex64) -> f64 {
    if z.re == 0.0 && z.im == 0.0 {
        0.0
    } else {
        z.arg()
    }
}

/// Unit phasor `e^{j angle(z)}`.
pub fn unit_phase(z: Complex64) -> Complex64 {
    Complex64::from_polar(1.0, angle(z))
}

pub fn frob_sq(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

pub fn max_modulus(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Index of the largest-modulus entry; lowest index wins ties.
fn argmax_modulus<'a>(it: impl Iterator<Item = &'a Complex64>) -> usize {
    let mut best = 0;
    let mut best_val = -1.0;
    for (i, z) in it.enumerate() {
        let v = z.norm_sqr();
        if v > best_val {
            best_val = v;
            best = i;
        }
    }
    best
}

/// Thin SVD with sorted singular values. The largest-modulus entry of every
/// left singular vector is made real positive (the matching right vector is
/// rotated by the same phase).
pub fn svd(m: &CMat) -> Svd {
    let (rows, cols) = m.shape();
    let r = rows.min(cols);
    if r == 0 {
        return Svd {
            u: CMat::zeros(rows, 0),
            s: Vec::new(),
            v: CMat::zeros(cols, 0),
        };
    }
    let dec = nalgebra::linalg::SVD::new(m.clone(), true, true);
    let u_raw = dec.u.expect("u requested");
    let vt_raw = dec.v_t.expect("v_t requested");
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| {
        dec.singular_values[b]
            .partial_cmp(&dec.singular_values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut u = CMat::zeros(rows, r);
    let mut v = CMat::zeros(cols, r);
    let mut s = Vec::with_capacity(r);
    for (dst, &src) in order.iter().enumerate() {
        let ucol = u_raw.column(src);
        let k = argmax_modulus(ucol.iter());
        let rot = unit_phase(ucol[k]).conj();
        u.set_column(dst, &(ucol * rot));
        // v = (v^H)^H; row `src` of v_t conjugated, rotated by the same phase.
        let vcol: CVec = vt_raw.row(src).adjoint() * rot;
        v.set_column(dst, &vcol);
        s.push(dec.singular_values[src]);
    }
    Svd { u, s, v }
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues descending.
/// Eigenvector phases follow the same largest-entry convention as [`svd`].
pub fn hermitian_eigen(m: &CMat) -> (Vec<f64>, CMat) {
    let n = m.nrows();
    if n == 0 {
        return (Vec::new(), CMat::zeros(0, 0));
    }
    let herm = (m + m.adjoint()) * Complex64::new(0.5, 0.0);
    let dec = nalgebra::linalg::SymmetricEigen::new(herm);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        dec.eigenvalues[b]
            .partial_cmp(&dec.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut vecs = CMat::zeros(n, n);
    let mut vals = Vec::with_capacity(n);
    for (dst, &src) in order.iter().enumerate() {
        let col = dec.eigenvectors.column(src);
        let k = argmax_modulus(col.iter());
        let rot = unit_phase(col[k]).conj();
        vecs.set_column(dst, &(col * rot));
        vals.push(dec.eigenvalues[src]);
    }
    (vals, vecs)
}

/// Eigenvalues of a Hermitian matrix, descending.
pub fn hermitian_eigenvalues(m: &CMat) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let herm = (m + m.adjoint()) * Complex64::new(0.5, 0.0);
    let mut vals: Vec<f64> = herm.symmetric_eigenvalues().iter().copied().collect();
    vals.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    vals
}

/// Orthonormal basis of the null space of `m` (`rows x n`), assuming `m`
/// has full row rank. Returns `n - rows` columns (or `n` columns for an
/// empty `m`).
///
/// The basis is the trailing block of the full unitary factor of a
/// Householder QR of `[m^H | I_n]`, so leakage `|m * basis|` stays at
/// round-off level relative to `|m|`.
pub fn null_space(m: &CMat) -> CMat {
    let (rows, n) = m.shape();
    if rows == 0 {
        return CMat::identity(n, n);
    }
    if rows >= n {
        return CMat::zeros(n, 0);
    }
    let mut aug = CMat::zeros(n, rows + n);
    aug.columns_mut(0, rows).copy_from(&m.adjoint());
    aug.columns_mut(rows, n).fill_with_identity();
    let q = nalgebra::linalg::QR::new(aug).q();
    q.columns(rows, n - rows).into_owned()
}

/// Horizontal concatenation of equally tall blocks.
pub fn hstack(blocks: &[CMat]) -> CMat {
    let rows = blocks.first().map_or(0, |b| b.nrows());
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = CMat::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        out.columns_mut(c, b.ncols()).copy_from(b);
        c += b.ncols();
    }
    out
}

/// Vertical concatenation of equally wide blocks.
pub fn vstack(blocks: &[CMat]) -> CMat {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = CMat::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        out.rows_mut(r, b.nrows()).copy_from(b);
        r += b.nrows();
    }
    out
}

/// `log2 det(m)` for a Hermitian positive definite `m`, or `None` if the
/// Cholesky factorization fails.
pub fn log2_det_hpd(m: &CMat) -> Option<f64> {
    let herm = (m + m.adjoint()) * Complex64::new(0.5, 0.0);
    let chol = nalgebra::linalg::Cholesky::new(herm)?;
    let l = chol.l_dirty();
    let mut acc = 0.0;
    for i in 0..l.nrows() {
        let d = l[(i, i)].re;
        if !(d > 0.0) {
            return None;
        }
        acc += d.log2();
    }
    Some(2.0 * acc)
}
