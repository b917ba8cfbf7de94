//! Small dense linear-algebra helpers shared by the filter and the priors.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub fn symmetrize(p: &DMatrix<f64>) -> DMatrix<f64> {
    (p + p.transpose()) * 0.5
}

pub fn block_diag(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Lower-triangular `L` with `L Lᵀ = A·Aᵀ`, via QR of `Aᵀ`.
///
/// `a` may be wide (n × k with k ≥ n); the result is n × n.
pub fn tria(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let k = a.ncols();
    if k < n {
        let mut padded = DMatrix::zeros(n, n);
        padded.view_mut((0, 0), (n, k)).copy_from(a);
        return tria(&padded);
    }
    let r = a.transpose().qr().unpack_r();
    // r is n × n upper triangular; fix the sign so the diagonal is non-negative.
    let mut l = r.transpose();
    for j in 0..n {
        if l[(j, j)] < 0.0 {
            for i in j..n {
                l[(i, j)] = -l[(i, j)];
            }
        }
    }
    l
}

/// A square-root factor of a symmetric PSD matrix.
///
/// Cholesky when it succeeds; otherwise a symmetric eigendecomposition with
/// negative eigenvalues (rounding noise) clipped to zero.
pub fn psd_sqrt(p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = p.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let sym = symmetrize(p);
    if let Some(ch) = sym.clone().cholesky() {
        return Ok(ch.unpack());
    }
    let scale = max_abs(&sym);
    let eig = SymmetricEigen::new(sym);
    let tol = 1e-9 * scale.max(f64::MIN_POSITIVE);
    if eig.eigenvalues.iter().any(|&v| v < -tol) {
        return Err(Error::numerical(
            f64::NAN,
            format!(
                "matrix is not positive semi-definite (min eigenvalue {:.3e})",
                eig.eigenvalues.min()
            ),
        ));
    }
    let mut v = eig.eigenvectors;
    for (j, lam) in eig.eigenvalues.iter().enumerate() {
        let s = lam.max(0.0).sqrt();
        v.column_mut(j).scale_mut(s);
    }
    Ok(tria(&v))
}

/// Solve `L x = b` for lower-triangular `L`, treating rows with a negligible
/// pivot as carrying no information (their solution component is zero).
pub fn solve_lower_pinv(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let scale = (0..n).fold(0.0_f64, |a, i| a.max(l[(i, i)].abs()));
    let tol = scale * 1e-13;
    let mut x = DMatrix::zeros(n, b.ncols());
    for c in 0..b.ncols() {
        for i in 0..n {
            let d = l[(i, i)];
            if d.abs() <= tol {
                x[(i, c)] = 0.0;
                continue;
            }
            let mut s = b[(i, c)];
            for k in 0..i {
                s -= l[(i, k)] * x[(k, c)];
            }
            x[(i, c)] = s / d;
        }
    }
    x
}

/// Solve `Lᵀ x = b` for lower-triangular `L`, with the same pivot rule.
pub fn solve_lower_transpose_pinv(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let scale = (0..n).fold(0.0_f64, |a, i| a.max(l[(i, i)].abs()));
    let tol = scale * 1e-13;
    let mut x = DMatrix::zeros(n, b.ncols());
    for c in 0..b.ncols() {
        for i in (0..n).rev() {
            let d = l[(i, i)];
            if d.abs() <= tol {
                x[(i, c)] = 0.0;
                continue;
            }
            let mut s = b[(i, c)];
            for k in (i + 1)..n {
                s -= l[(k, i)] * x[(k, c)];
            }
            x[(i, c)] = s / d;
        }
    }
    x
}

pub fn all_finite_vec(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

pub fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|x| x.is_finite())
}

/// Largest Loewner violation of `a ⪯ b`, i.e. `max(0, -λ_min(b - a))`.
pub fn loewner_violation(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let diff = symmetrize(&(b - a));
    let eig = SymmetricEigen::new(diff);
    (-eig.eigenvalues.min()).max(0.0)
}
