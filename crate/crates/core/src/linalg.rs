//! Small dense helpers shared by the smoothers, the theory estimators and the
//! baselines.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{PesError, Result};

/// Relative eigenvalue floor for PSD checks: `lambda_min >= -PSD_TOL * lambda_max`.
pub const PSD_TOL: f64 = 1e-8;
/// Relative tolerance for symmetry checks.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Systems with an estimated condition number above this are rejected.
pub const MAX_CONDITION: f64 = 1e12;

pub(crate) fn check_finite(what: &'static str, m: &DMatrix<f64>) -> Result<()> {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if !m[(i, j)].is_finite() {
                return Err(PesError::NonFinite {
                    what,
                    row: i,
                    col: j,
                });
            }
        }
    }
    Ok(())
}

pub(crate) fn check_square(what: &'static str, m: &DMatrix<f64>, n: usize) -> Result<()> {
    if m.nrows() != n || m.ncols() != n {
        return Err(PesError::Shape {
            what,
            expected: format!("{n}x{n}"),
            got: format!("{}x{}", m.nrows(), m.ncols()),
        });
    }
    Ok(())
}

pub fn check_symmetric(what: &'static str, m: &DMatrix<f64>) -> Result<()> {
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let d = (m[(i, j)] - m[(j, i)]).abs();
            if d > SYMMETRY_TOL * scale {
                return Err(PesError::NotPsd {
                    what,
                    detail: format!("entries ({i},{j}) and ({j},{i}) differ by {d:.3e}"),
                });
            }
        }
    }
    Ok(())
}

/// Symmetric part `(m + m^T) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn check_psd(what: &'static str, m: &DMatrix<f64>) -> Result<()> {
    check_symmetric(what, m)?;
    if m.nrows() == 0 {
        return Ok(());
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if min < -PSD_TOL * max.abs().max(f64::MIN_POSITIVE) {
        return Err(PesError::NotPsd {
            what,
            detail: format!("smallest eigenvalue {min:.3e} against largest {max:.3e}"),
        });
    }
    Ok(())
}

/// Cholesky factorisation that also rejects numerically singular inputs.
///
/// The condition estimate `(max L_ii / min L_ii)^2` is a lower bound on the
/// true 2-norm condition number, so anything it flags is genuinely bad.
pub fn cholesky_checked(
    what: &'static str,
    m: DMatrix<f64>,
    hint: &'static str,
) -> Result<Cholesky<f64, Dyn>> {
    let chol = Cholesky::new(m).ok_or(PesError::NotPositiveDefinite { what })?;
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &d| (lo.min(d), hi.max(d)));
    let condition = if lo > 0.0 { (hi / lo).powi(2) } else { f64::INFINITY };
    if condition > MAX_CONDITION {
        return Err(PesError::IllConditioned {
            what,
            condition,
            hint,
        });
    }
    Ok(chol)
}

/// `trace(A^{-1})` from a Cholesky factor, via `||L^{-1}||_F^2`.
pub fn trace_of_inverse(chol: &Cholesky<f64, Dyn>) -> f64 {
    let n = chol.l_dirty().nrows();
    let l = chol.l();
    let mut id = DMatrix::<f64>::identity(n, n);
    l.solve_lower_triangular_mut(&mut id);
    id.iter().map(|v| v * v).sum()
}

/// Draws `L xi` for a lower-triangular `L`, i.e. a sample with covariance `L L^T`.
pub fn lower_times(l: &DMatrix<f64>, xi: &DVector<f64>) -> DVector<f64> {
    let n = l.nrows();
    let mut out = DVector::zeros(n);
    for j in 0..n {
        let x = xi[j];
        if x == 0.0 {
            continue;
        }
        for i in j..n {
            out[i] += l[(i, j)] * x;
        }
    }
    out
}

/// Squared Euclidean distance between rows `i` of `a` and `j` of `b`.
#[inline]
pub fn row_sq_dist(a: &DMatrix<f64>, i: usize, b: &DMatrix<f64>, j: usize) -> f64 {
    let mut s = 0.0;
    for k in 0..a.ncols() {
        let d = a[(i, k)] - b[(j, k)];
        s += d * d;
    }
    s
}

/// Dense Gaussian Gram matrix `scale * exp(-||a_i - b_j||^2 / (2 sigma^2))`.
pub fn gaussian_gram(a: &DMatrix<f64>, b: &DMatrix<f64>, sigma: f64, scale: f64) -> DMatrix<f64> {
    let inv = 1.0 / (2.0 * sigma * sigma);
    DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| {
        scale * (-row_sq_dist(a, i, b, j) * inv).exp()
    })
}

/// Copies the listed rows of `m` into a new matrix.
pub fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}
