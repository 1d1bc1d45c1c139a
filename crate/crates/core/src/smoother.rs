//! Nadaraya-Watson weight matrices, the shrinkage smoother
//! `S_c = c W + (1 - c) I`, the covariance-optimal smoother `S*`, and their
//! application to prediction sets.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, Schur, SymmetricEigen};
#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::{PesError, Result};
use crate::linalg::{check_finite, check_square, row_sq_dist, symmetrize, MAX_CONDITION};
use crate::model::{CovarianceBundle, PredictionSet};

/// Bandwidth and mixing weight of a shrinkage smoother.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmootherSpec {
    bandwidth_sigma: f64,
    mixing_c: f64,
}

impl SmootherSpec {
    pub fn new(bandwidth_sigma: f64, mixing_c: f64) -> Result<Self> {
        check_sigma(bandwidth_sigma)?;
        check_c(mixing_c)?;
        Ok(Self {
            bandwidth_sigma,
            mixing_c,
        })
    }

    pub fn sigma(&self) -> f64 {
        self.bandwidth_sigma
    }

    pub fn c(&self) -> f64 {
        self.mixing_c
    }

    /// Dense `S_c` over the given index rows.
    pub fn matrix(&self, indices: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let w = nadaraya_watson_matrix(indices, self.bandwidth_sigma)?;
        shrinkage_smoother(&w, self.mixing_c)
    }

    /// Applies `S_c` without materialising the `n x n` matrix.
    pub fn apply(&self, p: &PredictionSet) -> Result<PredictionSet> {
        if self.mixing_c == 0.0 {
            return Ok(p.clone());
        }
        let smoothed = nadaraya_watson_apply(p.indices(), self.bandwidth_sigma, p.predictions())?;
        p.with_predictions(mix(&smoothed, p.predictions(), self.mixing_c))
    }

    /// Smooths each group independently (block-diagonal `W`), e.g. one block
    /// per video.
    pub fn apply_grouped<G: Ord + Clone>(&self, p: &PredictionSet, groups: &[G]) -> Result<PredictionSet> {
        if groups.len() != p.len() {
            return Err(PesError::Shape {
                what: "groups",
                expected: p.len().to_string(),
                got: groups.len().to_string(),
            });
        }
        let mut out = p.predictions().clone();
        for rows in group_rows(groups).into_values() {
            let block = self.apply(&p.subset(&rows))?;
            for (k, &r) in rows.iter().enumerate() {
                out.row_mut(r).copy_from(&block.predictions().row(k));
            }
        }
        p.with_predictions(out)
    }
}

/// Row lists per distinct group label, in first-seen order within each group.
pub fn group_rows<G: Ord + Clone>(groups: &[G]) -> BTreeMap<G, Vec<usize>> {
    let mut map: BTreeMap<G, Vec<usize>> = BTreeMap::new();
    for (i, g) in groups.iter().enumerate() {
        map.entry(g.clone()).or_default().push(i);
    }
    map
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(PesError::InvalidParameter {
            name: "sigma",
            reason: format!("bandwidth must be positive and finite, got {sigma}"),
        });
    }
    Ok(())
}

fn check_c(c: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&c) {
        return Err(PesError::InvalidParameter {
            name: "c",
            reason: format!("mixing weight must lie in [0, 1], got {c}"),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightKind {
    NadarayaWatson,
    Custom,
}

/// A square weight matrix `W`; `W_ij` is how much prediction `j` contributes
/// to the smoothed estimate at `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    weights: DMatrix<f64>,
    kind: WeightKind,
}

impl WeightMatrix {
    /// Wraps an arbitrary square matrix. No stochasticity is required.
    pub fn custom(weights: DMatrix<f64>) -> Result<Self> {
        check_square("weights", &weights, weights.nrows())?;
        check_finite("weights", &weights)?;
        Ok(Self {
            weights,
            kind: WeightKind::Custom,
        })
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn kind(&self) -> WeightKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.weights.nrows()
    }

    /// Nonnegative entries and unit row sums within `tol`.
    pub fn is_right_stochastic(&self, tol: f64) -> bool {
        self.weights.iter().all(|&w| w >= 0.0)
            && self
                .weights
                .row_iter()
                .all(|r| (r.sum() - 1.0).abs() <= tol)
    }

    /// Largest real part among the eigenvalues of `W`, or NaN if the Schur
    /// iteration does not converge.
    ///
    /// An NW matrix `D^{-1} K` is similar to the symmetric
    /// `D^{-1/2} K D^{-1/2}`, and with a unit self-kernel `d_i = 1 / W_ii`.
    pub fn lambda_max(&self) -> f64 {
        let w = &self.weights;
        match self.kind {
            WeightKind::NadarayaWatson => {
                let m = DMatrix::from_fn(w.nrows(), w.ncols(), |i, j| w[(i, j)] * (w[(j, j)] / w[(i, i)]).sqrt());
                SymmetricEigen::new(symmetrize(&m)).eigenvalues.max()
            }
            WeightKind::Custom => match Schur::try_new(w.clone(), f64::EPSILON, 10_000) {
                Some(schur) => schur
                    .complex_eigenvalues()
                    .iter()
                    .map(|z| z.re)
                    .fold(f64::NEG_INFINITY, f64::max),
                None => f64::NAN,
            },
        }
    }

    /// Largest eigenvalue of the symmetric part `(W + W^T)/2`, which bounds
    /// `x^T W x / x^T x`. For a non-symmetric stochastic `W` it can exceed 1.
    pub fn lambda_max_sym(&self) -> f64 {
        SymmetricEigen::new(symmetrize(&self.weights)).eigenvalues.max()
    }
}

/// `exp(-||t_i - t_j||^2 / (2 sigma^2))`.
pub fn gaussian_kernel(t_i: &[f64], t_j: &[f64], sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    if t_i.len() != t_j.len() {
        return Err(PesError::Shape {
            what: "index vectors",
            expected: t_i.len().to_string(),
            got: t_j.len().to_string(),
        });
    }
    let d2: f64 = t_i.iter().zip(t_j).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((-d2 / (2.0 * sigma * sigma)).exp())
}

fn nw_row(indices: &DMatrix<f64>, i: usize, inv_two_sigma_sq: f64, out: &mut [f64]) {
    let mut total = 0.0;
    for (j, w) in out.iter_mut().enumerate() {
        // self term is exactly 1, so the row total never vanishes
        *w = if i == j {
            1.0
        } else {
            (-row_sq_dist(indices, i, indices, j) * inv_two_sigma_sq).exp()
        };
        total += *w;
    }
    for w in out.iter_mut() {
        *w /= total;
    }
}

/// Row-normalised Gaussian kernel matrix over the index rows, self term
/// included.
pub fn nadaraya_watson_matrix(indices: &DMatrix<f64>, sigma: f64) -> Result<WeightMatrix> {
    check_sigma(sigma)?;
    let n = indices.nrows();
    if n == 0 {
        return Err(PesError::EmptyInput("no index rows to smooth over"));
    }
    check_finite("indices", indices)?;
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut rows = vec![0.0; n * n];
    #[cfg(feature = "parallel")]
    rows.par_chunks_mut(n)
        .enumerate()
        .for_each(|(i, r)| nw_row(indices, i, inv, r));
    #[cfg(not(feature = "parallel"))]
    rows.chunks_mut(n)
        .enumerate()
        .for_each(|(i, r)| nw_row(indices, i, inv, r));
    Ok(WeightMatrix {
        weights: DMatrix::from_row_slice(n, n, &rows),
        kind: WeightKind::NadarayaWatson,
    })
}

/// `W * values` for the Nadaraya-Watson `W`, computed row by row in `O(n)`
/// memory.
pub fn nadaraya_watson_apply(
    indices: &DMatrix<f64>,
    sigma: f64,
    values: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    check_sigma(sigma)?;
    let n = indices.nrows();
    if values.nrows() != n {
        return Err(PesError::Shape {
            what: "values",
            expected: format!("{n} rows"),
            got: format!("{} rows", values.nrows()),
        });
    }
    let d = values.ncols();
    let inv = 1.0 / (2.0 * sigma * sigma);
    let smooth_row = |i: usize, out: &mut [f64]| {
        let mut w = vec![0.0; n];
        nw_row(indices, i, inv, &mut w);
        for (k, o) in out.iter_mut().enumerate() {
            *o = w.iter().enumerate().map(|(j, wj)| wj * values[(j, k)]).sum();
        }
    };
    let mut rows = vec![0.0; n * d];
    if d > 0 {
        #[cfg(feature = "parallel")]
        rows.par_chunks_mut(d)
            .enumerate()
            .for_each(|(i, r)| smooth_row(i, r));
        #[cfg(not(feature = "parallel"))]
        rows.chunks_mut(d)
            .enumerate()
            .for_each(|(i, r)| smooth_row(i, r));
    }
    Ok(DMatrix::from_row_slice(n, d, &rows))
}

/// `c * smoothed + (1 - c) * original`; at `c = 0` this returns `original`
/// unchanged.
pub fn mix(smoothed: &DMatrix<f64>, original: &DMatrix<f64>, c: f64) -> DMatrix<f64> {
    if c == 0.0 {
        return original.clone();
    }
    smoothed * c + original * (1.0 - c)
}

/// `S_c = c W + (1 - c) I`.
pub fn shrinkage_smoother(w: &WeightMatrix, c: f64) -> Result<DMatrix<f64>> {
    check_c(c)?;
    let n = w.dim();
    let mut s = &w.weights * c;
    for i in 0..n {
        s[(i, i)] += 1.0 - c;
    }
    Ok(s)
}

fn is_identity(s: &DMatrix<f64>) -> bool {
    s.iter()
        .enumerate()
        .all(|(k, &v)| v == if k % (s.nrows() + 1) == 0 { 1.0 } else { 0.0 })
}

/// `S * predictions`, columnwise; labels and indices pass through.
pub fn apply_smoother(s: &DMatrix<f64>, p: &PredictionSet) -> Result<PredictionSet> {
    check_square("smoother", s, p.len())?;
    if is_identity(s) {
        return Ok(p.clone());
    }
    p.with_predictions(s * p.predictions())
}

/// The MSE-optimal linear smoother `S* = K_yhat_y^T K_yhat_yhat^{-1}`,
/// equivalently `I - (K_ee + K_ye)^T K_yhat_yhat^{-1}`.
pub fn optimal_smoother(cov: &CovarianceBundle) -> Result<DMatrix<f64>> {
    let x = solve_yhat_yhat(cov, cov.k_yhat_y())?;
    Ok(x.transpose())
}

/// Solves `K_yhat_yhat X = rhs` after verifying `K_yhat_yhat` is positive
/// definite with condition number at most `1e12`.
pub(crate) fn solve_yhat_yhat(cov: &CovarianceBundle, rhs: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = symmetrize(&cov.k_yhat_yhat());
    let eig = SymmetricEigen::new(k.clone());
    let (lo, hi) = (eig.eigenvalues.min(), eig.eigenvalues.max());
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if condition > MAX_CONDITION {
        return Err(PesError::IllConditioned {
            what: "K_yhat_yhat",
            condition,
            hint: "the optimal smoother requires K_yhat_yhat to be strictly positive definite",
        });
    }
    let chol = nalgebra::Cholesky::new(k).ok_or(PesError::NotPositiveDefinite { what: "K_yhat_yhat" })?;
    Ok(chol.solve(&rhs))
}
