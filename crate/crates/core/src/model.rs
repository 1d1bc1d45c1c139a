//! Domain types: datasets of `(features, labels, indices)` triplets, aligned
//! prediction sets, data splits and cross-correlation bundles.
//!
//! All matrices are row-major in meaning: row `i` is observation `i`. Labels
//! may have several columns; every smoothing operator acts on them columnwise.

use nalgebra::DMatrix;

use crate::error::{PesError, Result};
use crate::linalg::{check_finite, check_psd, check_square, select_rows};

fn check_rows(what: &'static str, m: &DMatrix<f64>, n: usize) -> Result<()> {
    if m.nrows() != n {
        return Err(PesError::Shape {
            what,
            expected: format!("{n} rows"),
            got: format!("{} rows", m.nrows()),
        });
    }
    Ok(())
}

/// Observations `{x_i, y_i, t_i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexedDataset {
    features: DMatrix<f64>,
    labels: DMatrix<f64>,
    indices: DMatrix<f64>,
}

impl IndexedDataset {
    pub fn new(features: DMatrix<f64>, labels: DMatrix<f64>, indices: DMatrix<f64>) -> Result<Self> {
        let n = features.nrows();
        if n == 0 {
            return Err(PesError::EmptyInput("dataset has no rows"));
        }
        check_rows("labels", &labels, n)?;
        check_rows("indices", &indices, n)?;
        check_finite("features", &features)?;
        check_finite("labels", &labels)?;
        check_finite("indices", &indices)?;
        Ok(Self {
            features,
            labels,
            indices,
        })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn labels(&self) -> &DMatrix<f64> {
        &self.labels
    }

    pub fn indices(&self) -> &DMatrix<f64> {
        &self.indices
    }

    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        Self::new(
            select_rows(&self.features, rows),
            select_rows(&self.labels, rows),
            select_rows(&self.indices, rows),
        )
    }

    /// Column means of the labels.
    pub fn label_mean(&self) -> Vec<f64> {
        self.labels
            .column_iter()
            .map(|c| c.sum() / c.len() as f64)
            .collect()
    }
}

/// Predictions aligned with index variables and, optionally, the true labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    predictions: DMatrix<f64>,
    labels: Option<DMatrix<f64>>,
    indices: DMatrix<f64>,
}

impl PredictionSet {
    pub fn new(
        predictions: DMatrix<f64>,
        labels: Option<DMatrix<f64>>,
        indices: DMatrix<f64>,
    ) -> Result<Self> {
        let n = predictions.nrows();
        check_rows("indices", &indices, n)?;
        check_finite("predictions", &predictions)?;
        check_finite("indices", &indices)?;
        if let Some(l) = &labels {
            if l.shape() != predictions.shape() {
                return Err(PesError::Shape {
                    what: "labels",
                    expected: format!("{}x{}", n, predictions.ncols()),
                    got: format!("{}x{}", l.nrows(), l.ncols()),
                });
            }
            check_finite("labels", l)?;
        }
        Ok(Self {
            predictions,
            labels,
            indices,
        })
    }

    pub fn len(&self) -> usize {
        self.predictions.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn predictions(&self) -> &DMatrix<f64> {
        &self.predictions
    }

    pub fn labels(&self) -> Option<&DMatrix<f64>> {
        self.labels.as_ref()
    }

    pub fn indices(&self) -> &DMatrix<f64> {
        &self.indices
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            predictions: select_rows(&self.predictions, rows),
            labels: self.labels.as_ref().map(|l| select_rows(l, rows)),
            indices: select_rows(&self.indices, rows),
        }
    }

    /// Same predictions and indices with the labels dropped.
    pub fn without_labels(&self) -> Self {
        Self {
            predictions: self.predictions.clone(),
            labels: None,
            indices: self.indices.clone(),
        }
    }

    /// Replaces the predictions, keeping labels and indices.
    pub fn with_predictions(&self, predictions: DMatrix<f64>) -> Result<Self> {
        Self::new(predictions, self.labels.clone(), self.indices.clone())
    }
}

/// `predictions - labels`, the error residuals `eps = yhat - y`.
pub fn residuals(p: &PredictionSet) -> Result<DMatrix<f64>> {
    let labels = p.labels().ok_or(PesError::MissingLabels("residuals"))?;
    Ok(p.predictions() - labels)
}

/// Disjoint train / validation / holdout row lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitAssignment {
    pub train_rows: Vec<usize>,
    pub validation_rows: Vec<usize>,
    pub holdout_rows: Vec<usize>,
}

impl SplitAssignment {
    pub fn new(
        train_rows: Vec<usize>,
        validation_rows: Vec<usize>,
        holdout_rows: Vec<usize>,
        n: usize,
    ) -> Result<Self> {
        let mut seen = vec![false; n];
        for &r in train_rows.iter().chain(&validation_rows).chain(&holdout_rows) {
            if r >= n {
                return Err(PesError::InvalidParameter {
                    name: "split",
                    reason: format!("row {r} is out of range for {n} rows"),
                });
            }
            if seen[r] {
                return Err(PesError::InvalidParameter {
                    name: "split",
                    reason: format!("row {r} is assigned more than once"),
                });
            }
            seen[r] = true;
        }
        Ok(Self {
            train_rows,
            validation_rows,
            holdout_rows,
        })
    }
}

/// Cross-correlation matrices of labels and residuals.
///
/// `k_ye[t, s] = E[y(t) eps(s)]`, so `K_{eps y} = k_ye^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceBundle {
    k_yy: DMatrix<f64>,
    k_ee: DMatrix<f64>,
    k_ye: DMatrix<f64>,
}

impl CovarianceBundle {
    pub fn new(k_yy: DMatrix<f64>, k_ee: DMatrix<f64>, k_ye: DMatrix<f64>) -> Result<Self> {
        let n = k_yy.nrows();
        check_square("K_yy", &k_yy, n)?;
        check_square("K_ee", &k_ee, n)?;
        check_square("K_ye", &k_ye, n)?;
        check_finite("K_yy", &k_yy)?;
        check_finite("K_ee", &k_ee)?;
        check_finite("K_ye", &k_ye)?;
        check_psd("K_yy", &k_yy)?;
        check_psd("K_ee", &k_ee)?;
        Ok(Self { k_yy, k_ee, k_ye })
    }

    pub fn dim(&self) -> usize {
        self.k_yy.nrows()
    }

    pub fn k_yy(&self) -> &DMatrix<f64> {
        &self.k_yy
    }

    pub fn k_ee(&self) -> &DMatrix<f64> {
        &self.k_ee
    }

    pub fn k_ye(&self) -> &DMatrix<f64> {
        &self.k_ye
    }

    /// `K_yhat_yhat = K_yy + K_ye + K_ye^T + K_ee`.
    pub fn k_yhat_yhat(&self) -> DMatrix<f64> {
        &self.k_yy + &self.k_ye + self.k_ye.transpose() + &self.k_ee
    }

    /// `K_yhat_y = E[yhat y^T] = K_yy + K_ye^T`.
    pub fn k_yhat_y(&self) -> DMatrix<f64> {
        &self.k_yy + self.k_ye.transpose()
    }

    /// `K_yhat_eps = E[yhat eps^T] = K_ye + K_ee`.
    pub fn k_yhat_e(&self) -> DMatrix<f64> {
        &self.k_ye + &self.k_ee
    }
}

/// Monte-Carlo estimate of `E[a b^T]`: `(1/m) sum_k a_k b_k^T` over `m` trials.
pub fn empirical_cross_correlation(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    if a.is_empty() {
        return Err(PesError::EmptyInput("no trials supplied"));
    }
    if a.len() != b.len() {
        return Err(PesError::Shape {
            what: "trial count",
            expected: a.len().to_string(),
            got: b.len().to_string(),
        });
    }
    let (ra, ca) = a[0].shape();
    let (rb, cb) = b[0].shape();
    if ca != cb {
        return Err(PesError::Shape {
            what: "trial columns",
            expected: ca.to_string(),
            got: cb.to_string(),
        });
    }
    let mut acc = DMatrix::zeros(ra, rb);
    for (x, y) in a.iter().zip(b) {
        if x.shape() != (ra, ca) || y.shape() != (rb, cb) {
            return Err(PesError::Shape {
                what: "trial",
                expected: format!("{ra}x{ca} and {rb}x{cb}"),
                got: format!("{}x{} and {}x{}", x.nrows(), x.ncols(), y.nrows(), y.ncols()),
            });
        }
        acc.gemm(1.0, x, &y.transpose(), 1.0);
    }
    Ok(acc / a.len() as f64)
}
