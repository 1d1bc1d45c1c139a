//! Scoring metrics and validation-split grid search for the smoother's
//! `(sigma, c)` and for baseline hyperparameters.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{BaselineSpec, Method};
use crate::error::{PesError, Result};
use crate::linalg::select_rows;
use crate::model::{IndexedDataset, PredictionSet, SplitAssignment};
use crate::smoother::{mix, nadaraya_watson_apply, SmootherSpec};

/// `num` points spaced evenly in log10 from `10^start` to `10^stop`.
pub fn logspace(start: f64, stop: f64, num: usize) -> Vec<f64> {
    linspace(start, stop, num).into_iter().map(|e| 10f64.powf(e)).collect()
}

/// `num` evenly spaced points from `start` to `stop` inclusive.
pub fn linspace(start: f64, stop: f64, num: usize) -> Vec<f64> {
    match num {
        0 => vec![],
        1 => vec![start],
        _ => {
            let step = (stop - start) / (num - 1) as f64;
            (0..num)
                .map(|i| if i == num - 1 { stop } else { start + step * i as f64 })
                .collect()
        }
    }
}

fn check_same_shape(y: &DMatrix<f64>, yhat: &DMatrix<f64>) -> Result<()> {
    if y.shape() != yhat.shape() {
        return Err(PesError::Shape {
            what: "predictions",
            expected: format!("{}x{}", y.nrows(), y.ncols()),
            got: format!("{}x{}", yhat.nrows(), yhat.ncols()),
        });
    }
    if y.is_empty() {
        return Err(PesError::EmptyInput("cannot score an empty set"));
    }
    Ok(())
}

/// Mean squared error over rows and label columns.
pub fn mse(y: &DMatrix<f64>, yhat: &DMatrix<f64>) -> Result<f64> {
    check_same_shape(y, yhat)?;
    Ok((yhat - y).norm_squared() / y.len() as f64)
}

/// `1 - sum (y - yhat)^2 / sum (y - mean y)^2`, optionally clipped at zero.
pub fn r_squared(y: &[f64], yhat: &[f64], clip_negative: bool) -> Result<f64> {
    if y.len() != yhat.len() {
        return Err(PesError::Shape {
            what: "predictions",
            expected: y.len().to_string(),
            got: yhat.len().to_string(),
        });
    }
    if y.len() < 2 {
        return Err(PesError::EmptyInput("R^2 needs at least two rows"));
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(PesError::InvalidParameter {
            name: "labels",
            reason: "R^2 is undefined for constant labels".into(),
        });
    }
    let ss_res: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b).powi(2)).sum();
    let r2 = 1.0 - ss_res / ss_tot;
    Ok(if clip_negative { r2.max(0.0) } else { r2 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Mse,
    R2,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Mse => "mse",
            Metric::R2 => "r2",
        }
    }

    /// MSE, or R^2 averaged over label columns.
    pub fn evaluate(self, y: &DMatrix<f64>, yhat: &DMatrix<f64>, clip_negative: bool) -> Result<f64> {
        match self {
            Metric::Mse => mse(y, yhat),
            Metric::R2 => {
                check_same_shape(y, yhat)?;
                let mut total = 0.0;
                for j in 0..y.ncols() {
                    let a: Vec<f64> = y.column(j).iter().copied().collect();
                    let b: Vec<f64> = yhat.column(j).iter().copied().collect();
                    total += r_squared(&a, &b, clip_negative)?;
                }
                Ok(total / y.ncols() as f64)
            }
        }
    }

    /// Whether `a` is strictly better than `b`.
    pub fn better(self, a: f64, b: f64) -> bool {
        match self {
            Metric::Mse => a < b,
            Metric::R2 => a > b,
        }
    }
}

/// Smoother search grid plus per-method baseline grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub sigma_values: Vec<f64>,
    pub c_values: Vec<f64>,
    #[serde(default = "yes")]
    pub robust: bool,
    #[serde(default)]
    pub baseline_grids: BTreeMap<Method, BTreeMap<String, Vec<f64>>>,
}

fn yes() -> bool {
    true
}

impl Default for GridSpec {
    /// `sigma` in `logspace(-4, 0, 5)`, `c` in `linspace(0, 1, 11)`, and each
    /// method's default grid.
    fn default() -> Self {
        Self {
            sigma_values: logspace(-4.0, 0.0, 5),
            c_values: linspace(0.0, 1.0, 11),
            robust: true,
            baseline_grids: Method::ALL.into_iter().map(|m| (m, m.default_grid())).collect(),
        }
    }
}

impl GridSpec {
    pub fn new(sigma_values: Vec<f64>, c_values: Vec<f64>, robust: bool) -> Result<Self> {
        let g = Self {
            sigma_values,
            c_values,
            robust,
            baseline_grids: BTreeMap::new(),
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigma_values.is_empty() || self.c_values.is_empty() {
            return Err(PesError::EmptyInput("smoothing grid needs at least one sigma and one c"));
        }
        if let Some(s) = self.sigma_values.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(PesError::InvalidParameter {
                name: "sigma_values",
                reason: format!("{s} is not a positive bandwidth"),
            });
        }
        if let Some(c) = self.c_values.iter().find(|c| !(0.0..=1.0).contains(*c)) {
            return Err(PesError::InvalidParameter {
                name: "c_values",
                reason: format!("{c} is outside [0, 1]"),
            });
        }
        if self.robust && !self.c_values.contains(&0.0) {
            return Err(PesError::InvalidParameter {
                name: "c_values",
                reason: "robust mode requires c = 0 in the grid".into(),
            });
        }
        for (m, g) in &self.baseline_grids {
            BaselineSpec::expand_grid(*m, g, 0)?;
        }
        Ok(())
    }

    pub fn num_cells(&self) -> usize {
        self.sigma_values.len() * self.c_values.len()
    }

    /// Baseline grid for `method`, falling back to its default.
    pub fn baseline_grid(&self, method: Method) -> BTreeMap<String, Vec<f64>> {
        self.baseline_grids
            .get(&method)
            .cloned()
            .unwrap_or_else(|| method.default_grid())
    }
}

/// Which rows the weight matrix spans when smoothing holdout predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothingScope {
    /// Validation and holdout rows together.
    #[default]
    Transductive,
    /// Validation rows during selection, holdout rows alone afterwards.
    HoldoutOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuneOptions {
    pub metric: Metric,
    pub scope: SmoothingScope,
    /// Clip negative holdout R^2 at zero when reporting. Selection always
    /// uses the raw value.
    pub clip_holdout_r2: bool,
}

impl Default for TuneOptions {
    fn default() -> Self {
        Self {
            metric: Metric::Mse,
            scope: SmoothingScope::Transductive,
            clip_holdout_r2: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellScore {
    pub sigma: f64,
    pub c: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneReport {
    pub metric: Metric,
    pub best_sigma: f64,
    pub best_c: f64,
    /// One entry per grid cell, sigma-major in grid order.
    pub validation_scores: Vec<CellScore>,
    pub best_validation_score: f64,
    pub unsmoothed_validation_score: f64,
    pub holdout_score: Option<f64>,
    pub unsmoothed_holdout_score: Option<f64>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "NA".into())
}

impl TuneReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["sigma", "c", "validation_score", "selected"])?;
        for cell in &self.validation_scores {
            let selected = cell.sigma == self.best_sigma && cell.c == self.best_c;
            w.write_record([
                cell.sigma.to_string(),
                cell.c.to_string(),
                cell.score.to_string(),
                (selected as u8).to_string(),
            ])?;
        }
        w.flush().map_err(|e| PesError::Csv(e.to_string()))
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "metric={} best_sigma={} best_c={} validation={} unsmoothed_validation={} holdout={} unsmoothed_holdout={}",
            self.metric.name(),
            self.best_sigma,
            self.best_c,
            self.best_validation_score,
            self.unsmoothed_validation_score,
            fmt_opt(self.holdout_score),
            fmt_opt(self.unsmoothed_holdout_score),
        );
        s
    }
}

/// Scores every `(sigma, c)` cell of the grid by smoothing all rows of
/// `predictions` over `indices` and scoring the rows `score_rows` against
/// `score_labels`. Returns the cells in grid order and the selected index.
///
/// Selection keeps the best score; exact ties go to the smaller `c`, then
/// the smaller `sigma`.
pub fn grid_search(
    indices: &DMatrix<f64>,
    predictions: &DMatrix<f64>,
    score_rows: &[usize],
    score_labels: &DMatrix<f64>,
    grid: &GridSpec,
    metric: Metric,
) -> Result<(Vec<CellScore>, usize)> {
    grid.validate()?;
    if score_rows.is_empty() {
        return Err(PesError::EmptyInput("no validation rows to score on"));
    }
    if score_labels.nrows() != score_rows.len() {
        return Err(PesError::Shape {
            what: "validation labels",
            expected: format!("{} rows", score_rows.len()),
            got: format!("{} rows", score_labels.nrows()),
        });
    }
    let original = select_rows(predictions, score_rows);
    let score_sigma = |sigma: f64| -> Result<Vec<CellScore>> {
        let needs_w = grid.c_values.iter().any(|&c| c != 0.0);
        let smoothed = if needs_w {
            select_rows(&nadaraya_watson_apply(indices, sigma, predictions)?, score_rows)
        } else {
            original.clone()
        };
        grid.c_values
            .iter()
            .map(|&c| {
                let yhat = mix(&smoothed, &original, c);
                Ok(CellScore {
                    sigma,
                    c,
                    score: metric.evaluate(score_labels, &yhat, false)?,
                })
            })
            .collect()
    };
    #[cfg(feature = "parallel")]
    let per_sigma: Vec<Result<Vec<CellScore>>> = grid.sigma_values.par_iter().map(|&s| score_sigma(s)).collect();
    #[cfg(not(feature = "parallel"))]
    let per_sigma: Vec<Result<Vec<CellScore>>> = grid.sigma_values.iter().map(|&s| score_sigma(s)).collect();
    let mut cells = Vec::with_capacity(grid.num_cells());
    for r in per_sigma {
        cells.extend(r?);
    }
    if let Some(bad) = cells.iter().find(|c| !c.score.is_finite()) {
        return Err(PesError::InvalidParameter {
            name: "grid",
            reason: format!("score is not finite at sigma={} c={}", bad.sigma, bad.c),
        });
    }
    let mut order: Vec<usize> = (0..cells.len()).collect();
    order.sort_by(|&a, &b| {
        cells[a]
            .c
            .total_cmp(&cells[b].c)
            .then(cells[a].sigma.total_cmp(&cells[b].sigma))
    });
    let mut best = order[0];
    for &k in &order[1..] {
        if metric.better(cells[k].score, cells[best].score) {
            best = k;
        }
    }
    Ok((cells, best))
}

/// Picks `(sigma, c)` on a fully labeled set, smoothing over all its rows.
pub fn select_smoother(p: &PredictionSet, grid: &GridSpec, metric: Metric) -> Result<(SmootherSpec, Vec<CellScore>)> {
    let labels = p.labels().ok_or(PesError::MissingLabels("smoother selection"))?;
    let rows: Vec<usize> = (0..p.len()).collect();
    let (cells, best) = grid_search(p.indices(), p.predictions(), &rows, labels, grid, metric)?;
    Ok((SmootherSpec::new(cells[best].sigma, cells[best].c)?, cells))
}

/// Tunes `(sigma, c)` on the validation rows of `p` and scores the selected
/// smoother on the holdout rows. Training rows are ignored.
pub fn tune_pes(p: &PredictionSet, split: &SplitAssignment, grid: &GridSpec, metric: Metric) -> Result<TuneReport> {
    let opts = TuneOptions {
        metric,
        ..TuneOptions::default()
    };
    let labels = p.labels().ok_or(PesError::MissingLabels("tuning"))?;
    let val_labels = select_rows(labels, &split.validation_rows);
    let holdout_labels = select_rows(labels, &split.holdout_rows);
    tune_pes_with(
        &p.without_labels(),
        &val_labels,
        (!split.holdout_rows.is_empty()).then_some(&holdout_labels),
        split,
        grid,
        &opts,
    )
}

/// Like [`tune_pes`], with labels supplied separately so rows without labels
/// can take part. `validation_labels` and `holdout_labels` follow the row
/// order of the split. Holdout labels are only consulted after selection.
pub fn tune_pes_with(
    p: &PredictionSet,
    validation_labels: &DMatrix<f64>,
    holdout_labels: Option<&DMatrix<f64>>,
    split: &SplitAssignment,
    grid: &GridSpec,
    opts: &TuneOptions,
) -> Result<TuneReport> {
    let val = &split.validation_rows;
    let hold = &split.holdout_rows;
    if val.is_empty() {
        return Err(PesError::EmptyInput("validation split is empty"));
    }
    let selection_rows: Vec<usize> = match opts.scope {
        SmoothingScope::Transductive => val.iter().chain(hold).copied().collect(),
        SmoothingScope::HoldoutOnly => val.clone(),
    };
    let sel_preds = select_rows(p.predictions(), &selection_rows);
    let sel_idx = select_rows(p.indices(), &selection_rows);
    let val_positions: Vec<usize> = (0..val.len()).collect();
    let (cells, best) = grid_search(&sel_idx, &sel_preds, &val_positions, validation_labels, grid, opts.metric)?;
    let best_cell = cells[best];
    let unsmoothed_validation_score =
        opts.metric
            .evaluate(validation_labels, &select_rows(p.predictions(), val), false)?;

    let (holdout_score, unsmoothed_holdout_score) = match holdout_labels {
        Some(hl) if !hold.is_empty() => {
            let spec = SmootherSpec::new(best_cell.sigma, best_cell.c)?;
            let smoothed_hold = match opts.scope {
                SmoothingScope::Transductive => {
                    let s = spec.apply(&PredictionSet::new(sel_preds, None, sel_idx)?)?;
                    let pos: Vec<usize> = (val.len()..selection_rows.len()).collect();
                    select_rows(s.predictions(), &pos)
                }
                SmoothingScope::HoldoutOnly => {
                    let s = spec.apply(&p.subset(hold))?;
                    s.predictions().clone()
                }
            };
            let clip = opts.clip_holdout_r2;
            (
                Some(opts.metric.evaluate(hl, &smoothed_hold, clip)?),
                Some(opts.metric.evaluate(hl, &select_rows(p.predictions(), hold), clip)?),
            )
        }
        _ => (None, None),
    };

    Ok(TuneReport {
        metric: opts.metric,
        best_sigma: best_cell.sigma,
        best_c: best_cell.c,
        best_validation_score: best_cell.score,
        validation_scores: cells,
        unsmoothed_validation_score,
        holdout_score,
        unsmoothed_holdout_score,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineTuneReport {
    pub best: BaselineSpec,
    pub best_index: usize,
    /// Validation score per grid entry; `Err` carries the fit failure.
    pub scores: Vec<std::result::Result<f64, String>>,
}

fn pick_first_best(metric: Metric, scores: &[std::result::Result<f64, String>], grid: &[BaselineSpec]) -> Result<usize> {
    let mut best: Option<usize> = None;
    for (k, s) in scores.iter().enumerate() {
        if let Ok(v) = s {
            if v.is_finite() && best.is_none_or(|b| metric.better(*v, *scores[b].as_ref().unwrap())) {
                best = Some(k);
            }
        }
    }
    best.ok_or_else(|| {
        let msg = scores
            .iter()
            .zip(grid)
            .map(|(s, g)| match s {
                Ok(v) => format!("{g}: non-finite score {v}"),
                Err(e) => format!("{g}: {e}"),
            })
            .collect::<Vec<_>>()
            .join("; ");
        PesError::AllFitsFailed(msg)
    })
}

fn eval_spec(spec: &BaselineSpec, train: &IndexedDataset, validation: &IndexedDataset, metric: Metric) -> std::result::Result<f64, String> {
    let yhat = spec
        .fit_predict(train, validation.features(), validation.indices())
        .map_err(|e| e.to_string())?;
    metric.evaluate(validation.labels(), &yhat, false).map_err(|e| e.to_string())
}

fn map_grid<F>(grid: &[BaselineSpec], f: F) -> Vec<std::result::Result<f64, String>>
where
    F: Fn(&BaselineSpec) -> std::result::Result<f64, String> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    return grid.par_iter().map(f).collect();
    #[cfg(not(feature = "parallel"))]
    return grid.iter().map(f).collect();
}

/// Fits each candidate on `train`, scores it on `validation` and returns the
/// best one, the first in grid order on ties.
pub fn tune_baseline(
    train: &IndexedDataset,
    validation: &IndexedDataset,
    grid: &[BaselineSpec],
    metric: Metric,
) -> Result<BaselineTuneReport> {
    if grid.is_empty() {
        return Err(PesError::EmptyInput("baseline grid is empty"));
    }
    let scores = map_grid(grid, |s| eval_spec(s, train, validation, metric));
    let best_index = pick_first_best(metric, &scores, grid)?;
    Ok(BaselineTuneReport {
        best: grid[best_index].clone(),
        best_index,
        scores,
    })
}

/// k-fold variant of [`tune_baseline`]: rows are shuffled with `seed`, each
/// candidate's score is its mean over folds, and a failure in any fold marks
/// the candidate as failed.
pub fn tune_baseline_kfold(
    data: &IndexedDataset,
    grid: &[BaselineSpec],
    metric: Metric,
    k: usize,
    seed: u64,
) -> Result<BaselineTuneReport> {
    if grid.is_empty() {
        return Err(PesError::EmptyInput("baseline grid is empty"));
    }
    if k < 2 || k > data.len() {
        return Err(PesError::InvalidParameter {
            name: "folds",
            reason: format!("need 2 <= k <= {} rows, got {k}", data.len()),
        });
    }
    let mut rows: Vec<usize> = (0..data.len()).collect();
    rows.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = Vec::with_capacity(k);
    for f in 0..k {
        let held: Vec<usize> = rows.iter().copied().skip(f).step_by(k).collect();
        let kept: Vec<usize> = rows
            .iter()
            .enumerate()
            .filter(|(i, _)| i % k != f)
            .map(|(_, r)| *r)
            .collect();
        folds.push((data.subset(&kept)?, data.subset(&held)?));
    }
    let scores = map_grid(grid, |s| {
        let mut total = 0.0;
        for (tr, va) in &folds {
            total += eval_spec(s, tr, va, metric)?;
        }
        Ok(total / k as f64)
    });
    let best_index = pick_first_best(metric, &scores, grid)?;
    Ok(BaselineTuneReport {
        best: grid[best_index].clone(),
        best_index,
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn col(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    #[test]
    fn metric_examples() {
        assert_eq!(mse(&col(&[1.0, 2.0]), &col(&[1.0, 2.0])).unwrap(), 0.0);
        assert_eq!(mse(&col(&[0.0, 0.0]), &col(&[1.0, 1.0])).unwrap(), 1.0);
        assert!((mse(&col(&[1.0, 2.0, 3.0]), &col(&[2.0, 2.0, 2.0])).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(mse(&col(&[1.0]), &col(&[1.0, 2.0])).is_err());

        assert_eq!(r_squared(&[1.0, 2.0, 4.0], &[1.0, 2.0, 4.0], false).unwrap(), 1.0);
        assert!(r_squared(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0], false).unwrap().abs() < 1e-15);
        assert_eq!(r_squared(&[0.0, 1.0], &[1.0, 0.0], false).unwrap(), -3.0);
        assert_eq!(r_squared(&[0.0, 1.0], &[1.0, 0.0], true).unwrap(), 0.0);
        assert!(r_squared(&[2.0, 2.0], &[1.0, 0.0], false).is_err());
    }

    #[test]
    fn spaced_grids() {
        assert_eq!(logspace(-4.0, 0.0, 5), vec![1e-4, 1e-3, 1e-2, 1e-1, 1.0]);
        let c = linspace(0.0, 1.0, 11);
        assert_eq!(c.len(), 11);
        assert_eq!((c[0], c[10]), (0.0, 1.0));
        assert!((c[3] - 0.3).abs() < 1e-15);
        assert_eq!(GridSpec::default().num_cells(), 55);
    }

    #[test]
    fn grid_validation() {
        assert!(GridSpec::new(vec![1.0], vec![0.5], true).is_err());
        assert!(GridSpec::new(vec![1.0], vec![0.5], false).is_ok());
        assert!(GridSpec::new(vec![0.0], vec![0.0], true).is_err());
        assert!(GridSpec::new(vec![], vec![0.0], true).is_err());
        assert!(GridSpec::new(vec![1.0], vec![1.5], false).is_err());
    }

    fn noisy_signal(seed: u64, n: usize) -> PredictionSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = DMatrix::from_fn(n, 1, |i, _| i as f64 / n as f64);
        let y = t.map(|v| (6.0 * v).sin());
        let yhat = DMatrix::from_fn(n, 1, |i, _| y[(i, 0)] + rng.random_range(-0.5..0.5));
        PredictionSet::new(yhat, Some(y), t).unwrap()
    }

    fn alternating_split(n: usize) -> SplitAssignment {
        let val = (0..n).filter(|i| i % 2 == 0).collect();
        let hold = (0..n).filter(|i| i % 2 == 1).collect();
        SplitAssignment::new(vec![], val, hold, n).unwrap()
    }

    #[test]
    fn smoothing_helps_noisy_signal() {
        let p = noisy_signal(1, 200);
        let r = tune_pes(&p, &alternating_split(200), &GridSpec::default(), Metric::Mse).unwrap();
        assert!(r.best_c > 0.0);
        assert_eq!(r.validation_scores.len(), 55);
        assert!(r.holdout_score.unwrap() < r.unsmoothed_holdout_score.unwrap());
    }

    #[test]
    fn perfect_predictions_keep_c_zero() {
        let p = noisy_signal(2, 40);
        let exact = p.with_predictions(p.labels().unwrap().clone()).unwrap();
        let r = tune_pes(&exact, &alternating_split(40), &GridSpec::default(), Metric::Mse).unwrap();
        assert_eq!(r.best_c, 0.0);
        assert_eq!(r.best_sigma, 1e-4);
        assert_eq!(r.holdout_score, Some(0.0));
    }

    #[test]
    fn identity_grid_reproduces_unsmoothed_holdout() {
        let p = noisy_signal(3, 30);
        let g = GridSpec::new(vec![1.0], vec![0.0], true).unwrap();
        let r = tune_pes(&p, &alternating_split(30), &g, Metric::R2).unwrap();
        assert_eq!(r.holdout_score, r.unsmoothed_holdout_score);
    }

    #[test]
    fn holdout_labels_do_not_affect_selection() {
        let p = noisy_signal(4, 60);
        let split = alternating_split(60);
        let a = tune_pes(&p, &split, &GridSpec::default(), Metric::Mse).unwrap();
        let mut labels = p.labels().unwrap().clone();
        for &r in &split.holdout_rows {
            labels[(r, 0)] = 1e3;
        }
        let b = tune_pes(&PredictionSet::new(p.predictions().clone(), Some(labels), p.indices().clone()).unwrap(), &split, &GridSpec::default(), Metric::Mse).unwrap();
        assert_eq!(a.validation_scores, b.validation_scores);
        assert_eq!((a.best_sigma, a.best_c), (b.best_sigma, b.best_c));
    }

    #[test]
    fn holdout_only_scope_and_single_row() {
        let p = noisy_signal(5, 50);
        let opts = TuneOptions {
            scope: SmoothingScope::HoldoutOnly,
            ..TuneOptions::default()
        };
        let split = alternating_split(50);
        let l = p.labels().unwrap();
        let r = tune_pes_with(&p.without_labels(), &select_rows(l, &split.validation_rows), Some(&select_rows(l, &split.holdout_rows)), &split, &GridSpec::default(), &opts).unwrap();
        assert!(r.holdout_score.is_some());

        let one = SplitAssignment::new(vec![], vec![0], vec![], 1).unwrap();
        let p1 = PredictionSet::new(col(&[2.0]), Some(col(&[1.0])), col(&[0.0])).unwrap();
        let r = tune_pes(&p1, &one, &GridSpec::default(), Metric::Mse).unwrap();
        assert_eq!(r.best_validation_score, 1.0);
        assert_eq!(r.holdout_score, None);

        let none = SplitAssignment::new(vec![0], vec![], vec![], 1).unwrap();
        assert!(tune_pes(&p1, &none, &GridSpec::default(), Metric::Mse).is_err());
    }

    #[test]
    fn report_csv_has_one_row_per_cell() {
        let p = noisy_signal(6, 20);
        let r = tune_pes(&p, &alternating_split(20), &GridSpec::default(), Metric::Mse).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 56);
        assert_eq!(text.lines().filter(|l| l.ends_with(",1")).count(), 1);
        assert!(r.summary().contains("best_c="));
    }

    fn linear_data(seed: u64, n: usize, noise: f64) -> IndexedDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
        let y = DMatrix::from_fn(n, 1, |i, _| 2.0 * x[(i, 0)] - x[(i, 1)] + 0.5 + noise * rng.random_range(-1.0..1.0));
        IndexedDataset::new(x.clone(), y, x).unwrap()
    }

    fn ridge_grid(lams: &[f64]) -> Vec<BaselineSpec> {
        let mut g = BTreeMap::new();
        g.insert("lambda".to_string(), lams.to_vec());
        BaselineSpec::expand_grid(Method::Ridge, &g, 0).unwrap()
    }

    #[test]
    fn baseline_tuning_examples() {
        let tr = linear_data(1, 30, 0.0);
        let va = linear_data(2, 20, 0.0);
        let grid = ridge_grid(&[1e-6, 1e-2, 1.0, 100.0]);
        let r = tune_baseline(&tr, &va, &grid, Metric::R2).unwrap();
        assert_eq!(r.best_index, 0);
        let single = ridge_grid(&[3.0]);
        assert_eq!(tune_baseline(&tr, &va, &single, Metric::Mse).unwrap().best, single[0]);
        assert!(tune_baseline(&tr, &va, &[], Metric::Mse).is_err());

        let tr = linear_data(3, 25, 2.0);
        let va = linear_data(4, 25, 2.0);
        let grid = ridge_grid(&logspace(-6.0, 4.0, 11));
        let r = tune_baseline(&tr, &va, &grid, Metric::Mse).unwrap();
        let mut best = (0, f64::INFINITY);
        for (k, s) in grid.iter().enumerate() {
            let yhat = s.fit_predict(&tr, va.features(), va.indices()).unwrap();
            let e = mse(va.labels(), &yhat).unwrap();
            if e < best.1 {
                best = (k, e);
            }
        }
        assert_eq!(r.best_index, best.0);
    }

    #[test]
    fn all_failures_are_aggregated() {
        let tr = IndexedDataset::new(col(&[0.0]), col(&[1.0]), col(&[0.0])).unwrap();
        let va = IndexedDataset::new(col(&[1.0, 50.0]), col(&[1.0, 2.0]), col(&[1.0, 50.0])).unwrap();
        let mut g = BTreeMap::new();
        g.insert("sigma_graph".to_string(), vec![0.01, 0.02]);
        g.insert("eta".to_string(), vec![1.0]);
        let grid = BaselineSpec::expand_grid(Method::Hem, &g, 0).unwrap();
        match tune_baseline(&tr, &va, &grid, Metric::Mse) {
            Err(PesError::AllFitsFailed(msg)) => assert_eq!(msg.matches("hem(").count(), 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn kfold_is_deterministic() {
        let d = linear_data(9, 40, 0.3);
        let grid = ridge_grid(&logspace(-4.0, 2.0, 4));
        let a = tune_baseline_kfold(&d, &grid, Metric::Mse, 5, 11).unwrap();
        let b = tune_baseline_kfold(&d, &grid, Metric::Mse, 5, 11).unwrap();
        assert_eq!(a, b);
        assert!(tune_baseline_kfold(&d, &grid, Metric::Mse, 1, 11).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn tuned_never_worse_on_validation(seed in 0u64..1000, n in 2usize..40) {
            let p = noisy_signal(seed, n);
            let split = alternating_split(n);
            for metric in [Metric::Mse, Metric::R2] {
                if let Ok(r) = tune_pes(&p, &split, &GridSpec::default(), metric) {
                    prop_assert!(!metric.better(r.unsmoothed_validation_score, r.best_validation_score));
                }
            }
        }

        #[test]
        fn mse_and_r2_agree(seed in 0u64..1000) {
            let p = noisy_signal(seed, 30);
            let split = alternating_split(30);
            let a = tune_pes(&p, &split, &GridSpec::default(), Metric::Mse).unwrap();
            let b = tune_pes(&p, &split, &GridSpec::default(), Metric::R2).unwrap();
            prop_assert_eq!((a.best_sigma, a.best_c), (b.best_sigma, b.best_c));
        }
    }
}
