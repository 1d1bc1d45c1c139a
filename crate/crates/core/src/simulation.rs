//! Example 1 of the errors-in-variables study: a hidden Gaussian process `z`
//! observed as `x = z + omega` and `y = c z + mu`, a coefficient fitted by
//! TLS or OLS, and the MSE of the resulting predictions before smoothing,
//! after the analytic optimal smoother, and after a tuned shrinkage smoother.

use std::sync::{Arc, OnceLock};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PesError, Result};
use crate::linalg::{check_finite, check_square, check_symmetric, lower_times, trace_of_inverse, PSD_TOL};
use crate::model::{CovarianceBundle, PredictionSet};
use crate::tuning::{linspace, logspace, mse, select_smoother, GridSpec, Metric};

/// Covariance of the hidden process over the grid `t_i = i / (n - 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KzzSpec {
    /// `variance * exp(-(t_i - t_j)^2 / (2 length_scale^2))`.
    Rbf {
        #[serde(default = "one")]
        variance: f64,
        #[serde(default = "tenth")]
        length_scale: f64,
    },
    /// `variance` within each of `blocks` contiguous equal-width blocks, zero
    /// across blocks.
    Block {
        blocks: usize,
        #[serde(default = "one")]
        variance: f64,
    },
    /// An explicit `n x n` matrix given row by row.
    Matrix { values: Vec<Vec<f64>> },
}

fn one() -> f64 {
    1.0
}

fn tenth() -> f64 {
    0.1
}

impl Default for KzzSpec {
    fn default() -> Self {
        KzzSpec::Rbf {
            variance: 1.0,
            length_scale: 0.1,
        }
    }
}

impl KzzSpec {
    fn validate(&self, n: usize) -> Result<()> {
        let bad = |name: &'static str, reason: String| Err(PesError::InvalidParameter { name, reason });
        match self {
            KzzSpec::Rbf { variance, length_scale } => {
                if !(variance.is_finite() && *variance >= 0.0) {
                    return bad("kzz.variance", format!("must be nonnegative, got {variance}"));
                }
                if !(length_scale.is_finite() && *length_scale > 0.0) {
                    return bad("kzz.length_scale", format!("must be positive, got {length_scale}"));
                }
            }
            KzzSpec::Block { blocks, variance } => {
                if *blocks == 0 || *blocks > n {
                    return bad("kzz.blocks", format!("must lie in 1..={n}, got {blocks}"));
                }
                if !(variance.is_finite() && *variance >= 0.0) {
                    return bad("kzz.variance", format!("must be nonnegative, got {variance}"));
                }
            }
            KzzSpec::Matrix { values } => {
                if values.len() != n || values.iter().any(|r| r.len() != n) {
                    return bad("kzz.values", format!("must be {n}x{n}"));
                }
            }
        }
        Ok(())
    }

    /// Dense `K_zz` over `n` grid points.
    pub fn matrix(&self, n: usize) -> Result<DMatrix<f64>> {
        self.validate(n)?;
        let t = index_grid(n);
        let k = match self {
            KzzSpec::Rbf { variance, length_scale } => {
                let inv = 1.0 / (2.0 * length_scale * length_scale);
                DMatrix::from_fn(n, n, |i, j| variance * (-(t[i] - t[j]).powi(2) * inv).exp())
            }
            KzzSpec::Block { blocks, variance } => {
                DMatrix::from_fn(n, n, |i, j| if block_of(i, n, *blocks) == block_of(j, n, *blocks) { *variance } else { 0.0 })
            }
            KzzSpec::Matrix { values } => DMatrix::from_fn(n, n, |i, j| values[i][j]),
        };
        check_finite("K_zz", &k)?;
        check_symmetric("K_zz", &k)?;
        Ok(k)
    }
}

fn block_of(i: usize, n: usize, blocks: usize) -> usize {
    i * blocks / n
}

/// Evenly spaced grid on `[0, 1]`.
pub fn index_grid(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.0];
    }
    (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    #[default]
    Tls,
    Ols,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::Tls => "tls",
            Estimator::Ols => "ols",
        }
    }
}

/// One simulation cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub n: usize,
    #[serde(default = "one")]
    pub c_sig: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    #[serde(default)]
    pub kzz: KzzSpec,
    #[serde(default)]
    pub estimator: Estimator,
    #[serde(default = "ten")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
}

fn ten() -> usize {
    10
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |name: &'static str, reason: String| Err(PesError::InvalidParameter { name, reason });
        if self.n < 2 {
            return bad("n", format!("must be at least 2, got {}", self.n));
        }
        if self.trials == 0 {
            return bad("trials", "must be at least 1".into());
        }
        if !self.c_sig.is_finite() {
            return bad("c_sig", format!("must be finite, got {}", self.c_sig));
        }
        if !(self.sigma_x.is_finite() && self.sigma_x >= 0.0) {
            return bad("sigma_x", format!("must be nonnegative, got {}", self.sigma_x));
        }
        if !(self.sigma_y.is_finite() && self.sigma_y >= 0.0) {
            return bad("sigma_y", format!("must be nonnegative, got {}", self.sigma_y));
        }
        self.kzz.validate(self.n)
    }

    /// Noise ratio `sigma_y^2 / sigma_x^2` used by the TLS fit.
    pub fn noise_ratio(&self) -> f64 {
        match (self.sigma_x == 0.0, self.sigma_y == 0.0) {
            (true, true) => 1.0,
            (true, false) => f64::INFINITY,
            _ => (self.sigma_y / self.sigma_x).powi(2),
        }
    }
}

/// A list of values or a single value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

/// Cartesian sweep over noise levels and estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub n: usize,
    #[serde(default = "one")]
    pub c_sig: f64,
    pub sigma_x: OneOrMany<f64>,
    pub sigma_y: OneOrMany<f64>,
    #[serde(default)]
    pub kzz: KzzSpec,
    #[serde(default = "tls_only")]
    pub estimator: OneOrMany<Estimator>,
    #[serde(default = "ten")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
}

fn tls_only() -> OneOrMany<Estimator> {
    OneOrMany::One(Estimator::Tls)
}

impl SweepSpec {
    /// Cells ordered by estimator, then `sigma_y`, then `sigma_x`.
    pub fn cells(&self) -> Result<Vec<SimConfig>> {
        let (xs, ys, es) = (self.sigma_x.to_vec(), self.sigma_y.to_vec(), self.estimator.to_vec());
        for (name, empty) in [("sigma_x", xs.is_empty()), ("sigma_y", ys.is_empty()), ("estimator", es.is_empty())] {
            if empty {
                return Err(PesError::InvalidParameter {
                    name,
                    reason: "sweep list is empty".into(),
                });
            }
        }
        let mut out = Vec::new();
        for &estimator in &es {
            for &sigma_y in &ys {
                for &sigma_x in &xs {
                    let cfg = SimConfig {
                        n: self.n,
                        c_sig: self.c_sig,
                        sigma_x,
                        sigma_y,
                        kzz: self.kzz.clone(),
                        estimator,
                        trials: self.trials,
                        seed: self.seed,
                    };
                    cfg.validate()?;
                    out.push(cfg);
                }
            }
        }
        Ok(out)
    }
}

enum Root {
    Lower(DMatrix<f64>),
    Full(DMatrix<f64>),
    Blocks { blocks: usize, sd: f64 },
}

/// `K_zz` together with a square root for sampling.
pub struct HiddenCovariance {
    spec: KzzSpec,
    n: usize,
    kzz: OnceLock<DMatrix<f64>>,
    root: Root,
}

impl std::fmt::Debug for HiddenCovariance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HiddenCovariance")
            .field("spec", &self.spec)
            .field("n", &self.n)
            .finish()
    }
}

impl HiddenCovariance {
    /// Factorises `K_zz + jitter I` with `jitter = 1e-10 tr(K_zz) / n`,
    /// falling back to an eigendecomposition when Cholesky fails.
    pub fn new(n: usize, spec: &KzzSpec) -> Result<Self> {
        let kzz = OnceLock::new();
        let root = match spec {
            KzzSpec::Block { blocks, variance } => {
                spec.validate(n)?;
                Root::Blocks {
                    blocks: *blocks,
                    sd: variance.sqrt(),
                }
            }
            _ => {
                let k = spec.matrix(n)?;
                let jitter = 1e-10 * k.trace() / n as f64;
                let mut kj = k.clone();
                for i in 0..n {
                    kj[(i, i)] += jitter;
                }
                let root = match Cholesky::new(kj) {
                    Some(ch) => Root::Lower(ch.unpack()),
                    None => {
                        let eig = SymmetricEigen::new(k.clone());
                        let max = eig.eigenvalues.max().max(0.0);
                        let min = eig.eigenvalues.min();
                        if min < -PSD_TOL * max.max(f64::MIN_POSITIVE) {
                            return Err(PesError::NotPsd {
                                what: "K_zz",
                                detail: format!("smallest eigenvalue {min:.3e} against largest {max:.3e}"),
                            });
                        }
                        let scale = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
                        Root::Full(&eig.eigenvectors * DMatrix::from_diagonal(&scale))
                    }
                };
                let _ = kzz.set(k);
                root
            }
        };
        Ok(Self {
            spec: spec.clone(),
            n,
            kzz,
            root,
        })
    }

    pub fn spec(&self) -> &KzzSpec {
        &self.spec
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Dense `K_zz`; built on first use for block covariances.
    pub fn matrix(&self) -> &DMatrix<f64> {
        self.kzz
            .get_or_init(|| self.spec.matrix(self.n).expect("validated on construction"))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let n = self.n();
        match &self.root {
            Root::Blocks { blocks, sd } => {
                let levels: Vec<f64> = (0..*blocks).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect();
                DVector::from_fn(n, |i, _| levels[block_of(i, n, *blocks)])
            }
            Root::Lower(l) => lower_times(l, &standard_normal(n, rng)),
            Root::Full(r) => r * standard_normal(n, rng),
        }
    }
}

fn standard_normal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example1Draw {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub z: DVector<f64>,
}

/// The generative model of one cell.
#[derive(Debug, Clone)]
pub struct Example1Process {
    cov: Arc<HiddenCovariance>,
    c_sig: f64,
    sigma_x: f64,
    sigma_y: f64,
}

impl Example1Process {
    pub fn new(cfg: &SimConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self::with_covariance(cfg, Arc::new(HiddenCovariance::new(cfg.n, &cfg.kzz)?)))
    }

    pub fn with_covariance(cfg: &SimConfig, cov: Arc<HiddenCovariance>) -> Self {
        Self {
            cov,
            c_sig: cfg.c_sig,
            sigma_x: cfg.sigma_x,
            sigma_y: cfg.sigma_y,
        }
    }

    pub fn covariance(&self) -> &HiddenCovariance {
        &self.cov
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Example1Draw {
        let z = self.cov.sample(rng);
        let n = z.len();
        let omega = standard_normal(n, rng) * self.sigma_x;
        let mu = standard_normal(n, rng) * self.sigma_y;
        Example1Draw {
            x: &z + omega,
            y: &z * self.c_sig + mu,
            z,
        }
    }
}

/// Random stream for trial `trial` of a cell seeded with `seed`.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// The training draw of trial `trial`.
pub fn generate_example1(cfg: &SimConfig, trial: u64) -> Result<Example1Draw> {
    let p = Example1Process::new(cfg)?;
    Ok(p.draw(&mut trial_rng(cfg.seed, trial)))
}

fn moments(x: &DVector<f64>, y: &DVector<f64>) -> Result<(f64, f64, f64)> {
    if x.len() != y.len() {
        return Err(PesError::Shape {
            what: "y",
            expected: x.len().to_string(),
            got: y.len().to_string(),
        });
    }
    if x.len() < 2 {
        return Err(PesError::EmptyInput("regression needs at least two points"));
    }
    Ok((x.dot(x), y.dot(y), x.dot(y)))
}

/// Orthogonal total least squares slope of `y` on `x` (no intercept).
pub fn tls_coefficient(x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
    tls_coefficient_weighted(x, y, 1.0)
}

/// Errors-in-variables slope when the error variance ratio
/// `delta = var(y noise) / var(x noise)` is known. `delta = 1` is orthogonal
/// TLS; `delta = inf` reduces to OLS and `delta = 0` to `y'y / x'y`.
pub fn tls_coefficient_weighted(x: &DVector<f64>, y: &DVector<f64>, delta: f64) -> Result<f64> {
    if !(delta >= 0.0) {
        return Err(PesError::InvalidParameter {
            name: "delta",
            reason: format!("must be nonnegative, got {delta}"),
        });
    }
    let (sxx, syy, sxy) = moments(x, y)?;
    if sxx == 0.0 && syy == 0.0 {
        return Err(PesError::DegenerateTls("x and y are both identically zero"));
    }
    if delta.is_infinite() {
        return ols_coefficient(x, y);
    }
    if delta == 0.0 {
        if sxy == 0.0 {
            return Err(PesError::DegenerateTls("x'y = 0 with noiseless y"));
        }
        return Ok(syy / sxy);
    }
    let d = syy - delta * sxx;
    let r = (d * d + 4.0 * delta * sxy * sxy).sqrt();
    if d >= 0.0 {
        if sxy == 0.0 {
            return Err(PesError::DegenerateTls("fitted line is vertical or undetermined"));
        }
        Ok((d + r) / (2.0 * sxy))
    } else {
        Ok(2.0 * delta * sxy / (r - d))
    }
}

/// `x'y / x'x`.
pub fn ols_coefficient(x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
    let (sxx, _, sxy) = moments(x, y)?;
    if sxx == 0.0 {
        return Err(PesError::InvalidParameter {
            name: "x",
            reason: "x is identically zero".into(),
        });
    }
    Ok(sxy / sxx)
}

/// Fits the configured estimator.
pub fn fit_coefficient(cfg: &SimConfig, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
    match cfg.estimator {
        Estimator::Tls => tls_coefficient_weighted(x, y, cfg.noise_ratio()),
        Estimator::Ols => ols_coefficient(x, y),
    }
}

/// Cholesky of `K_zz + sigma_x^2 I`, or `None` when `sigma_x = 0`.
fn noisy_gram_factor(kzz: &DMatrix<f64>, sigma_x: f64) -> Result<Option<Cholesky<f64, Dyn>>> {
    if sigma_x == 0.0 {
        return Ok(None);
    }
    let mut m = kzz.clone();
    for i in 0..m.nrows() {
        m[(i, i)] += sigma_x * sigma_x;
    }
    Cholesky::new(m)
        .map(Some)
        .ok_or(PesError::Singular { what: "K_zz + sigma_x^2 I" })
}

fn oracle_scale(c_sig: f64, e_chat: f64, e_chat_sq: f64) -> Result<f64> {
    if !(e_chat_sq > 0.0) {
        if c_sig == 0.0 && e_chat == 0.0 {
            return Ok(0.0);
        }
        return Err(PesError::InvalidParameter {
            name: "e_chat_sq",
            reason: format!("must be positive, got {e_chat_sq}"),
        });
    }
    Ok(c_sig * e_chat / e_chat_sq)
}

/// `S* = (c E[c_hat] / E[c_hat^2]) K_zz (K_zz + sigma_x^2 I)^{-1}`.
pub fn analytic_oracle_smoother(cfg: &SimConfig, e_chat: f64, e_chat_sq: f64) -> Result<DMatrix<f64>> {
    cfg.validate()?;
    let scale = oracle_scale(cfg.c_sig, e_chat, e_chat_sq)?;
    let kzz = cfg.kzz.matrix(cfg.n)?;
    match noisy_gram_factor(&kzz, cfg.sigma_x)? {
        None => Ok(DMatrix::identity(cfg.n, cfg.n) * scale),
        // K and (K + s I)^{-1} commute, so S* = scale (K + s I)^{-1} K
        Some(ch) => Ok(ch.solve(&kzz) * scale),
    }
}

/// Covariances of labels and residuals of `c_hat x` on a fresh draw, with
/// `E[c_hat] = e_chat` and `E[c_hat^2] = e_chat_sq`.
pub fn example1_covariance_bundle(cfg: &SimConfig, e_chat: f64, e_chat_sq: f64) -> Result<CovarianceBundle> {
    cfg.validate()?;
    let n = cfg.n;
    let k = cfg.kzz.matrix(n)?;
    let id = DMatrix::<f64>::identity(n, n);
    let c = cfg.c_sig;
    let k_yy = &k * (c * c) + &id * cfg.sigma_y.powi(2);
    let k_yhat_y = &k * (c * e_chat);
    let k_yhat_yhat = (&k + &id * cfg.sigma_x.powi(2)) * e_chat_sq;
    let k_ye = &k_yhat_y - &k_yy;
    let k_ee = &k_yhat_yhat - &k_yhat_y * 2.0 + &k_yy;
    CovarianceBundle::new(k_yy, k_ee, k_ye)
}

/// Asymptotic TLS prediction MSE before and after the optimal smoother:
/// `sigma_y^2 + c^2 sigma_x^2` and
/// `sigma_y^2 + c^2 sigma_x^2 (1 - tr((K_zz / sigma_x^2 + I)^{-1}) / n)`.
pub fn predicted_mse(cfg: &SimConfig) -> Result<(f64, f64)> {
    cfg.validate()?;
    let kzz = cfg.kzz.matrix(cfg.n)?;
    predicted_from_factor(cfg, noisy_gram_factor(&kzz, cfg.sigma_x)?.as_ref())
}

fn predicted_from_factor(cfg: &SimConfig, factor: Option<&Cholesky<f64, Dyn>>) -> Result<(f64, f64)> {
    let floor = cfg.sigma_y.powi(2);
    let removable = (cfg.c_sig * cfg.sigma_x).powi(2);
    let Some(ch) = factor else {
        return Ok((floor, floor));
    };
    // tr((K / s + I)^{-1}) = s tr((K + s I)^{-1})
    let frac = (cfg.sigma_x.powi(2) * trace_of_inverse(ch) / cfg.n as f64).clamp(0.0, 1.0);
    Ok((floor + removable, floor + removable * (1.0 - frac)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    /// Standard error of the mean; zero for a single value.
    pub se: f64,
}

pub fn summarize(v: &[f64]) -> Summary {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let se = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
    } else {
        0.0
    };
    Summary {
        mean,
        min: v.iter().copied().fold(f64::INFINITY, f64::min),
        max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        se,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub config: SimConfig,
    pub c_hat: Vec<f64>,
    pub mse_unsmoothed: Vec<f64>,
    pub mse_oracle_smoothed: Vec<f64>,
    pub mse_pes_smoothed: Vec<f64>,
    pub pes_sigma: Vec<f64>,
    pub pes_c: Vec<f64>,
    pub predicted_unsmoothed: f64,
    pub predicted_smoothed: f64,
    pub floor_sigma_y_sq: f64,
}

impl SimResult {
    pub fn unsmoothed(&self) -> Summary {
        summarize(&self.mse_unsmoothed)
    }

    pub fn oracle(&self) -> Summary {
        summarize(&self.mse_oracle_smoothed)
    }

    pub fn pes(&self) -> Summary {
        summarize(&self.mse_pes_smoothed)
    }

    pub fn c_hat_summary(&self) -> Summary {
        summarize(&self.c_hat)
    }
}

/// Smoothing grid used inside simulation cells.
pub fn simulation_grid() -> GridSpec {
    GridSpec {
        sigma_values: logspace(-4.0, 0.0, 5),
        c_values: linspace(0.0, 1.0, 11),
        robust: true,
        baseline_grids: Default::default(),
    }
}

struct Trial {
    c_hat: f64,
    yhat: DVector<f64>,
    y: DVector<f64>,
    unsmoothed: f64,
    pes: f64,
    pes_sigma: f64,
    pes_c: f64,
}

fn col(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v.as_slice())
}

fn run_trial(cfg: &SimConfig, process: &Example1Process, t: &DMatrix<f64>, grid: &GridSpec, trial: u64) -> Result<Trial> {
    let mut rng = trial_rng(cfg.seed, trial);
    let train = process.draw(&mut rng);
    let val = process.draw(&mut rng);
    let test = process.draw(&mut rng);
    let c_hat = fit_coefficient(cfg, &train.x, &train.y)?;

    let val_p = PredictionSet::new(col(&(&val.x * c_hat)), Some(col(&val.y)), t.clone())?;
    let (spec, _) = select_smoother(&val_p, grid, Metric::Mse)?;
    let yhat = &test.x * c_hat;
    let y_mat = col(&test.y);
    let test_p = PredictionSet::new(col(&yhat), None, t.clone())?;
    let unsmoothed = mse(&y_mat, test_p.predictions())?;
    let pes = mse(&y_mat, spec.apply(&test_p)?.predictions())?;
    Ok(Trial {
        c_hat,
        yhat,
        y: test.y,
        unsmoothed,
        pes,
        pes_sigma: spec.sigma(),
        pes_c: spec.c(),
    })
}

/// Runs every trial of one cell.
///
/// Trials share nothing but the seed, so the result does not depend on
/// thread scheduling. Cells with the same seed see the same standard normal
/// draws.
pub fn run_cell(cfg: &SimConfig) -> Result<SimResult> {
    cfg.validate()?;
    let cov = Arc::new(HiddenCovariance::new(cfg.n, &cfg.kzz)?);
    run_cell_with(cfg, cov, &simulation_grid())
}

pub fn run_cell_with(cfg: &SimConfig, cov: Arc<HiddenCovariance>, grid: &GridSpec) -> Result<SimResult> {
    cfg.validate()?;
    check_square("K_zz", cov.matrix(), cfg.n)?;
    let process = Example1Process::with_covariance(cfg, cov.clone());
    let t = DMatrix::from_column_slice(cfg.n, 1, &index_grid(cfg.n));

    let one = |k: usize| run_trial(cfg, &process, &t, grid, k as u64);
    #[cfg(feature = "parallel")]
    let trials: Vec<Result<Trial>> = (0..cfg.trials).into_par_iter().map(one).collect();
    #[cfg(not(feature = "parallel"))]
    let trials: Vec<Result<Trial>> = (0..cfg.trials).map(one).collect();
    let trials = trials.into_iter().collect::<Result<Vec<_>>>()?;

    let m = trials.len() as f64;
    let (e_chat, e_chat_sq) = match cfg.estimator {
        Estimator::Tls => (cfg.c_sig, cfg.c_sig * cfg.c_sig),
        Estimator::Ols => (
            trials.iter().map(|r| r.c_hat).sum::<f64>() / m,
            trials.iter().map(|r| r.c_hat * r.c_hat).sum::<f64>() / m,
        ),
    };
    let scale = oracle_scale(cfg.c_sig, e_chat, e_chat_sq)?;
    let factor = noisy_gram_factor(cov.matrix(), cfg.sigma_x)?;
    let oracle = |r: &Trial| -> f64 {
        let smoothed = match &factor {
            None => &r.yhat * scale,
            Some(ch) => cov.matrix() * ch.solve(&r.yhat) * scale,
        };
        (smoothed - &r.y).norm_squared() / cfg.n as f64
    };
    #[cfg(feature = "parallel")]
    let mse_oracle_smoothed: Vec<f64> = trials.par_iter().map(oracle).collect();
    #[cfg(not(feature = "parallel"))]
    let mse_oracle_smoothed: Vec<f64> = trials.iter().map(oracle).collect();
    let (predicted_unsmoothed, predicted_smoothed) = predicted_from_factor(cfg, factor.as_ref())?;

    Ok(SimResult {
        config: cfg.clone(),
        c_hat: trials.iter().map(|r| r.c_hat).collect(),
        mse_unsmoothed: trials.iter().map(|r| r.unsmoothed).collect(),
        mse_oracle_smoothed,
        mse_pes_smoothed: trials.iter().map(|r| r.pes).collect(),
        pes_sigma: trials.iter().map(|r| r.pes_sigma).collect(),
        pes_c: trials.iter().map(|r| r.pes_c).collect(),
        predicted_unsmoothed,
        predicted_smoothed,
        floor_sigma_y_sq: cfg.sigma_y.powi(2),
    })
}

/// Coefficient fits alone, one per trial, from the training draws.
pub fn coefficient_trials(cfg: &SimConfig) -> Result<Vec<f64>> {
    let process = Example1Process::new(cfg)?;
    let one = |k: usize| {
        let d = process.draw(&mut trial_rng(cfg.seed, k as u64));
        fit_coefficient(cfg, &d.x, &d.y)
    };
    #[cfg(feature = "parallel")]
    let out: Vec<Result<f64>> = (0..cfg.trials).into_par_iter().map(one).collect();
    #[cfg(not(feature = "parallel"))]
    let out: Vec<Result<f64>> = (0..cfg.trials).map(one).collect();
    out.into_iter().collect()
}

/// Runs each cell; a failing cell yields its error without stopping the
/// others. Covariance factors are shared between cells with the same `n` and
/// `K_zz`.
pub fn run_sweep(cells: &[SimConfig]) -> Vec<Result<SimResult>> {
    let mut cache: Vec<(usize, KzzSpec, Arc<HiddenCovariance>)> = Vec::new();
    let grid = simulation_grid();
    cells
        .iter()
        .map(|cfg| {
            cfg.validate()?;
            let cov = match cache.iter().find(|(n, k, _)| *n == cfg.n && *k == cfg.kzz) {
                Some((_, _, c)) => c.clone(),
                None => {
                    let c = Arc::new(HiddenCovariance::new(cfg.n, &cfg.kzz)?);
                    cache.push((cfg.n, cfg.kzz.clone(), c.clone()));
                    c
                }
            };
            run_cell_with(cfg, cov, &grid)
        })
        .collect()
}
