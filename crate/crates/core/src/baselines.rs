//! Base predictors and semi-supervised comparison methods: ridge regression,
//! random Fourier features, the Gaussian-process posterior mean, Laplacian
//! regularised least squares, harmonic energy minimisation, and shrinkage
//! toward the training mean.
//!
//! Ridge, random features and GPR regress on the feature matrix. LapRLS and
//! HEM are transductive and work on the index variables, treating the
//! prediction targets as the unlabeled points.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{PesError, Result};
use crate::linalg::{cholesky_checked, gaussian_gram};
use crate::model::{IndexedDataset, PredictionSet};
use crate::tuning::{linspace, logspace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ridge,
    RandomFeatures,
    Gpr,
    Laprls,
    Hem,
    ShrinkToMean,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Ridge,
        Method::RandomFeatures,
        Method::Gpr,
        Method::Laprls,
        Method::Hem,
        Method::ShrinkToMean,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ridge => "ridge",
            Method::RandomFeatures => "random_features",
            Method::Gpr => "gpr",
            Method::Laprls => "laprls",
            Method::Hem => "hem",
            Method::ShrinkToMean => "shrink_to_mean",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.name() == s)
    }

    pub fn hyperparameter_names(self) -> &'static [&'static str] {
        match self {
            Method::Ridge => &["lambda"],
            Method::RandomFeatures => &["num_features", "sigma_rf", "lambda"],
            Method::Gpr => &["alpha", "sigma_const", "sigma_gpr"],
            Method::Laprls => &["lambda_ridge", "lambda_lap", "sigma_graph"],
            Method::Hem => &["sigma_graph", "eta"],
            Method::ShrinkToMean => &["lambda", "delta"],
        }
    }

    /// Default search grid, following the hyperparameter tables of the
    /// original experiments. `shrink_to_mean` sits on top of ridge.
    pub fn default_grid(self) -> BTreeMap<String, Vec<f64>> {
        let mut g = BTreeMap::new();
        match self {
            Method::Ridge => {
                g.insert("lambda".to_string(), logspace(-6.0, 4.0, 5));
            }
            Method::RandomFeatures => {
                g.insert("num_features".to_string(), vec![100.0, 200.0]);
                g.insert("sigma_rf".to_string(), logspace(-8.0, -4.0, 3));
                g.insert("lambda".to_string(), logspace(-6.0, -4.0, 3));
            }
            Method::Gpr => {
                g.insert("alpha".to_string(), logspace(-6.0, 0.0, 3));
                g.insert("sigma_const".to_string(), logspace(-2.0, 2.0, 4));
                g.insert("sigma_gpr".to_string(), logspace(-2.0, 2.0, 4));
            }
            Method::Laprls => {
                g.insert("lambda_ridge".to_string(), logspace(-2.0, 4.0, 5));
                g.insert("lambda_lap".to_string(), logspace(-4.0, 2.0, 5));
                g.insert("sigma_graph".to_string(), vec![0.1]);
            }
            Method::Hem => {
                g.insert("sigma_graph".to_string(), logspace(-4.0, 0.0, 5));
                g.insert("eta".to_string(), linspace(0.01, 1.0, 6));
            }
            Method::ShrinkToMean => {
                g.insert("lambda".to_string(), logspace(-6.0, 4.0, 5));
                g.insert("delta".to_string(), linspace(0.0, 1.0, 11));
            }
        }
        g
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A method plus one concrete hyperparameter setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSpec {
    method: Method,
    hyperparameters: BTreeMap<String, f64>,
    seed: u64,
}

impl BaselineSpec {
    pub fn new(method: Method, hyperparameters: BTreeMap<String, f64>, seed: u64) -> Result<Self> {
        for &name in method.hyperparameter_names() {
            let v = *hyperparameters.get(name).ok_or_else(|| PesError::InvalidParameter {
                name: "hyperparameters",
                reason: format!("{method} requires `{name}`"),
            })?;
            let ok = match name {
                "lambda_lap" => v >= 0.0,
                "eta" => v > 0.0 && v <= 1.0,
                "delta" => (0.0..=1.0).contains(&v),
                "num_features" => v >= 1.0 && v.fract() == 0.0,
                _ => v > 0.0,
            };
            if !ok || !v.is_finite() {
                return Err(PesError::InvalidParameter {
                    name: "hyperparameters",
                    reason: format!("{method}: `{name}` = {v} is out of range"),
                });
            }
        }
        if let Some(extra) = hyperparameters
            .keys()
            .find(|k| !method.hyperparameter_names().contains(&k.as_str()))
        {
            return Err(PesError::InvalidParameter {
                name: "hyperparameters",
                reason: format!("{method} does not take `{extra}`"),
            });
        }
        Ok(Self {
            method,
            hyperparameters,
            seed,
        })
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn hyperparameters(&self) -> &BTreeMap<String, f64> {
        &self.hyperparameters
    }

    fn hp(&self, name: &str) -> f64 {
        self.hyperparameters[name]
    }

    /// Every combination of the given value lists, in lexicographic order of
    /// hyperparameter name.
    pub fn expand_grid(method: Method, grid: &BTreeMap<String, Vec<f64>>, seed: u64) -> Result<Vec<BaselineSpec>> {
        let mut combos: Vec<BTreeMap<String, f64>> = vec![BTreeMap::new()];
        for (name, values) in grid {
            if values.is_empty() {
                return Err(PesError::EmptyInput("hyperparameter grid has an empty value list"));
            }
            combos = combos
                .into_iter()
                .flat_map(|base| {
                    values.iter().map(move |&v| {
                        let mut m = base.clone();
                        m.insert(name.clone(), v);
                        m
                    })
                })
                .collect();
        }
        combos
            .into_iter()
            .map(|hps| BaselineSpec::new(method, hps, seed))
            .collect()
    }

    /// Fits on `train` and predicts at the target rows. Transductive methods
    /// use the target indices as their unlabeled points.
    pub fn fit_predict(
        &self,
        train: &IndexedDataset,
        target_features: &DMatrix<f64>,
        target_indices: &DMatrix<f64>,
    ) -> Result<DMatrix<f64>> {
        match self.method {
            Method::Ridge => Ok(fit_ridge(train, self.hp("lambda"))?.predict(target_features)),
            Method::RandomFeatures => {
                let model = RandomFeatureModel::fit(
                    train,
                    self.hp("num_features") as usize,
                    self.hp("sigma_rf"),
                    self.hp("lambda"),
                    self.seed,
                )?;
                Ok(model.predict(target_features))
            }
            Method::Gpr => {
                let m = fit_gpr_mean(train, self.hp("alpha"), self.hp("sigma_const"), self.hp("sigma_gpr"))?;
                Ok(m.predict(target_features))
            }
            Method::Laprls => {
                let m = fit_laprls(
                    train,
                    target_indices,
                    self.hp("lambda_ridge"),
                    self.hp("lambda_lap"),
                    self.hp("sigma_graph"),
                )?;
                Ok(m.predict(target_indices))
            }
            Method::Hem => fit_hem(
                train.indices(),
                train.labels(),
                target_indices,
                self.hp("sigma_graph"),
                self.hp("eta"),
            ),
            Method::ShrinkToMean => {
                let raw = fit_ridge(train, self.hp("lambda"))?.predict(target_features);
                let p = PredictionSet::new(raw, None, target_indices.clone())?;
                Ok(shrink_to_mean(&p, &train.label_mean(), self.hp("delta"))?
                    .predictions()
                    .clone())
            }
        }
    }
}

impl fmt::Display for BaselineSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.method)?;
        for (k, (name, v)) in self.hyperparameters.iter().enumerate() {
            if k > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{name}={v}")?;
        }
        f.write_str(")")
    }
}

fn column_means(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum() / c.len() as f64))
}

/// Linear model `y = x w + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeModel {
    pub weights: DMatrix<f64>,
    pub intercept: DVector<f64>,
}

impl RidgeModel {
    pub fn predict(&self, features: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = features * &self.weights;
        for mut row in out.row_iter_mut() {
            row += self.intercept.transpose();
        }
        out
    }
}

fn ridge_solve(x: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64) -> Result<RidgeModel> {
    if !(lambda > 0.0) {
        return Err(PesError::InvalidParameter {
            name: "lambda",
            reason: format!("must be positive, got {lambda}"),
        });
    }
    let xm = column_means(x);
    let ym = column_means(y);
    let mut xc = x.clone();
    for mut row in xc.row_iter_mut() {
        row -= xm.transpose();
    }
    let mut yc = y.clone();
    for mut row in yc.row_iter_mut() {
        row -= ym.transpose();
    }
    let d = x.ncols();
    let gram = xc.transpose() * &xc + DMatrix::<f64>::identity(d, d) * lambda;
    let chol = nalgebra::Cholesky::new(gram).ok_or(PesError::NotPositiveDefinite { what: "ridge normal equations" })?;
    let weights = chol.solve(&(xc.transpose() * yc));
    let intercept = &ym - weights.transpose() * &xm;
    Ok(RidgeModel { weights, intercept })
}

/// Minimises `||X w + b - y||^2 + lambda ||w||^2` with an unpenalised
/// intercept.
pub fn fit_ridge(train: &IndexedDataset, lambda: f64) -> Result<RidgeModel> {
    ridge_solve(train.features(), train.labels(), lambda)
}

/// Random Fourier features `cos(w^T x + b)`, `w ~ N(0, sigma_rf^2)`,
/// `b ~ U(0, 2 pi)`, drawn once from the seed.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomFeatureMap {
    w: DMatrix<f64>,
    b: DVector<f64>,
}

impl RandomFeatureMap {
    pub fn new(input_dim: usize, num_features: usize, sigma_rf: f64, seed: u64) -> Result<Self> {
        if num_features == 0 {
            return Err(PesError::InvalidParameter {
                name: "num_features",
                reason: "must be at least 1".into(),
            });
        }
        let normal = Normal::new(0.0, sigma_rf).map_err(|e| PesError::InvalidParameter {
            name: "sigma_rf",
            reason: e.to_string(),
        })?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = DMatrix::from_fn(num_features, input_dim, |_, _| normal.sample(&mut rng));
        let b = DVector::from_fn(num_features, |_, _| rng.random_range(0.0..std::f64::consts::TAU));
        Ok(Self { w, b })
    }

    pub fn num_features(&self) -> usize {
        self.b.len()
    }

    /// Maps each row of `x` to its feature vector.
    pub fn transform(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = x * self.w.transpose();
        for mut row in z.row_iter_mut() {
            row += self.b.transpose();
        }
        z.map(f64::cos)
    }
}

/// Feature vector of a single input under the map drawn from `seed`.
pub fn random_feature_map(x: &[f64], num_features: usize, sigma_rf: f64, seed: u64) -> Result<Vec<f64>> {
    let map = RandomFeatureMap::new(x.len(), num_features, sigma_rf, seed)?;
    let row = DMatrix::from_row_slice(1, x.len(), x);
    Ok(map.transform(&row).iter().copied().collect())
}

/// Ridge regression on random Fourier features.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomFeatureModel {
    pub map: RandomFeatureMap,
    pub ridge: RidgeModel,
}

impl RandomFeatureModel {
    pub fn fit(train: &IndexedDataset, num_features: usize, sigma_rf: f64, lambda: f64, seed: u64) -> Result<Self> {
        let map = RandomFeatureMap::new(train.features().ncols(), num_features, sigma_rf, seed)?;
        let ridge = ridge_solve(&map.transform(train.features()), train.labels(), lambda)?;
        Ok(Self { map, ridge })
    }

    pub fn predict(&self, features: &DMatrix<f64>) -> DMatrix<f64> {
        self.ridge.predict(&self.map.transform(features))
    }
}

/// Posterior mean of zero-mean GP regression with kernel
/// `sigma_const^2 exp(-||a - b||^2 / (2 sigma_gpr^2))` and noise `alpha`.
#[derive(Debug, Clone, PartialEq)]
pub struct GprModel {
    train_x: DMatrix<f64>,
    dual: DMatrix<f64>,
    sigma_const: f64,
    sigma_gpr: f64,
}

impl GprModel {
    pub fn predict(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let k_star = gaussian_gram(x, &self.train_x, self.sigma_gpr, self.sigma_const * self.sigma_const);
        k_star * &self.dual
    }
}

pub fn fit_gpr_mean(train: &IndexedDataset, alpha: f64, sigma_const: f64, sigma_gpr: f64) -> Result<GprModel> {
    for (name, v) in [("alpha", alpha), ("sigma_const", sigma_const), ("sigma_gpr", sigma_gpr)] {
        if !(v > 0.0) {
            return Err(PesError::InvalidParameter {
                name: "gpr",
                reason: format!("{name} must be positive, got {v}"),
            });
        }
    }
    let x = train.features();
    let n = x.nrows();
    let k = gaussian_gram(x, x, sigma_gpr, sigma_const * sigma_const) + DMatrix::<f64>::identity(n, n) * alpha;
    let chol = cholesky_checked("K + alpha I", k, "increase alpha")?;
    Ok(GprModel {
        train_x: x.clone(),
        dual: chol.solve(train.labels()),
        sigma_const,
        sigma_gpr,
    })
}

fn laplacian(w: &DMatrix<f64>) -> DMatrix<f64> {
    let mut l = -w.clone();
    for i in 0..w.nrows() {
        let deg: f64 = (0..w.ncols()).filter(|&j| j != i).map(|j| w[(i, j)]).sum();
        l[(i, i)] = deg;
    }
    l
}

/// Kernel expansion `f(t) = sum_i coef_i k(t_i, t)` over labeled and
/// unlabeled points.
#[derive(Debug, Clone, PartialEq)]
pub struct LapRlsModel {
    points: DMatrix<f64>,
    coef: DMatrix<f64>,
    sigma: f64,
}

impl LapRlsModel {
    pub fn predict(&self, indices: &DMatrix<f64>) -> DMatrix<f64> {
        gaussian_gram(indices, &self.points, self.sigma, 1.0) * &self.coef
    }
}

/// Laplacian-regularised least squares on the index variables:
/// `min ||f_l - y||^2 + lambda_ridge ||f||_K^2 + lambda_lap f^T L f`, with a
/// Gaussian kernel and Gaussian graph weights sharing `sigma_graph`.
pub fn fit_laprls(
    train_labeled: &IndexedDataset,
    unlabeled_indices: &DMatrix<f64>,
    lambda_ridge: f64,
    lambda_lap: f64,
    sigma_graph: f64,
) -> Result<LapRlsModel> {
    if !(lambda_ridge > 0.0) || !(lambda_lap >= 0.0) || !(sigma_graph > 0.0) {
        return Err(PesError::InvalidParameter {
            name: "laprls",
            reason: format!(
                "need lambda_ridge > 0, lambda_lap >= 0, sigma_graph > 0; got {lambda_ridge}, {lambda_lap}, {sigma_graph}"
            ),
        });
    }
    let lab = train_labeled.indices();
    if unlabeled_indices.ncols() != lab.ncols() && unlabeled_indices.nrows() > 0 {
        return Err(PesError::Shape {
            what: "unlabeled indices",
            expected: format!("{} columns", lab.ncols()),
            got: format!("{} columns", unlabeled_indices.ncols()),
        });
    }
    let l = lab.nrows();
    let u = unlabeled_indices.nrows();
    let n = l + u;
    let mut points = DMatrix::zeros(n, lab.ncols());
    points.rows_mut(0, l).copy_from(lab);
    if u > 0 {
        points.rows_mut(l, u).copy_from(unlabeled_indices);
    }
    let k = gaussian_gram(&points, &points, sigma_graph, 1.0);
    // (J^T J K + lambda_ridge I + lambda_lap L K) coef = J^T y
    let mut system = DMatrix::zeros(n, n);
    system.rows_mut(0, l).copy_from(&k.rows(0, l));
    if lambda_lap > 0.0 {
        system += laplacian(&k) * &k * lambda_lap;
    }
    for i in 0..n {
        system[(i, i)] += lambda_ridge;
    }
    let mut rhs = DMatrix::zeros(n, train_labeled.labels().ncols());
    rhs.rows_mut(0, l).copy_from(train_labeled.labels());
    let coef = system
        .lu()
        .solve(&rhs)
        .filter(|c| c.iter().all(|v| v.is_finite()))
        .ok_or(PesError::Singular { what: "LapRLS system" })?;
    Ok(LapRlsModel {
        points,
        coef,
        sigma: sigma_graph,
    })
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Harmonic energy minimisation on the Gaussian similarity graph:
/// `f_u = (D_uu - eta W_uu)^{-1} eta W_ul y_l`.
///
/// `eta = 1` is the classical harmonic solution; smaller `eta` damps how far
/// labels propagate, and `eta -> 0` sends every prediction to zero.
pub fn fit_hem(
    labeled_indices: &DMatrix<f64>,
    labels: &DMatrix<f64>,
    unlabeled_indices: &DMatrix<f64>,
    sigma_graph: f64,
    eta: f64,
) -> Result<DMatrix<f64>> {
    if !(sigma_graph > 0.0) || !(eta > 0.0 && eta <= 1.0) {
        return Err(PesError::InvalidParameter {
            name: "hem",
            reason: format!("need sigma_graph > 0 and eta in (0, 1]; got {sigma_graph}, {eta}"),
        });
    }
    let l = labeled_indices.nrows();
    let u = unlabeled_indices.nrows();
    if l == 0 || u == 0 {
        return Err(PesError::EmptyInput("harmonic solve needs labeled and unlabeled points"));
    }
    if labels.nrows() != l {
        return Err(PesError::Shape {
            what: "labels",
            expected: format!("{l} rows"),
            got: format!("{} rows", labels.nrows()),
        });
    }
    let w_uu = gaussian_gram(unlabeled_indices, unlabeled_indices, sigma_graph, 1.0);
    let w_ul = gaussian_gram(unlabeled_indices, labeled_indices, sigma_graph, 1.0);

    let mut parent: Vec<usize> = (0..u).collect();
    let mut anchored = vec![false; u];
    let mut degree = vec![0.0; u];
    for i in 0..u {
        let to_labels: f64 = w_ul.row(i).sum();
        anchored[i] = to_labels > 0.0;
        degree[i] = to_labels;
        for j in 0..u {
            if i != j && w_uu[(i, j)] > 0.0 {
                degree[i] += w_uu[(i, j)];
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a] = b;
            }
        }
    }
    let mut root_anchored = vec![false; u];
    for (i, &a) in anchored.iter().enumerate() {
        if a {
            let r = find(&mut parent, i);
            root_anchored[r] = true;
        }
    }
    let mut stranded: Vec<usize> = (0..u)
        .filter(|&i| {
            let r = find(&mut parent, i);
            degree[i] == 0.0 || (eta == 1.0 && !root_anchored[r])
        })
        .collect();
    if !stranded.is_empty() {
        stranded.sort_unstable();
        return Err(PesError::DisconnectedComponent { nodes: stranded });
    }

    let mut system = -w_uu * eta;
    for i in 0..u {
        system[(i, i)] = degree[i];
    }
    let rhs = w_ul * labels * eta;
    system
        .lu()
        .solve(&rhs)
        .ok_or(PesError::Singular { what: "harmonic system" })
}

/// `(1 - delta) * predictions + delta * train_label_mean`, row by row.
pub fn shrink_to_mean(p: &PredictionSet, train_label_mean: &[f64], delta: f64) -> Result<PredictionSet> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(PesError::InvalidParameter {
            name: "delta",
            reason: format!("must lie in [0, 1], got {delta}"),
        });
    }
    if train_label_mean.len() != p.predictions().ncols() {
        return Err(PesError::Shape {
            what: "label mean",
            expected: p.predictions().ncols().to_string(),
            got: train_label_mean.len().to_string(),
        });
    }
    if delta == 0.0 {
        return Ok(p.clone());
    }
    let out = DMatrix::from_fn(p.len(), train_label_mean.len(), |i, j| {
        (1.0 - delta) * p.predictions()[(i, j)] + delta * train_label_mean[j]
    });
    p.with_predictions(out)
}
