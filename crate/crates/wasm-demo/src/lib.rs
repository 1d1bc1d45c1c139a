//! Browser bindings for the smoothing demo in `www/`.
//!
//! The page draws one Example 1 dataset and lets the user move `sigma` and
//! `c`, inspect the gamma/beta diagnostic, and run a small simulation cell.

use nalgebra::DMatrix;
use pes_core::model::PredictionSet;
use pes_core::simulation::{
    fit_coefficient, index_grid, run_cell, trial_rng, Estimator, Example1Process, KzzSpec, SimConfig,
};
use pes_core::smoother::{nadaraya_watson_matrix, SmootherSpec};
use pes_core::theory::{estimate_gamma_beta, optimal_c_star, theorem1_bound};
use pes_core::tuning::{linspace, mse};
use wasm_bindgen::prelude::*;

fn config(n: usize, sigma_x: f64, sigma_y: f64, trials: usize, seed: u64) -> SimConfig {
    SimConfig {
        n,
        c_sig: 1.0,
        sigma_x,
        sigma_y,
        kzz: KzzSpec::default(),
        estimator: Estimator::Tls,
        trials,
        seed,
    }
}

fn col(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v)
}

/// One simulated series: noisy predictions `c_hat * x` of labels `y`.
#[wasm_bindgen]
pub struct Demo {
    t: Vec<f64>,
    y: Vec<f64>,
    yhat: Vec<f64>,
}

impl Demo {
    pub fn generate(n: usize, sigma_x: f64, seed: u64) -> pes_core::Result<Demo> {
        let cfg = config(n, sigma_x, 0.1, 1, seed);
        cfg.validate()?;
        let process = Example1Process::new(&cfg)?;
        let mut rng = trial_rng(seed, 0);
        let train = process.draw(&mut rng);
        let c_hat = fit_coefficient(&cfg, &train.x, &train.y)?;
        let test = process.draw(&mut rng);
        Ok(Demo {
            t: index_grid(n),
            y: test.y.iter().copied().collect(),
            yhat: test.x.iter().map(|x| c_hat * x).collect(),
        })
    }

    fn prediction_set(&self) -> pes_core::Result<PredictionSet> {
        PredictionSet::new(col(&self.yhat), Some(col(&self.y)), col(&self.t))
    }

    pub fn smoothed(&self, sigma: f64, c: f64) -> pes_core::Result<Vec<f64>> {
        let out = SmootherSpec::new(sigma, c)?.apply(&self.prediction_set()?)?;
        Ok(out.predictions().iter().copied().collect())
    }

    pub fn error(&self, values: &[f64]) -> pes_core::Result<f64> {
        mse(&col(&self.y), &col(values))
    }

    /// `[gamma, beta, c_star, bound]`; the last two are NaN when the
    /// guarantee does not apply.
    pub fn diagnostics(&self, sigma: f64) -> pes_core::Result<Vec<f64>> {
        let w = nadaraya_watson_matrix(&col(&self.t), sigma)?;
        let gb = estimate_gamma_beta(&w, &[(col(&self.y), col(&self.yhat))])?;
        let gap = gb.smoothed_sq_err;
        Ok(vec![
            gb.gamma,
            gb.beta,
            optimal_c_star(&gb, gap).unwrap_or(f64::NAN),
            theorem1_bound(&gb, gap, self.t.len()).unwrap_or(f64::NAN),
        ])
    }

    /// MSE of `S_c yhat` at `steps` evenly spaced values of `c` in `[0, 1]`.
    pub fn error_curve(&self, sigma: f64, steps: usize) -> pes_core::Result<Vec<f64>> {
        linspace(0.0, 1.0, steps.max(2))
            .into_iter()
            .map(|c| self.error(&self.smoothed(sigma, c)?))
            .collect()
    }
}

fn js(e: pes_core::PesError) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(n: usize, sigma_x: f64, seed: u32) -> Result<Demo, JsError> {
        Demo::generate(n, sigma_x, seed as u64).map_err(js)
    }

    pub fn indices(&self) -> Vec<f64> {
        self.t.clone()
    }

    pub fn labels(&self) -> Vec<f64> {
        self.y.clone()
    }

    pub fn predictions(&self) -> Vec<f64> {
        self.yhat.clone()
    }

    pub fn smooth(&self, sigma: f64, c: f64) -> Result<Vec<f64>, JsError> {
        self.smoothed(sigma, c).map_err(js)
    }

    pub fn mse(&self, values: &[f64]) -> Result<f64, JsError> {
        self.error(values).map_err(js)
    }

    pub fn theory(&self, sigma: f64) -> Result<Vec<f64>, JsError> {
        self.diagnostics(sigma).map_err(js)
    }

    pub fn curve(&self, sigma: f64, steps: usize) -> Result<Vec<f64>, JsError> {
        self.error_curve(sigma, steps).map_err(js)
    }
}

/// Mean test MSE over `trials`: `[unsmoothed, oracle, pes, predicted
/// unsmoothed, predicted smoothed]`.
pub fn simulate(n: usize, sigma_x: f64, sigma_y: f64, trials: usize, seed: u64) -> pes_core::Result<Vec<f64>> {
    let r = run_cell(&config(n, sigma_x, sigma_y, trials, seed))?;
    Ok(vec![
        r.unsmoothed().mean,
        r.oracle().mean,
        r.pes().mean,
        r.predicted_unsmoothed,
        r.predicted_smoothed,
    ])
}

#[wasm_bindgen(js_name = simulateCell)]
pub fn simulate_cell(n: usize, sigma_x: f64, sigma_y: f64, trials: usize, seed: u32) -> Result<Vec<f64>, JsError> {
    simulate(n, sigma_x, sigma_y, trials, seed as u64).map_err(js)
}
