//! When does smoothing help? Monte-Carlo estimates of `gamma` and `beta`,
//! the optimal shrinkage `c*`, the guaranteed-improvement bound, and the
//! expected MSE reduction of the covariance-optimal smoother.
//!
//! Squared quantities here are squared *norms* of whole prediction vectors
//! (`E[||eps||^2]`, `E[||W yhat - y||^2]`), not per-entry means. For
//! multi-column labels every quadratic form is summed over columns.

use nalgebra::DMatrix;
#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::{PesError, Result};
use crate::model::CovarianceBundle;
use crate::smoother::{solve_yhat_yhat, WeightMatrix};

/// Estimated `gamma = E[eps^T W eps] / E[||eps||^2]` and
/// `beta = E[eps^T (W - I) y] / E[||eps||^2]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaBeta {
    pub gamma: f64,
    pub beta: f64,
    /// `E[||eps||^2]`.
    pub mean_sq_err: f64,
    /// `E[||W yhat - y||^2]`, the squared error of fully smoothed predictions.
    pub smoothed_sq_err: f64,
    pub trials: usize,
}

impl GammaBeta {
    pub fn new(gamma: f64, beta: f64, mean_sq_err: f64, smoothed_sq_err: f64) -> Result<Self> {
        if !(mean_sq_err > 0.0) {
            return Err(PesError::ZeroResidual);
        }
        Ok(Self {
            gamma,
            beta,
            mean_sq_err,
            smoothed_sq_err,
            trials: 0,
        })
    }

    /// `gamma + beta`, the quantity that must stay below one.
    pub fn effective_gamma(&self) -> f64 {
        self.gamma + self.beta
    }

    pub fn theorem_applicable(&self) -> bool {
        self.effective_gamma() < 1.0
    }

    /// Estimated from a single dataset: the guarantee only holds in
    /// expectation, so treat the verdict as a plug-in diagnostic.
    pub fn is_plug_in(&self) -> bool {
        self.trials == 1
    }
}

struct TrialMoments {
    quad: f64,
    cross: f64,
    err: f64,
    smoothed: f64,
}

fn trial_moments(w: &DMatrix<f64>, y: &DMatrix<f64>, yhat: &DMatrix<f64>) -> TrialMoments {
    let eps = yhat - y;
    let w_eps = w * &eps;
    let w_y = w * y;
    let quad = eps.dot(&w_eps);
    let cross = eps.dot(&(&w_y - y));
    let smoothed = (&w_eps + &w_y - y).norm_squared();
    TrialMoments {
        quad,
        cross,
        err: eps.norm_squared(),
        smoothed,
    }
}

/// Trial-averaged `gamma`, `beta`, `E[||eps||^2]` and `E[||W yhat - y||^2]`.
pub fn estimate_gamma_beta(w: &WeightMatrix, trials: &[(DMatrix<f64>, DMatrix<f64>)]) -> Result<GammaBeta> {
    if trials.is_empty() {
        return Err(PesError::EmptyInput("at least one (y, yhat) trial is required"));
    }
    let n = w.dim();
    for (y, yhat) in trials {
        if y.nrows() != n || y.shape() != yhat.shape() {
            return Err(PesError::Shape {
                what: "trial",
                expected: format!("{n} rows, y and yhat equal shape"),
                got: format!("y {}x{}, yhat {}x{}", y.nrows(), y.ncols(), yhat.nrows(), yhat.ncols()),
            });
        }
    }
    let wm = w.weights();
    #[cfg(feature = "parallel")]
    let moments: Vec<TrialMoments> = trials.par_iter().map(|(y, yh)| trial_moments(wm, y, yh)).collect();
    #[cfg(not(feature = "parallel"))]
    let moments: Vec<TrialMoments> = trials.iter().map(|(y, yh)| trial_moments(wm, y, yh)).collect();

    let m = moments.len() as f64;
    let (mut quad, mut cross, mut err, mut smoothed) = (0.0, 0.0, 0.0, 0.0);
    for t in &moments {
        quad += t.quad;
        cross += t.cross;
        err += t.err;
        smoothed += t.smoothed;
    }
    if err == 0.0 {
        return Err(PesError::ZeroResidual);
    }
    let mut gb = GammaBeta::new(quad / err, cross / err, err / m, smoothed / m)?;
    gb.trials = trials.len();
    Ok(gb)
}

fn check_improvable(gb: &GammaBeta, gap: f64) -> Result<f64> {
    let g = gb.effective_gamma();
    if !(g < 1.0) {
        return Err(PesError::NoImprovementGuaranteed(g));
    }
    if !(gap >= 0.0) {
        return Err(PesError::InvalidParameter {
            name: "smoothed_mse_gap",
            reason: format!("E[||W yhat - y||^2] must be nonnegative, got {gap}"),
        });
    }
    Ok(g)
}

/// Minimiser of the quadratic upper bound on the MSE change:
/// `c* = (1 - g) E / (G + 2 (1 - g) E)` with `g = gamma + beta`,
/// `E = E[||eps||^2]` and `G = smoothed_mse_gap = E[||W yhat - y||^2]`.
///
/// With `beta = 0` this is the classical form in `gamma` alone.
pub fn optimal_c_star(gb: &GammaBeta, smoothed_mse_gap: f64) -> Result<f64> {
    let g = check_improvable(gb, smoothed_mse_gap)?;
    let e = gb.mean_sq_err;
    let c = (1.0 - g) * e / (smoothed_mse_gap + 2.0 * (1.0 - g) * e);
    Ok(c.clamp(f64::MIN_POSITIVE, 1.0))
}

/// Upper bound on the per-entry expected MSE change from smoothing with
/// `S_{c*}`: `-(1 - g)^2 E^2 / (n (G + 2 (1 - g) E))`.
pub fn theorem1_bound(gb: &GammaBeta, smoothed_mse_gap: f64, n: usize) -> Result<f64> {
    let g = check_improvable(gb, smoothed_mse_gap)?;
    if n == 0 {
        return Err(PesError::InvalidParameter {
            name: "n",
            reason: "must be positive".into(),
        });
    }
    let e = gb.mean_sq_err;
    Ok(-(1.0 - g).powi(2) * e * e / (n as f64 * (smoothed_mse_gap + 2.0 * (1.0 - g) * e)))
}

/// The quadratic upper bound itself, `c^2 (G + 2(1-g)E) + 2c(g-1)E`, on the
/// expected change in squared error norm at a given `c`.
pub fn mse_change_bound(gb: &GammaBeta, smoothed_mse_gap: f64, c: f64) -> f64 {
    let (g, e) = (gb.effective_gamma(), gb.mean_sq_err);
    c * c * (smoothed_mse_gap + 2.0 * (1.0 - g) * e) + 2.0 * c * (g - 1.0) * e
}

/// Exact expected change in squared error norm from smoothing with `S_c`:
/// `c^2 (G + (1 - 2g) E) + 2c(g-1)E`. Never exceeds [`mse_change_bound`].
pub fn expected_mse_change(gb: &GammaBeta, smoothed_mse_gap: f64, c: f64) -> f64 {
    let (g, e) = (gb.effective_gamma(), gb.mean_sq_err);
    c * c * (smoothed_mse_gap + (1.0 - 2.0 * g) * e) + 2.0 * c * (g - 1.0) * e
}

/// Expected per-entry MSE reduction from applying the optimal smoother:
/// `(1/n) tr(K_yhat_eps^T K_yhat_yhat^{-1} K_yhat_eps)`, with
/// `K_yhat_eps = K_ye + K_ee`. Always nonnegative.
pub fn lemma1_reduction(cov: &CovarianceBundle, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(PesError::InvalidParameter {
            name: "n",
            reason: "must be positive".into(),
        });
    }
    let k_he = cov.k_yhat_e();
    let x = solve_yhat_yhat(cov, k_he.clone())?;
    let tr = k_he.dot(&x);
    Ok((tr / n as f64).max(0.0))
}

/// Diagnostic for the sufficient condition `beta <= c`:
/// `E[||(W - I) y||^2] <= c^2 E[||eps||^2]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaCondition {
    pub label_distortion: f64,
    pub allowed: f64,
    pub holds: bool,
}

pub fn beta_sufficient_condition(
    w: &WeightMatrix,
    trials: &[(DMatrix<f64>, DMatrix<f64>)],
    c: f64,
) -> Result<BetaCondition> {
    if trials.is_empty() {
        return Err(PesError::EmptyInput("at least one (y, yhat) trial is required"));
    }
    let wm = w.weights();
    let m = trials.len() as f64;
    let mut distortion = 0.0;
    let mut err = 0.0;
    for (y, yhat) in trials {
        distortion += (wm * y - y).norm_squared();
        err += (yhat - y).norm_squared();
    }
    let label_distortion = distortion / m;
    let allowed = c * c * err / m;
    Ok(BetaCondition {
        label_distortion,
        allowed,
        holds: label_distortion <= allowed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smoother::nadaraya_watson_matrix;
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn col(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    fn gb(gamma: f64, beta: f64, e: f64) -> GammaBeta {
        GammaBeta::new(gamma, beta, e, 0.0).unwrap()
    }

    #[test]
    fn identity_weights_give_gamma_one_beta_zero() {
        let w = WeightMatrix::custom(DMatrix::identity(3, 3)).unwrap();
        let trials = vec![
            (col(&[1.0, 2.0, 3.0]), col(&[1.5, 1.0, 3.0])),
            (col(&[0.0, -1.0, 3.0]), col(&[0.5, -1.0, 2.0])),
        ];
        let r = estimate_gamma_beta(&w, &trials).unwrap();
        assert!((r.gamma - 1.0).abs() < 1e-15);
        assert_eq!(r.beta, 0.0);
        assert!(!r.theorem_applicable());
        assert!(!r.is_plug_in());
    }

    #[test]
    fn zero_weights_give_gamma_zero() {
        let w = WeightMatrix::custom(DMatrix::zeros(2, 2)).unwrap();
        let trials = vec![(col(&[1.0, 2.0]), col(&[2.0, 1.0])), (col(&[3.0, 0.0]), col(&[3.0, 1.0]))];
        let r = estimate_gamma_beta(&w, &trials).unwrap();
        assert_eq!(r.gamma, 0.0);
        // eps = (1,-1),(0,1); eps^T y = 1*1 + -1*2 + 0 + 0 = -1; ||eps||^2 sum = 3
        assert!((r.beta - (1.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn swap_weights_hand_example() {
        let w = WeightMatrix::custom(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])).unwrap();
        let r = estimate_gamma_beta(&w, &[(col(&[0.0, 0.0]), col(&[1.0, -1.0]))]).unwrap();
        assert_eq!(r.gamma, -1.0);
        assert_eq!(r.beta, 0.0);
        assert!(r.is_plug_in());
    }

    #[test]
    fn zero_residuals_rejected() {
        let w = WeightMatrix::custom(DMatrix::identity(2, 2)).unwrap();
        let t = col(&[1.0, 2.0]);
        assert_eq!(estimate_gamma_beta(&w, &[(t.clone(), t)]), Err(PesError::ZeroResidual));
        assert!(estimate_gamma_beta(&w, &[]).is_err());
        assert!(estimate_gamma_beta(&w, &[(col(&[1.0]), col(&[2.0]))]).is_err());
    }

    #[test]
    fn c_star_examples() {
        assert!((optimal_c_star(&gb(0.0, 0.0, 1.0), 0.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((optimal_c_star(&gb(0.5, 0.0, 2.0), 1.0).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let near = optimal_c_star(&gb(1.0 - 1e-9, 0.0, 1.0), 1.0).unwrap();
        assert!(near > 0.0 && near < 1e-8);
        assert!(matches!(optimal_c_star(&gb(1.0, 0.0, 1.0), 1.0), Err(PesError::NoImprovementGuaranteed(_))));
        assert!(optimal_c_star(&gb(0.6, 0.5, 1.0), 1.0).is_err());
        assert!(optimal_c_star(&gb(0.0, 0.0, 1.0), -1.0).is_err());
    }

    #[test]
    fn bound_examples() {
        assert!((theorem1_bound(&gb(0.0, 0.0, 1.0), 0.0, 1).unwrap() + 0.5).abs() < 1e-15);
        assert!((theorem1_bound(&gb(0.5, 0.0, 2.0), 1.0, 10).unwrap() + 1.0 / 30.0).abs() < 1e-15);
        let tiny = theorem1_bound(&gb(0.2, 0.0, 1e-12), 1.0, 5).unwrap();
        assert!(tiny <= 0.0 && tiny > -1e-20);
        assert!(theorem1_bound(&gb(1.2, 0.0, 1.0), 1.0, 5).is_err());
    }

    #[test]
    fn bound_at_c_star_matches_closed_form() {
        let g = gb(0.3, 0.1, 2.5);
        let gap = 1.7;
        let c = optimal_c_star(&g, gap).unwrap();
        let n = 7;
        let closed = theorem1_bound(&g, gap, n).unwrap();
        assert!((mse_change_bound(&g, gap, c) / n as f64 - closed).abs() < 1e-14);
        assert!(expected_mse_change(&g, gap, c) <= mse_change_bound(&g, gap, c));
    }

    #[test]
    fn reduction_examples() {
        let id = DMatrix::<f64>::identity(4, 4);
        let z = DMatrix::<f64>::zeros(4, 4);
        let cov = CovarianceBundle::new(id.clone(), id.clone(), z.clone()).unwrap();
        assert!((lemma1_reduction(&cov, 4).unwrap() - 0.5).abs() < 1e-12);
        // a perfect predictor leaves nothing to remove
        let cov = CovarianceBundle::new(id.clone(), z.clone(), z.clone()).unwrap();
        assert!(lemma1_reduction(&cov, 4).unwrap().abs() < 1e-15);
        let singular = CovarianceBundle::new(z.clone(), z.clone(), z).unwrap();
        assert!(lemma1_reduction(&singular, 4).is_err());
    }

    #[test]
    fn perfect_predictor_reduction_matches_monte_carlo() {
        // yhat = y exactly: both MSEs are zero so the reduction is zero
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cov = CovarianceBundle::new(DMatrix::identity(2, 2), DMatrix::zeros(2, 2), DMatrix::zeros(2, 2)).unwrap();
        let s = crate::smoother::optimal_smoother(&cov).unwrap();
        let mut diff = 0.0;
        for _ in 0..1000 {
            let y = DMatrix::from_fn(2, 1, |_, _| rng.sample::<f64, _>(StandardNormal));
            let yhat = y.clone();
            diff += ((&yhat - &y).norm_squared() - (&s * &yhat - &y).norm_squared()) / 2.0;
        }
        assert!((diff / 1000.0 - lemma1_reduction(&cov, 2).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn reduction_two_algebraic_routes_agree() {
        let kyy = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.1, 0.5, 1.0, 0.2, 0.1, 0.2, 1.5]);
        let kee = DMatrix::from_row_slice(3, 3, &[1.0, 0.3, 0.0, 0.3, 0.8, 0.1, 0.0, 0.1, 0.6]);
        let kye = DMatrix::from_row_slice(3, 3, &[0.2, -0.1, 0.0, 0.05, 0.1, 0.0, 0.0, 0.02, -0.1]);
        let cov = CovarianceBundle::new(kyy.clone(), kee.clone(), kye).unwrap();
        // MSE(yhat) - MMSE = tr(K_ee) - (tr(K_yy) - tr(K_yhat_y^T K^-1 K_yhat_y))
        let kinv = cov.k_yhat_yhat().try_inverse().unwrap();
        let khy = cov.k_yhat_y();
        let mmse = kyy.trace() - (khy.transpose() * &kinv * &khy).trace();
        let alt = (kee.trace() - mmse) / 3.0;
        assert!((lemma1_reduction(&cov, 3).unwrap() - alt).abs() < 1e-12);
    }

    #[test]
    fn beta_condition_diagnostic() {
        let w = WeightMatrix::custom(DMatrix::identity(2, 2)).unwrap();
        let d = beta_sufficient_condition(&w, &[(col(&[1.0, 2.0]), col(&[2.0, 2.0]))], 0.5).unwrap();
        assert_eq!(d.label_distortion, 0.0);
        assert!(d.holds);
    }

    proptest! {
        #[test]
        fn gamma_bounded_for_stochastic_weights(
            seed in 0u64..1000,
            n in 2usize..12,
            sigma in 0.05f64..3.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = DMatrix::from_fn(n, 1, |i, _| i as f64 * 0.3);
            let w = nadaraya_watson_matrix(&t, sigma).unwrap();
            let m = 40;
            let trials: Vec<_> = (0..m)
                .map(|_| {
                    let y = DMatrix::from_fn(n, 1, |_, _| rng.sample::<f64, _>(StandardNormal));
                    let yh = DMatrix::from_fn(n, 1, |i, _| y[(i, 0)] + rng.sample::<f64, _>(StandardNormal) * 0.5);
                    (y, yh)
                })
                .collect();
            let r = estimate_gamma_beta(&w, &trials).unwrap();
            prop_assert!(r.gamma <= 1.0 + 5.0 / (m as f64).sqrt());
        }

        #[test]
        fn reduction_nonnegative_for_random_bundles(
            seed in 0u64..10_000,
            n in 1usize..8,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = DMatrix::from_fn(2 * n, 2 * n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let joint = &a * a.transpose() + DMatrix::<f64>::identity(2 * n, 2 * n) * 0.1;
            let kyy = joint.view((0, 0), (n, n)).into_owned();
            let kye = joint.view((0, n), (n, n)).into_owned();
            let kee = joint.view((n, n), (n, n)).into_owned();
            let cov = CovarianceBundle::new(kyy, kee, kye).unwrap();
            prop_assert!(lemma1_reduction(&cov, n).unwrap() >= 0.0);
        }
    }
}
