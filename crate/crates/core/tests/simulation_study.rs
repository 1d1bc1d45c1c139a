use pes_core::simulation::{
    coefficient_trials, run_cell, run_sweep, summarize, Estimator, KzzSpec, SimConfig, SweepSpec,
};

fn cell(n: usize, sigma_x: f64, estimator: Estimator, trials: usize) -> SimConfig {
    SimConfig {
        n,
        c_sig: 1.0,
        sigma_x,
        sigma_y: 0.1,
        kzz: KzzSpec::default(),
        estimator,
        trials,
        seed: 31,
    }
}

#[test]
fn unsmoothed_mse_increases_with_sigma_x() {
    let spec = SweepSpec {
        n: 300,
        c_sig: 1.0,
        sigma_x: pes_core::simulation::OneOrMany::Many(vec![0.1, 0.3, 0.5, 0.7, 1.0]),
        sigma_y: pes_core::simulation::OneOrMany::One(0.1),
        kzz: KzzSpec::default(),
        estimator: pes_core::simulation::OneOrMany::One(Estimator::Tls),
        trials: 5,
        seed: 1,
    };
    let cells = spec.cells().unwrap();
    let means: Vec<f64> = run_sweep(&cells).into_iter().map(|r| r.unwrap().unsmoothed().mean).collect();
    assert!(means.windows(2).all(|w| w[0] < w[1]), "{means:?}");
}

#[test]
fn oracle_dominates_and_respects_floor() {
    for estimator in [Estimator::Tls, Estimator::Ols] {
        for sx in [0.2, 0.6, 1.2] {
            let r = run_cell(&cell(250, sx, estimator, 8)).unwrap();
            let (u, o) = (r.unsmoothed(), r.oracle());
            assert!(o.mean <= u.mean + 2.0 * u.se.max(o.se), "{estimator:?} {sx}: {o:?} vs {u:?}");
            assert!(o.mean >= r.floor_sigma_y_sq - 2.0 * o.se, "{estimator:?} {sx}: {o:?}");
        }
    }
}

#[test]
fn tls_is_consistent_as_n_grows() {
    for (n, tol) in [(100, 0.15), (1_000, 0.05), (10_000, 0.015)] {
        let cfg = SimConfig {
            n,
            c_sig: 1.0,
            sigma_x: 0.5,
            sigma_y: 0.1,
            kzz: KzzSpec::Block { blocks: n / 10, variance: 1.0 },
            estimator: Estimator::Tls,
            trials: 20,
            seed: 4,
        };
        let s = summarize(&coefficient_trials(&cfg).unwrap());
        assert!((s.mean - 1.0).abs() < tol, "n={n}: {s:?}");
    }
}

#[test]
fn pes_beats_unsmoothed_for_smooth_signal() {
    let r = run_cell(&cell(500, 0.5, Estimator::Tls, 10)).unwrap();
    let diffs: Vec<f64> = r.mse_pes_smoothed.iter().zip(&r.mse_unsmoothed).map(|(p, u)| p - u).collect();
    let d = summarize(&diffs);
    assert!(d.mean < -2.0 * d.se, "{d:?}");
    let selected = r.pes_c.iter().filter(|&&c| c > 0.0).count();
    assert!(selected >= 9, "c > 0 in {selected}/10 trials");
}

#[test]
fn block_structure_also_benefits() {
    let mut cfg = cell(400, 0.5, Estimator::Tls, 10);
    cfg.kzz = KzzSpec::Block { blocks: 8, variance: 1.0 };
    let r = run_cell(&cfg).unwrap();
    assert!(r.pes().mean < r.unsmoothed().mean);
    assert!(r.oracle().mean < r.pes().mean + 3.0 * r.pes().se);
}

#[test]
fn ols_cells_use_the_same_draws() {
    let tls = run_cell(&cell(200, 0.5, Estimator::Tls, 3)).unwrap();
    let ols = run_cell(&cell(200, 0.5, Estimator::Ols, 3)).unwrap();
    assert_eq!(tls.mse_unsmoothed.len(), ols.mse_unsmoothed.len());
    assert_eq!((tls.predicted_unsmoothed, tls.predicted_smoothed), (ols.predicted_unsmoothed, ols.predicted_smoothed));
    // OLS attenuates, TLS does not
    assert!(ols.c_hat_summary().mean < tls.c_hat_summary().mean);
}
