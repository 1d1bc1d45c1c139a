use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Subcommand, ValueEnum};
use pes_core::simulation::{fit_coefficient, index_grid, trial_rng, Estimator, Example1Process, KzzSpec, SimConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::output::{check_parent, Staged};

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(subcommand)]
    pub kind: Kind,
}

#[derive(Debug, Subcommand)]
pub enum Kind {
    /// Predictions `c_hat * x` of the errors-in-variables model over a time grid.
    Example1(Example1Args),
    /// A labeled 2-D spatial regression problem with a split column.
    Spatial(SpatialArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum EstimatorArg {
    Tls,
    Ols,
}

#[derive(Debug, Args)]
pub struct Example1Args {
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    #[arg(long, default_value_t = 1.0)]
    pub c_sig: f64,
    #[arg(long, default_value_t = 0.5)]
    pub sigma_x: f64,
    #[arg(long, default_value_t = 0.1)]
    pub sigma_y: f64,
    /// RBF length scale of the hidden signal.
    #[arg(long, default_value_t = 0.1)]
    pub length_scale: f64,
    #[arg(long, value_enum, default_value = "tls")]
    pub estimator: EstimatorArg,
    /// Independent draws over the same grid, told apart by a `trial` column.
    #[arg(long, default_value_t = 1)]
    pub trials: usize,
    /// Emit a validation and a holdout draw per trial, with a `split` column.
    #[arg(long)]
    pub with_splits: bool,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct SpatialArgs {
    #[arg(long, default_value_t = 300)]
    pub n: usize,
    /// Label noise standard deviation.
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long)]
    pub output: PathBuf,
}

pub fn generate(a: &GenerateArgs, seed: u64) -> anyhow::Result<()> {
    match &a.kind {
        Kind::Example1(e) => example1(e, seed),
        Kind::Spatial(s) => spatial(s, seed),
    }
}

fn example1(a: &Example1Args, seed: u64) -> anyhow::Result<()> {
    check_parent(&a.output)?;
    if a.trials == 0 {
        anyhow::bail!("--trials must be at least 1");
    }
    let cfg = SimConfig {
        n: a.n,
        c_sig: a.c_sig,
        sigma_x: a.sigma_x,
        sigma_y: a.sigma_y,
        kzz: KzzSpec::Rbf {
            variance: 1.0,
            length_scale: a.length_scale,
        },
        estimator: match a.estimator {
            EstimatorArg::Tls => Estimator::Tls,
            EstimatorArg::Ols => Estimator::Ols,
        },
        trials: a.trials,
        seed,
    };
    cfg.validate()?;
    let process = Example1Process::new(&cfg)?;
    let t = index_grid(a.n);
    let mut out = Staged::new();
    out.write(&a.output, |w| {
        let mut c = csv::Writer::from_writer(w);
        let mut header = vec!["t0", "x0", "yhat0", "y0"];
        if a.trials > 1 {
            header.push("trial");
        }
        if a.with_splits {
            header.push("split");
        }
        c.write_record(&header)?;
        for trial in 0..a.trials {
            let mut rng = trial_rng(seed, trial as u64);
            let train = process.draw(&mut rng);
            let c_hat = fit_coefficient(&cfg, &train.x, &train.y)?;
            let tags: &[&str] = if a.with_splits { &["validation", "holdout"] } else { &[""] };
            for tag in tags {
                let d = process.draw(&mut rng);
                for (i, ti) in t.iter().enumerate() {
                    let mut rec = vec![
                        ti.to_string(),
                        d.x[i].to_string(),
                        (c_hat * d.x[i]).to_string(),
                        d.y[i].to_string(),
                    ];
                    if a.trials > 1 {
                        rec.push(trial.to_string());
                    }
                    if a.with_splits {
                        rec.push(tag.to_string());
                    }
                    c.write_record(&rec)?;
                }
            }
        }
        c.flush()?;
        Ok(())
    })?;
    out.commit()
}

fn spatial(a: &SpatialArgs, seed: u64) -> anyhow::Result<()> {
    check_parent(&a.output)?;
    if a.n < 10 {
        anyhow::bail!("--n must be at least 10");
    }
    if !(a.noise >= 0.0 && a.noise.is_finite()) {
        anyhow::bail!("--noise must be a nonnegative number");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tau = std::f64::consts::TAU;
    let mut out = Staged::new();
    out.write(&a.output, |w: &mut dyn Write| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["t0", "t1", "x0", "x1", "x2", "x3", "y0", "split"])?;
        for i in 0..a.n {
            let (lat, lon): (f64, f64) = (rng.random(), rng.random());
            let size: f64 = rng.sample(StandardNormal);
            let age: f64 = rng.sample(StandardNormal);
            let noise: f64 = rng.sample::<f64, _>(StandardNormal) * a.noise;
            let y = (tau * lat).sin() * (tau * lon).cos() + 0.5 * size - 0.2 * age + noise;
            let split = match i % 5 {
                0 => "validation",
                1 => "holdout",
                _ => "train",
            };
            c.write_record([
                lat.to_string(),
                lon.to_string(),
                lat.to_string(),
                lon.to_string(),
                size.to_string(),
                age.to_string(),
                y.to_string(),
                split.to_string(),
            ])?;
        }
        c.flush()?;
        Ok(())
    })?;
    out.commit()
}
