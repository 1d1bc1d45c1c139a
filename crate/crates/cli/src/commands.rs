use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use clap::{ArgAction, Args, ValueEnum};
use nalgebra::DMatrix;
use pes_core::baselines::{BaselineSpec, Method};
use pes_core::io::{write_sweep_csv, ColumnNames, Table};
use pes_core::model::{IndexedDataset, PredictionSet, SplitAssignment};
use pes_core::simulation::{run_sweep, SweepSpec};
use pes_core::smoother::{group_rows, nadaraya_watson_matrix, SmootherSpec};
use pes_core::theory::{estimate_gamma_beta, optimal_c_star, theorem1_bound};
use pes_core::tuning::{
    linspace, logspace, tune_baseline, tune_baseline_kfold, tune_pes_with, GridSpec, Metric, SmoothingScope,
    TuneOptions,
};
use pes_core::PesError;

use crate::output::{check_parent, Staged};
use crate::ColumnArgs;

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MetricArg {
    Mse,
    R2,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Mse => Metric::Mse,
            MetricArg::R2 => Metric::R2,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScopeArg {
    Transductive,
    HoldoutOnly,
}

fn read_table(path: &Path) -> anyhow::Result<Table> {
    Table::from_path(path).with_context(|| format!("reading {}", path.display()))
}

/// Inline JSON when the value starts with `{`, otherwise a file path.
fn json_text(value: &str) -> anyhow::Result<String> {
    if value.trim_start().starts_with('{') {
        return Ok(value.to_string());
    }
    std::fs::read_to_string(value).with_context(|| format!("reading {value}"))
}

fn select(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    m.select_rows(rows)
}

#[derive(Debug, Args)]
pub struct SmoothArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Gaussian kernel bandwidth.
    #[arg(long)]
    pub sigma: f64,
    /// Mixing weight: 0 leaves predictions untouched, 1 is full smoothing.
    #[arg(long)]
    pub c: f64,
    /// Smooth across groups even when a group column is present.
    #[arg(long)]
    pub ignore_groups: bool,
    #[command(flatten)]
    pub columns: ColumnArgs,
}

pub fn smooth(a: &SmoothArgs) -> anyhow::Result<()> {
    let names = a.columns.names()?;
    check_parent(&a.output)?;
    let spec = SmootherSpec::new(a.sigma, a.c)?;
    let mut table = read_table(&a.input)?;
    let p = PredictionSet::new(table.predictions(&names)?, None, table.indices(&names)?)?;
    let smoothed = match table.groups(&names).filter(|_| !a.ignore_groups) {
        Some(groups) => spec.apply_grouped(&p, &groups)?,
        None => spec.apply(&p)?,
    };
    table.set_predictions(&names, smoothed.predictions())?;
    let mut out = Staged::new();
    out.write(&a.output, |w| Ok(table.write(w)?))?;
    out.commit()
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    /// CSV with predictions, indices, labels and a split column.
    #[arg(long)]
    pub input: PathBuf,
    /// Per-cell validation scores.
    #[arg(long)]
    pub output: PathBuf,
    /// Also write the one-line summary here.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', action = ArgAction::Set, num_args = 1)]
    pub sigma_values: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', action = ArgAction::Set, num_args = 1)]
    pub c_values: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value = "mse")]
    pub metric: MetricArg,
    #[arg(long, value_enum, default_value = "transductive")]
    pub scope: ScopeArg,
    /// Allow grids without c = 0.
    #[arg(long)]
    pub no_robust: bool,
    /// Report negative holdout R^2 unclipped.
    #[arg(long)]
    pub no_clip: bool,
    #[command(flatten)]
    pub columns: ColumnArgs,
}

pub fn tune(a: &TuneArgs) -> anyhow::Result<()> {
    let names = a.columns.names()?;
    check_parent(&a.output)?;
    if let Some(s) = &a.summary {
        check_parent(s)?;
    }
    let grid = GridSpec::new(
        a.sigma_values.clone().unwrap_or_else(|| logspace(-4.0, 0.0, 5)),
        a.c_values.clone().unwrap_or_else(|| linspace(0.0, 1.0, 11)),
        !a.no_robust,
    )?;
    let table = read_table(&a.input)?;
    let split = table.split(&names)?;
    let (val, hold) = (&split.validation_rows, &split.holdout_rows);
    if val.is_empty() {
        bail!("no validation rows in column `{}`", names.split);
    }
    // Training rows play no part, so only validation and holdout rows are parsed.
    let rows: Vec<usize> = val.iter().chain(hold).copied().collect();
    let p = PredictionSet::new(
        table.numbered_matrix(&names.prediction_prefix, &rows)?,
        None,
        table.numbered_matrix(&names.index_prefix, &rows)?,
    )?;
    let local = SplitAssignment::new(vec![], (0..val.len()).collect(), (val.len()..rows.len()).collect(), rows.len())?;
    let val_labels = table
        .numbered_matrix(&names.label_prefix, val)
        .context("validation rows need labels")?;
    let hold_labels = if !hold.is_empty() && table.any_filled(&names.label_prefix, hold) {
        Some(table.numbered_matrix(&names.label_prefix, hold)?)
    } else {
        None
    };
    let opts = TuneOptions {
        metric: a.metric.into(),
        scope: match a.scope {
            ScopeArg::Transductive => SmoothingScope::Transductive,
            ScopeArg::HoldoutOnly => SmoothingScope::HoldoutOnly,
        },
        clip_holdout_r2: !a.no_clip,
    };
    let report = tune_pes_with(&p, &val_labels, hold_labels.as_ref(), &local, &grid, &opts)?;
    let summary = report.summary();
    let mut out = Staged::new();
    out.write(&a.output, |w| Ok(report.write_csv(w)?))?;
    if let Some(s) = &a.summary {
        out.write(s, |w| Ok(writeln!(w, "{summary}")?))?;
    }
    out.commit()?;
    println!("{summary}");
    Ok(())
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Sweep specification: a JSON file, or inline JSON.
    #[arg(long)]
    pub spec: String,
    #[arg(long)]
    pub output: PathBuf,
}

pub fn simulate(a: &SimulateArgs, seed: Option<u64>) -> anyhow::Result<()> {
    check_parent(&a.output)?;
    let text = json_text(&a.spec)?;
    let mut spec: SweepSpec = serde_json::from_str(&text).map_err(|e| anyhow!("sweep spec: {e}"))?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    let cells = spec.cells()?;
    let results = run_sweep(&cells);
    for (cfg, r) in cells.iter().zip(&results) {
        if let Err(e) = r {
            eprintln!(
                "warning: cell sigma_x={} sigma_y={} estimator={} failed: {e}",
                cfg.sigma_x,
                cfg.sigma_y,
                cfg.estimator.name()
            );
        }
    }
    let mut out = Staged::new();
    out.write(&a.output, |w| Ok(write_sweep_csv(w, &cells, &results)?))?;
    out.commit()
}

#[derive(Debug, Args)]
pub struct TheoryArgs {
    /// CSV with predictions, labels and indices.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub sigma: f64,
    #[arg(long)]
    pub output: PathBuf,
    /// Column that separates independent draws over the same indices.
    #[arg(long, default_value = "trial")]
    pub trial_column: String,
    #[command(flatten)]
    pub columns: ColumnArgs,
}

fn na(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "NA".into())
}

pub fn theory(a: &TheoryArgs) -> anyhow::Result<()> {
    let names = a.columns.names()?;
    check_parent(&a.output)?;
    let table = read_table(&a.input)?;
    let p = table.prediction_set(&names)?;
    let labels = p.labels().ok_or(PesError::MissingLabels("theory"))?;
    let trial_rows: Vec<Vec<usize>> = match table.text_column(&a.trial_column) {
        Some(col) => group_rows(&col).into_values().collect(),
        None => vec![(0..table.len()).collect()],
    };
    let t0 = select(p.indices(), &trial_rows[0]);
    for rows in &trial_rows[1..] {
        if select(p.indices(), rows) != t0 {
            bail!("every trial must use the same index values in the same order");
        }
    }
    let w = nadaraya_watson_matrix(&t0, a.sigma)?;
    let trials: Vec<(DMatrix<f64>, DMatrix<f64>)> = trial_rows
        .iter()
        .map(|r| (select(labels, r), select(p.predictions(), r)))
        .collect();
    let gb = estimate_gamma_beta(&w, &trials)?;
    let n = w.dim();
    let gap = gb.smoothed_sq_err;
    let c_star = optimal_c_star(&gb, gap).ok();
    let bound = theorem1_bound(&gb, gap, n).ok();
    let applicable = gb.theorem_applicable();

    let rows: Vec<(&str, String)> = vec![
        ("n", n.to_string()),
        ("trials", gb.trials.to_string()),
        ("sigma", a.sigma.to_string()),
        ("gamma", gb.gamma.to_string()),
        ("beta", gb.beta.to_string()),
        ("gamma_plus_beta", gb.effective_gamma().to_string()),
        ("mean_sq_err", gb.mean_sq_err.to_string()),
        ("smoothed_sq_err", gb.smoothed_sq_err.to_string()),
        ("c_star", na(c_star)),
        ("bound", na(bound)),
        ("applicable", applicable.to_string()),
        ("plug_in", gb.is_plug_in().to_string()),
    ];
    let mut out = Staged::new();
    out.write(&a.output, |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["quantity", "value"])?;
        for (k, v) in &rows {
            c.write_record([*k, v.as_str()])?;
        }
        c.flush()?;
        Ok(())
    })?;
    out.commit()?;
    println!(
        "gamma+beta={} verdict={}",
        gb.effective_gamma(),
        if applicable { "applicable" } else { "not applicable" }
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    /// One CSV with a split column, instead of --train/--validation/--test.
    #[arg(long, conflicts_with_all = ["train", "validation", "test"])]
    pub input: Option<PathBuf>,
    #[arg(long, requires_all = ["validation", "test"])]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub validation: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Methods to run; several methods write one prediction file each.
    #[arg(long, value_delimiter = ',', action = ArgAction::Set, num_args = 1, required = true)]
    pub method: Vec<String>,
    /// Hyperparameter grids keyed by method, as a JSON file or inline JSON.
    /// Methods left out use their default grid.
    #[arg(long)]
    pub grid: Option<String>,
    /// Tune by k-fold cross-validation on the training rows.
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long, value_enum, default_value = "mse")]
    pub metric: MetricArg,
    /// Validation and holdout predictions. With several methods the method
    /// name is added before the extension.
    #[arg(long)]
    pub output: PathBuf,
    /// Score and timing summary, one row per method.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    #[command(flatten)]
    pub columns: ColumnArgs,
}

struct Target {
    features: DMatrix<f64>,
    indices: DMatrix<f64>,
    labels: Option<DMatrix<f64>>,
}

impl Target {
    fn load(table: &Table, names: &ColumnNames, rows: &[usize]) -> anyhow::Result<Self> {
        let labels = if table.any_filled(&names.label_prefix, rows) {
            Some(table.numbered_matrix(&names.label_prefix, rows)?)
        } else {
            None
        };
        Ok(Self {
            features: table.numbered_matrix(&names.feature_prefix, rows)?,
            indices: table.numbered_matrix(&names.index_prefix, rows)?,
            labels,
        })
    }
}

fn all_rows(t: &Table) -> Vec<usize> {
    (0..t.len()).collect()
}

fn load_baseline_data(a: &BaselineArgs, names: &ColumnNames) -> anyhow::Result<(IndexedDataset, Target, Target)> {
    match (&a.input, &a.train, &a.validation, &a.test) {
        (Some(input), None, None, None) => {
            let t = read_table(input)?;
            let s = t.split(names)?;
            if s.train_rows.is_empty() || s.validation_rows.is_empty() || s.holdout_rows.is_empty() {
                bail!("{}: need train, validation and holdout rows", input.display());
            }
            Ok((
                t.dataset(names, &s.train_rows)?,
                Target::load(&t, names, &s.validation_rows)?,
                Target::load(&t, names, &s.holdout_rows)?,
            ))
        }
        (None, Some(tr), Some(va), Some(te)) => {
            let (tr, va, te) = (read_table(tr)?, read_table(va)?, read_table(te)?);
            Ok((
                tr.dataset(names, &all_rows(&tr))?,
                Target::load(&va, names, &all_rows(&va))?,
                Target::load(&te, names, &all_rows(&te))?,
            ))
        }
        _ => bail!("give either --input or all of --train, --validation and --test"),
    }
}

fn method_output(path: &Path, method: Method, several: bool) -> PathBuf {
    if !several {
        return path.to_path_buf();
    }
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}.{}.{}", method.name(), ext.to_string_lossy()),
        None => format!("{stem}.{}", method.name()),
    };
    path.with_file_name(name)
}

fn write_baseline_predictions(
    w: &mut dyn Write,
    names: &ColumnNames,
    parts: [(&Target, &DMatrix<f64>, &str); 2],
) -> anyhow::Result<()> {
    let first = parts[0].0;
    let (dt, dy) = (first.indices.ncols(), parts[0].1.ncols());
    let with_labels = parts.iter().any(|(t, _, _)| t.labels.is_some());
    let mut header: Vec<String> = (0..dt).map(|j| format!("{}{j}", names.index_prefix)).collect();
    header.extend((0..dy).map(|j| format!("{}{j}", names.prediction_prefix)));
    if with_labels {
        header.extend((0..dy).map(|j| format!("{}{j}", names.label_prefix)));
    }
    header.push(names.split.clone());
    let mut c = csv::Writer::from_writer(w);
    c.write_record(&header)?;
    for (target, preds, tag) in parts {
        for i in 0..preds.nrows() {
            let mut rec: Vec<String> = target.indices.row(i).iter().map(f64::to_string).collect();
            rec.extend(preds.row(i).iter().map(f64::to_string));
            if with_labels {
                match &target.labels {
                    Some(l) => rec.extend(l.row(i).iter().map(f64::to_string)),
                    None => rec.extend(std::iter::repeat_n(String::new(), dy)),
                }
            }
            rec.push(tag.to_string());
            c.write_record(&rec)?;
        }
    }
    c.flush()?;
    Ok(())
}

struct MethodSummary {
    method: Method,
    best: BaselineSpec,
    grid_size: usize,
    validation: f64,
    holdout: Option<f64>,
    seconds: f64,
}

fn parse_grids(text: Option<&str>) -> anyhow::Result<BTreeMap<Method, BTreeMap<String, Vec<f64>>>> {
    match text {
        None => Ok(BTreeMap::new()),
        Some(v) => serde_json::from_str(&json_text(v)?).map_err(|e| anyhow!("--grid: {e}")),
    }
}

pub fn baseline(a: &BaselineArgs, seed: u64) -> anyhow::Result<()> {
    let names = a.columns.names()?;
    let methods: Vec<Method> = a
        .method
        .iter()
        .map(|m| {
            Method::parse(m).ok_or_else(|| {
                let known: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
                anyhow!("unknown method `{m}` (expected one of {})", known.join(", "))
            })
        })
        .collect::<anyhow::Result<_>>()?;
    let several = methods.len() > 1;
    for &m in &methods {
        check_parent(&method_output(&a.output, m, several))?;
    }
    if let Some(s) = &a.summary {
        check_parent(s)?;
    }
    let grids = parse_grids(a.grid.as_deref())?;
    let metric: Metric = a.metric.into();
    let (train, val, test) = load_baseline_data(a, &names)?;
    let val_labels = val.labels.clone().ok_or(PesError::MissingLabels("validation rows"))?;
    let val_set = IndexedDataset::new(val.features.clone(), val_labels.clone(), val.indices.clone())?;

    let mut out = Staged::new();
    let mut summaries = Vec::new();
    for &method in &methods {
        let grid = grids.get(&method).cloned().unwrap_or_else(|| method.default_grid());
        let specs = BaselineSpec::expand_grid(method, &grid, seed).with_context(|| format!("{method} grid"))?;
        let start = Instant::now();
        let report = match a.folds {
            Some(k) => tune_baseline_kfold(&train, &specs, metric, k, seed),
            None => tune_baseline(&train, &val_set, &specs, metric),
        }
        .with_context(|| format!("tuning {method}"))?;
        for (spec, s) in specs.iter().zip(&report.scores) {
            if let Err(e) = s {
                eprintln!("warning: {spec} failed: {e}");
            }
        }
        let best = report.best.clone();
        let val_pred = best
            .fit_predict(&train, &val.features, &val.indices)
            .with_context(|| format!("refitting {best}"))?;
        let test_pred = best
            .fit_predict(&train, &test.features, &test.indices)
            .with_context(|| format!("refitting {best}"))?;
        let seconds = start.elapsed().as_secs_f64();
        let validation = metric.evaluate(&val_labels, &val_pred, false)?;
        let holdout = match &test.labels {
            Some(l) => Some(metric.evaluate(l, &test_pred, true)?),
            None => None,
        };
        out.write(&method_output(&a.output, method, several), |w| {
            write_baseline_predictions(
                w,
                &names,
                [(&val, &val_pred, "validation"), (&test, &test_pred, "holdout")],
            )
        })?;
        println!(
            "method={method} best={best} validation={validation} holdout={} seconds={seconds:.3}",
            na(holdout)
        );
        summaries.push(MethodSummary {
            method,
            best,
            grid_size: specs.len(),
            validation,
            holdout,
            seconds,
        });
    }
    if let Some(path) = &a.summary {
        out.write(path, |w| {
            let mut c = csv::Writer::from_writer(w);
            c.write_record([
                "method",
                "hyperparameters",
                "num_hyperparameters",
                "grid_size",
                "validation_score",
                "holdout_score",
                "seconds",
            ])?;
            for s in &summaries {
                let hps: Vec<String> = s.best.hyperparameters().iter().map(|(k, v)| format!("{k}={v}")).collect();
                c.write_record([
                    s.method.name().to_string(),
                    hps.join(";"),
                    s.method.hyperparameter_names().len().to_string(),
                    s.grid_size.to_string(),
                    s.validation.to_string(),
                    na(s.holdout),
                    s.seconds.to_string(),
                ])?;
            }
            c.flush()?;
            Ok(())
        })?;
    }
    out.commit()
}
