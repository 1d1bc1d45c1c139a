use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn pes(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pes"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn pes")
}

fn ok(args: &[&str], dir: &Path) -> String {
    let out = pes(args, dir);
    assert!(
        out.status.success(),
        "pes {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn err(args: &[&str], dir: &Path) -> String {
    let out = pes(args, dir);
    assert!(!out.status.success(), "pes {args:?} unexpectedly succeeded");
    String::from_utf8(out.stderr).unwrap()
}

struct Csv {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Csv {
    fn read(p: &Path) -> Self {
        let text = fs::read_to_string(p).unwrap();
        let mut lines = text.lines();
        let header = lines.next().unwrap().split(',').map(str::to_string).collect();
        let rows = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
        Csv { header, rows }
    }

    fn col(&self, name: &str) -> Vec<String> {
        let j = self.header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"));
        self.rows.iter().map(|r| r[j].clone()).collect()
    }

    fn num(&self, name: &str) -> Vec<f64> {
        self.col(name).iter().map(|s| s.parse().unwrap()).collect()
    }
}

fn quantities(p: &Path) -> Vec<(String, String)> {
    let c = Csv::read(p);
    c.rows.into_iter().map(|r| (r[0].clone(), r[1].clone())).collect()
}

fn quantity(p: &Path, key: &str) -> String {
    quantities(p).into_iter().find(|(k, _)| k == key).unwrap().1
}

fn summary_value(s: &str, key: &str) -> f64 {
    s.split_whitespace()
        .find_map(|kv| kv.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("{key} missing from {s}"))
        .parse()
        .unwrap()
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn smooth_with_c_zero_leaves_file_unchanged() {
    let d = TempDir::new().unwrap();
    let input = "t0,yhat0,note\n0,1.50,a\n0.5,2.0000,b\n1,-3e-1,c\n";
    write(&d, "in.csv", input);
    ok(&["smooth", "--input", "in.csv", "--output", "out.csv", "--sigma", "0.3", "--c", "0"], d.path());
    assert_eq!(fs::read_to_string(d.path().join("out.csv")).unwrap(), input);
}

#[test]
fn smooth_two_rows() {
    let d = TempDir::new().unwrap();
    write(&d, "in.csv", "t0,yhat0\n0,0\n1,10\n");
    ok(&["smooth", "--input", "in.csv", "--output", "out.csv", "--sigma", "1", "--c", "0.5"], d.path());
    let y = Csv::read(&d.path().join("out.csv")).num("yhat0");
    assert!((y[0] - 1.8877).abs() < 1e-3 && (y[1] - 8.1123).abs() < 1e-3, "{y:?}");
}

#[test]
fn groups_are_smoothed_independently() {
    let d = TempDir::new().unwrap();
    let a = [(0.0, 1.0), (0.1, 4.0), (0.3, 2.0)];
    let b = [(0.05, 10.0), (0.2, -5.0)];
    let mut mixed = String::from("t0,yhat0,group\n");
    let mut only_a = String::from("t0,yhat0\n");
    let mut only_b = only_a.clone();
    for (i, (t, y)) in [a[0], b[0], a[1], b[1], a[2]].iter().enumerate() {
        let g = if i % 2 == 0 { "a" } else { "b" };
        mixed += &format!("{t},{y},{g}\n");
        *(if g == "a" { &mut only_a } else { &mut only_b }) += &format!("{t},{y}\n");
    }
    write(&d, "mixed.csv", &mixed);
    write(&d, "a.csv", &only_a);
    write(&d, "b.csv", &only_b);
    for (i, o) in [("mixed.csv", "m.out"), ("a.csv", "a.out"), ("b.csv", "b.out")] {
        ok(&["smooth", "--input", i, "--output", o, "--sigma", "0.2", "--c", "0.7"], d.path());
    }
    let m = Csv::read(&d.path().join("m.out")).col("yhat0");
    let ya = Csv::read(&d.path().join("a.out")).col("yhat0");
    let yb = Csv::read(&d.path().join("b.out")).col("yhat0");
    assert_eq!(vec![m[0].clone(), m[2].clone(), m[4].clone()], ya);
    assert_eq!(vec![m[1].clone(), m[3].clone()], yb);

    ok(&["smooth", "--input", "mixed.csv", "--output", "x.out", "--sigma", "0.2", "--c", "0.7", "--ignore-groups"], d.path());
    assert_ne!(Csv::read(&d.path().join("x.out")).col("yhat0"), m);
}

#[test]
fn smooth_reports_the_offending_line() {
    let d = TempDir::new().unwrap();
    write(&d, "in.csv", "t0,yhat0\n0,1\n1,oops\n");
    let e = err(&["smooth", "--input", "in.csv", "--output", "o.csv", "--sigma", "1", "--c", "0.5"], d.path());
    assert!(e.contains("line 3") && e.contains("yhat0"), "{e}");
    write(&d, "ok.csv", "t0,yhat0\n0,1\n1,2\n");
    let e = err(&["smooth", "--input", "ok.csv", "--output", "o.csv", "--sigma", "1", "--c", "0.5", "--columns", r#"{"index_prefix": "time"}"#], d.path());
    assert!(e.contains("time0"), "{e}");
    assert!(!d.path().join("o.csv").exists());
}

fn example1_splits(d: &TempDir, name: &str, seed: &str) {
    ok(&["--seed", seed, "generate", "example1", "--n", "150", "--with-splits", "--output", name], d.path());
}

#[test]
fn single_cell_grid_reports_the_unsmoothed_holdout_score() {
    let d = TempDir::new().unwrap();
    example1_splits(&d, "e.csv", "4");
    let s = ok(&["tune", "--input", "e.csv", "--output", "r.csv", "--sigma-values", "1", "--c-values", "0"], d.path());
    assert_eq!(summary_value(&s, "holdout"), summary_value(&s, "unsmoothed_holdout"));
    assert_eq!(Csv::read(&d.path().join("r.csv")).rows.len(), 1);
}

#[test]
fn default_grid_has_55_cells_and_reruns_are_identical() {
    let d = TempDir::new().unwrap();
    example1_splits(&d, "e1.csv", "9");
    example1_splits(&d, "e2.csv", "9");
    assert_eq!(fs::read(d.path().join("e1.csv")).unwrap(), fs::read(d.path().join("e2.csv")).unwrap());
    ok(&["tune", "--input", "e1.csv", "--output", "r1.csv", "--summary", "s1.txt"], d.path());
    ok(&["tune", "--input", "e2.csv", "--output", "r2.csv", "--summary", "s2.txt"], d.path());
    let r = Csv::read(&d.path().join("r1.csv"));
    assert_eq!(r.rows.len(), 55);
    assert_eq!(r.num("selected").iter().sum::<f64>(), 1.0);
    for (a, b) in [("r1.csv", "r2.csv"), ("s1.txt", "s2.txt")] {
        assert_eq!(fs::read(d.path().join(a)).unwrap(), fs::read(d.path().join(b)).unwrap());
    }
    let s = fs::read_to_string(d.path().join("s1.txt")).unwrap();
    assert!(summary_value(&s, "validation") <= summary_value(&s, "unsmoothed_validation"));
}

#[test]
fn tune_without_holdout_labels() {
    let d = TempDir::new().unwrap();
    write(
        &d,
        "p.csv",
        "t0,yhat0,y0,split\n0,1,1.1,validation\n0.1,2,1.7,validation\n0.2,1.5,1.4,validation\n0.15,1.2,,holdout\n",
    );
    let s = ok(&["tune", "--input", "p.csv", "--output", "r.csv", "--sigma-values", "0.1,1"], d.path());
    assert!(s.contains("holdout=NA"), "{s}");
}

#[test]
fn config_supplies_flags_and_explicit_flags_win() {
    let d = TempDir::new().unwrap();
    example1_splits(&d, "e.csv", "2");
    write(&d, "cfg.json", r#"{"tune": {"sigma_values": [0.01, 1], "c_values": [0], "metric": "r2"}}"#);
    ok(&["--config", "cfg.json", "tune", "--input", "e.csv", "--output", "a.csv"], d.path());
    assert_eq!(Csv::read(&d.path().join("a.csv")).rows.len(), 2);
    let s = ok(&["--config", "cfg.json", "tune", "--input", "e.csv", "--output", "b.csv", "--c-values", "0,0.5,1"], d.path());
    assert_eq!(Csv::read(&d.path().join("b.csv")).rows.len(), 6);
    assert!(s.contains("metric=r2"));

    write(&d, "bad.json", r#"{"tune": {"sigma_valuez": [1]}}"#);
    let e = err(&["--config", "bad.json", "tune", "--input", "e.csv", "--output", "c.csv"], d.path());
    assert!(e.contains("sigma-valuez"), "{e}");
    write(&d, "bad2.json", r#"{"colour": 1}"#);
    let e = err(&["--config", "bad2.json", "tune", "--input", "e.csv", "--output", "c.csv"], d.path());
    assert!(e.contains("colour"), "{e}");
}

#[test]
fn simulate_single_cell_and_sweep() {
    let d = TempDir::new().unwrap();
    write(&d, "one.json", r#"{"n": 100, "sigma_x": 0.5, "sigma_y": 0.1, "trials": 1}"#);
    ok(&["simulate", "--spec", "one.json", "--output", "one.csv"], d.path());
    let one = Csv::read(&d.path().join("one.csv"));
    assert_eq!(one.rows.len(), 1);
    assert_eq!(one.col("status"), vec!["ok"]);

    let spec = r#"{"n": 2000, "c_sig": 1, "sigma_x": [0.25, 0.5, 1.0], "sigma_y": 0.1, "estimator": ["tls", "ols"], "trials": 10}"#;
    ok(&["--seed", "11", "simulate", "--spec", spec, "--output", "sweep.csv"], d.path());
    let s = Csv::read(&d.path().join("sweep.csv"));
    assert_eq!(s.rows.len(), 6);
    let est = s.col("estimator");
    for ((sx, m), e) in s.num("sigma_x").iter().zip(s.num("mse_unsmoothed_mean")).zip(&est) {
        let target = 0.01 + sx * sx;
        if e == "tls" {
            assert!((m - target).abs() / target < 0.15, "sigma_x={sx}: {m} vs {target}");
        }
    }
    assert_eq!(est.iter().filter(|e| *e == "ols").count(), 3);
    for (o, f) in s.num("mse_oracle_mean").iter().zip(s.num("floor")) {
        assert!(*o > 0.5 * f);
    }
}

#[test]
fn simulate_rejects_bad_fields() {
    let d = TempDir::new().unwrap();
    let e = err(&["simulate", "--spec", r#"{"n": 50, "sigma_x": -1, "sigma_y": 0.1}"#, "--output", "s.csv"], d.path());
    assert!(e.contains("sigma_x"), "{e}");
    let e = err(&["simulate", "--spec", r#"{"n": 50, "sigmax": 1, "sigma_y": 0.1}"#, "--output", "s.csv"], d.path());
    assert!(e.contains("sigmax"), "{e}");
    assert!(!d.path().join("s.csv").exists());
}

#[test]
fn theory_verdicts() {
    let d = TempDir::new().unwrap();
    ok(&["--seed", "5", "generate", "example1", "--n", "200", "--trials", "8", "--output", "e.csv"], d.path());

    ok(&["theory", "--input", "e.csv", "--sigma", "1e-8", "--output", "id.csv"], d.path());
    let id = d.path().join("id.csv");
    assert!((quantity(&id, "gamma").parse::<f64>().unwrap() - 1.0).abs() < 1e-9);
    assert!(quantity(&id, "beta").parse::<f64>().unwrap().abs() < 1e-9);
    assert_eq!(quantity(&id, "applicable"), "false");
    assert_eq!(quantity(&id, "c_star"), "NA");

    let out = ok(&["theory", "--input", "e.csv", "--sigma", "0.02", "--output", "sm.csv"], d.path());
    assert!(out.contains("verdict=applicable"), "{out}");
    let sm = d.path().join("sm.csv");
    assert_eq!(quantity(&sm, "applicable"), "true");
    assert_eq!(quantity(&sm, "trials"), "8");
    let c: f64 = quantity(&sm, "c_star").parse().unwrap();
    assert!(c > 0.0 && c <= 0.5, "{c}");
    assert!(quantity(&sm, "bound").parse::<f64>().unwrap() < 0.0);

    write(&d, "perfect.csv", "t0,yhat0,y0\n0,1,1\n1,2,2\n2,3,3\n");
    let e = err(&["theory", "--input", "perfect.csv", "--sigma", "1", "--output", "p.csv"], d.path());
    assert!(e.contains("E[||eps||^2] != 0"), "{e}");
    assert!(!d.path().join("p.csv").exists());
}

fn linear_split_data(d: &TempDir) {
    let mut s = String::from("t0,x0,x1,y0,split\n");
    for i in 0..60 {
        let t = i as f64 / 59.0;
        let (x0, x1) = ((i * 7 % 13) as f64 / 13.0, (i * 5 % 11) as f64 - 5.0);
        let y = 2.0 * x0 - 0.5 * x1 + 1.0;
        let split = ["train", "train", "train", "validation", "holdout"][i % 5];
        s += &format!("{t},{x0},{x1},{y},{split}\n");
    }
    write(d, "lin.csv", &s);
}

#[test]
fn ridge_recovers_noiseless_linear_data() {
    let d = TempDir::new().unwrap();
    linear_split_data(&d);
    ok(
        &[
            "baseline", "--input", "lin.csv", "--method", "ridge", "--metric", "r2", "--output", "p.csv", "--summary", "s.csv",
            "--grid", r#"{"ridge": {"lambda": [1e-12, 1]}}"#,
        ],
        d.path(),
    );
    let s = Csv::read(&d.path().join("s.csv"));
    assert!((s.num("holdout_score")[0] - 1.0).abs() < 1e-9);
    assert_eq!(s.num("grid_size"), vec![2.0]);
}

#[test]
fn baseline_then_unsmoothed_pipeline_keeps_scores() {
    let d = TempDir::new().unwrap();
    ok(&["--seed", "3", "generate", "spatial", "--n", "200", "--output", "sp.csv"], d.path());
    let s1 = ok(&["--seed", "1", "baseline", "--input", "sp.csv", "--method", "ridge", "--output", "p.csv"], d.path());
    ok(&["smooth", "--input", "p.csv", "--output", "p0.csv", "--sigma", "0.1", "--c", "0"], d.path());
    assert_eq!(fs::read(d.path().join("p.csv")).unwrap(), fs::read(d.path().join("p0.csv")).unwrap());

    let t = ok(&["tune", "--input", "p0.csv", "--output", "r.csv", "--sigma-values", "0.1", "--c-values", "0"], d.path());
    let holdout = summary_value(&s1, "holdout");
    assert!((summary_value(&t, "unsmoothed_holdout") - holdout).abs() <= 1e-12 * holdout.abs());
    assert!((summary_value(&t, "unsmoothed_validation") - summary_value(&s1, "validation")).abs() <= 1e-12);
}

#[test]
fn multi_method_summary_accounts_for_time_and_hyperparameters() {
    let d = TempDir::new().unwrap();
    ok(&["--seed", "8", "generate", "spatial", "--n", "150", "--output", "sp.csv"], d.path());
    ok(
        &[
            "--seed", "8", "baseline", "--input", "sp.csv", "--method", "laprls,hem,gpr", "--metric", "r2", "--output", "p.csv",
            "--summary", "s.csv",
        ],
        d.path(),
    );
    let s = Csv::read(&d.path().join("s.csv"));
    assert_eq!(s.col("method"), vec!["laprls", "hem", "gpr"]);
    assert_eq!(s.num("num_hyperparameters"), vec![3.0, 2.0, 3.0]);
    assert!(s.num("seconds").iter().all(|t| *t >= 0.0));
    for m in ["laprls", "hem", "gpr"] {
        let p = Csv::read(&d.path().join(format!("p.{m}.csv")));
        assert_eq!(p.header, vec!["t0", "t1", "yhat0", "y0", "split"]);
        assert_eq!(p.rows.len(), 60);
    }
}

#[test]
fn failed_runs_leave_no_outputs() {
    let d = TempDir::new().unwrap();
    ok(&["--seed", "8", "generate", "spatial", "--n", "100", "--output", "sp.csv"], d.path());
    let e = err(
        &[
            "baseline", "--input", "sp.csv", "--method", "ridge,hem", "--output", "p.csv", "--summary", "s.csv", "--grid",
            r#"{"hem": {"sigma_graph": [1e-6], "eta": [1]}}"#,
        ],
        d.path(),
    );
    assert!(e.contains("hem(eta=1, sigma_graph=0.000001)"), "{e}");
    for f in ["p.ridge.csv", "p.hem.csv", "s.csv"] {
        assert!(!d.path().join(f).exists(), "{f} left behind");
    }
    let e = err(&["smooth", "--input", "sp.csv", "--output", "missing/o.csv", "--sigma", "1", "--c", "0"], d.path());
    assert!(e.contains("does not exist"), "{e}");
}

#[test]
fn written_values_round_trip() {
    let d = TempDir::new().unwrap();
    write(&d, "in.csv", "t0,yhat0\n0,0.1\n0.3,0.7\n0.9,-2.5\n");
    ok(&["smooth", "--input", "in.csv", "--output", "o.csv", "--sigma", "0.37", "--c", "0.41"], d.path());
    for v in Csv::read(&d.path().join("o.csv")).col("yhat0") {
        let x: f64 = v.parse().unwrap();
        assert_eq!(x.to_string(), v);
    }
}
