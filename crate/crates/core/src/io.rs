//! CSV tables of indexed predictions, and the sweep results table.
//!
//! Column conventions: index columns `t0, t1, ...`, predictions `yhat0, ...`,
//! labels `y0, ...`, an optional `group` column and an optional `split`
//! column (`train`, `validation`/`val`, `holdout`/`test`). Other columns are
//! carried through untouched.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{PesError, Result};
use crate::model::{IndexedDataset, PredictionSet, SplitAssignment};
use crate::simulation::SimResult;

/// Names used to locate columns. Numbered families are matched as
/// `prefix0, prefix1, ...` until the first gap.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnNames {
    pub index_prefix: String,
    pub prediction_prefix: String,
    pub label_prefix: String,
    pub feature_prefix: String,
    pub group: String,
    pub split: String,
}

impl Default for ColumnNames {
    fn default() -> Self {
        Self {
            index_prefix: "t".into(),
            prediction_prefix: "yhat".into(),
            label_prefix: "y".into(),
            feature_prefix: "x".into(),
            group: "group".into(),
            split: "split".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitTag {
    Train,
    Validation,
    Holdout,
}

impl SplitTag {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Some(SplitTag::Train),
            "validation" | "val" => Some(SplitTag::Validation),
            "holdout" | "test" => Some(SplitTag::Holdout),
            _ => None,
        }
    }
}

/// A parsed table that remembers its raw cells so unknown columns survive a
/// rewrite.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
    /// File line of each data row, for diagnostics.
    lines: Vec<u64>,
}

fn numbered(headers: &[String], prefix: &str) -> Vec<usize> {
    let mut out = Vec::new();
    for k in 0.. {
        let name = format!("{prefix}{k}");
        match headers.iter().position(|h| *h == name) {
            Some(i) => out.push(i),
            None => break,
        }
    }
    out
}

impl Table {
    pub fn read<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if let Some(dup) = headers.iter().enumerate().find(|(i, h)| headers[..*i].contains(h)) {
            return Err(PesError::Csv(format!("duplicate column `{}`", dup.1)));
        }
        let mut rows = Vec::new();
        let mut lines = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            lines.push(rec.position().map(|p| p.line()).unwrap_or(0));
            rows.push(rec.iter().map(str::to_string).collect());
        }
        if rows.is_empty() {
            return Err(PesError::EmptyInput("csv has a header but no data rows"));
        }
        Ok(Self { headers, rows, lines })
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| PesError::Csv(format!("{}: {e}", path.display())))?;
        Self::read(std::io::BufReader::new(f))
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn headers(&self) -> &[String] {
        &self.headers
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    fn numbered_required(&self, prefix: &str) -> Result<Vec<usize>> {
        let cols = numbered(&self.headers, prefix);
        if cols.is_empty() {
            return Err(PesError::Csv(format!("missing column `{prefix}0`")));
        }
        Ok(cols)
    }

    fn cell(&self, row: usize, col: usize) -> Result<f64> {
        let raw = &self.rows[row][col];
        let v: f64 = raw.parse().map_err(|_| {
            PesError::Csv(format!(
                "line {}: column `{}`: cannot parse `{raw}` as a number",
                self.lines[row], self.headers[col]
            ))
        })?;
        if !v.is_finite() {
            return Err(PesError::Csv(format!(
                "line {}: column `{}`: non-finite value `{raw}`",
                self.lines[row], self.headers[col]
            )));
        }
        Ok(v)
    }

    fn matrix(&self, rows: &[usize], cols: &[usize]) -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(rows.len(), cols.len());
        for (i, &r) in rows.iter().enumerate() {
            for (j, &c) in cols.iter().enumerate() {
                m[(i, j)] = self.cell(r, c)?;
            }
        }
        Ok(m)
    }

    fn all_rows(&self) -> Vec<usize> {
        (0..self.len()).collect()
    }

    pub fn indices(&self, names: &ColumnNames) -> Result<DMatrix<f64>> {
        self.matrix(&self.all_rows(), &self.numbered_required(&names.index_prefix)?)
    }

    pub fn predictions(&self, names: &ColumnNames) -> Result<DMatrix<f64>> {
        self.matrix(&self.all_rows(), &self.numbered_required(&names.prediction_prefix)?)
    }

    pub fn features(&self, names: &ColumnNames) -> Result<DMatrix<f64>> {
        self.matrix(&self.all_rows(), &self.numbered_required(&names.feature_prefix)?)
    }

    /// A numbered column family (`prefix0, prefix1, ...`) restricted to `rows`.
    pub fn numbered_matrix(&self, prefix: &str, rows: &[usize]) -> Result<DMatrix<f64>> {
        self.matrix(rows, &self.numbered_required(prefix)?)
    }

    /// True when some cell of the family is non-empty in one of `rows`.
    pub fn any_filled(&self, prefix: &str, rows: &[usize]) -> bool {
        let cols = numbered(&self.headers, prefix);
        rows.iter().any(|&r| cols.iter().any(|&c| !self.rows[r][c].is_empty()))
    }

    /// Raw text of one column, if present.
    pub fn text_column(&self, name: &str) -> Option<Vec<&str>> {
        let c = self.column(name)?;
        Some(self.rows.iter().map(|r| r[c].as_str()).collect())
    }

    pub fn has_labels(&self, names: &ColumnNames) -> bool {
        !numbered(&self.headers, &names.label_prefix).is_empty()
    }

    /// Labels of the given rows; every one of them must be present.
    pub fn labels(&self, names: &ColumnNames, rows: &[usize]) -> Result<DMatrix<f64>> {
        self.matrix(rows, &self.numbered_required(&names.label_prefix)?)
    }

    /// Group column as strings, if present.
    pub fn groups(&self, names: &ColumnNames) -> Option<Vec<String>> {
        self.text_column(&names.group)
            .map(|v| v.into_iter().map(str::to_string).collect())
    }

    /// Split assignment from the split column.
    pub fn split(&self, names: &ColumnNames) -> Result<SplitAssignment> {
        let c = self
            .column(&names.split)
            .ok_or_else(|| PesError::Csv(format!("missing column `{}`", names.split)))?;
        let (mut tr, mut va, mut ho) = (vec![], vec![], vec![]);
        for (i, r) in self.rows.iter().enumerate() {
            match SplitTag::parse(&r[c]) {
                Some(SplitTag::Train) => tr.push(i),
                Some(SplitTag::Validation) => va.push(i),
                Some(SplitTag::Holdout) => ho.push(i),
                None => {
                    return Err(PesError::Csv(format!(
                        "line {}: column `{}`: unknown split `{}` (expected train, validation or holdout)",
                        self.lines[i], names.split, r[c]
                    )))
                }
            }
        }
        SplitAssignment::new(tr, va, ho, self.len())
    }

    /// Predictions and indices of every row; labels attached when every row
    /// has them.
    pub fn prediction_set(&self, names: &ColumnNames) -> Result<PredictionSet> {
        let labels = if self.has_labels(names) {
            Some(self.labels(names, &self.all_rows())?)
        } else {
            None
        };
        PredictionSet::new(self.predictions(names)?, labels, self.indices(names)?)
    }

    /// Features, labels and indices of the given rows.
    pub fn dataset(&self, names: &ColumnNames, rows: &[usize]) -> Result<IndexedDataset> {
        IndexedDataset::new(
            self.matrix(rows, &self.numbered_required(&names.feature_prefix)?)?,
            self.labels(names, rows)?,
            self.matrix(rows, &self.numbered_required(&names.index_prefix)?)?,
        )
    }

    /// Overwrites the prediction columns. Cells whose parsed value is
    /// bitwise unchanged keep their original text.
    pub fn set_predictions(&mut self, names: &ColumnNames, values: &DMatrix<f64>) -> Result<()> {
        let cols = self.numbered_required(&names.prediction_prefix)?;
        if values.nrows() != self.len() || values.ncols() != cols.len() {
            return Err(PesError::Shape {
                what: "predictions",
                expected: format!("{}x{}", self.len(), cols.len()),
                got: format!("{}x{}", values.nrows(), values.ncols()),
            });
        }
        for (i, row) in self.rows.iter_mut().enumerate() {
            for (j, &c) in cols.iter().enumerate() {
                let v = values[(i, j)];
                let same = row[c].parse::<f64>().is_ok_and(|old| old.to_bits() == v.to_bits());
                if !same {
                    row[c] = v.to_string();
                }
            }
        }
        Ok(())
    }

    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.headers)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush().map_err(|e| PesError::Csv(e.to_string()))
    }
}

fn push_matrix_headers(h: &mut Vec<String>, prefix: &str, m: &DMatrix<f64>) {
    h.extend((0..m.ncols()).map(|j| format!("{prefix}{j}")));
}

/// Writes `t*, yhat*` and, when present, `y*` columns.
pub fn write_prediction_csv<W: Write>(out: W, p: &PredictionSet, names: &ColumnNames) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut h = Vec::new();
    push_matrix_headers(&mut h, &names.index_prefix, p.indices());
    push_matrix_headers(&mut h, &names.prediction_prefix, p.predictions());
    if let Some(l) = p.labels() {
        push_matrix_headers(&mut h, &names.label_prefix, l);
    }
    w.write_record(&h)?;
    for i in 0..p.len() {
        let mut rec: Vec<String> = p.indices().row(i).iter().map(f64::to_string).collect();
        rec.extend(p.predictions().row(i).iter().map(f64::to_string));
        if let Some(l) = p.labels() {
            rec.extend(l.row(i).iter().map(f64::to_string));
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| PesError::Csv(e.to_string()))
}

pub const SWEEP_COLUMNS: [&str; 20] = [
    "sigma_x",
    "sigma_y",
    "c_sig",
    "n",
    "estimator",
    "trials",
    "mse_unsmoothed_mean",
    "mse_unsmoothed_min",
    "mse_unsmoothed_max",
    "mse_oracle_mean",
    "mse_oracle_min",
    "mse_oracle_max",
    "mse_pes_mean",
    "mse_pes_min",
    "mse_pes_max",
    "predicted_unsmoothed",
    "predicted_smoothed",
    "floor",
    "c_hat_mean",
    "status",
];

/// One row per cell. Failed cells keep their configuration columns, `NA`
/// elsewhere, and the error in `status`.
pub fn write_sweep_csv<W: Write>(
    out: W,
    cells: &[crate::simulation::SimConfig],
    results: &[Result<SimResult>],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_COLUMNS)?;
    for (cfg, r) in cells.iter().zip(results) {
        let mut rec = vec![
            cfg.sigma_x.to_string(),
            cfg.sigma_y.to_string(),
            cfg.c_sig.to_string(),
            cfg.n.to_string(),
            cfg.estimator.name().to_string(),
            cfg.trials.to_string(),
        ];
        match r {
            Ok(res) => {
                for s in [res.unsmoothed(), res.oracle(), res.pes()] {
                    rec.extend([s.mean, s.min, s.max].map(|v| v.to_string()));
                }
                rec.extend(
                    [
                        res.predicted_unsmoothed,
                        res.predicted_smoothed,
                        res.floor_sigma_y_sq,
                        res.c_hat_summary().mean,
                    ]
                    .map(|v| v.to_string()),
                );
                rec.push("ok".into());
            }
            Err(e) => {
                rec.extend(std::iter::repeat_n("NA".to_string(), 13));
                rec.push(e.to_string());
            }
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| PesError::Csv(e.to_string()))
}
