//! Evaluation matrices, CSV ingestion and JSON report emission.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{ExcirError, Result};

/// Version tag written at the top level of every JSON report.
pub const SCHEMA_VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Train,
    Validation,
    Test,
    #[default]
    Unsplit,
}

/// An `n x k` matrix of finite values with one unique name per column.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    values: DMatrix<f64>,
    feature_names: Vec<String>,
    split: SplitTag,
}

impl DataMatrix {
    /// Validates finiteness, name uniqueness and `n >= 2`.
    pub fn new(values: DMatrix<f64>, feature_names: Vec<String>) -> Result<Self> {
        if values.ncols() != feature_names.len() {
            return Err(ExcirError::mismatch(
                "feature names",
                values.ncols(),
                feature_names.len(),
            ));
        }
        if values.nrows() < 2 {
            return Err(ExcirError::invalid(format!(
                "at least 2 rows are required, got {}",
                values.nrows()
            )));
        }
        let mut seen = HashSet::new();
        for name in &feature_names {
            if !seen.insert(name.as_str()) {
                return Err(ExcirError::DuplicateHeader(name.clone()));
            }
        }
        for c in 0..values.ncols() {
            for r in 0..values.nrows() {
                if !values[(r, c)].is_finite() {
                    return Err(ExcirError::NonFinite {
                        row: r,
                        column: feature_names[c].clone(),
                    });
                }
            }
        }
        Ok(Self {
            values,
            feature_names,
            split: SplitTag::Unsplit,
        })
    }

    /// Builds a matrix from column vectors, naming columns `x0, x1, ...`
    /// when `names` is `None`.
    pub fn from_columns(columns: &[Vec<f64>], names: Option<Vec<String>>) -> Result<Self> {
        let k = columns.len();
        let n = columns.first().map_or(0, Vec::len);
        for (i, c) in columns.iter().enumerate() {
            if c.len() != n {
                return Err(ExcirError::mismatch(format!("column {i} length"), n, c.len()));
            }
        }
        let values = DMatrix::from_fn(n, k, |r, c| columns[c][r]);
        let names = names.unwrap_or_else(|| default_names(k));
        Self::new(values, names)
    }

    pub fn with_split(mut self, split: SplitTag) -> Self {
        self.split = split;
        self
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn split(&self) -> SplitTag {
        self.split
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.values.ncols()
    }

    /// Column `i` as a contiguous slice (storage is column-major).
    pub fn column(&self, i: usize) -> &[f64] {
        let n = self.n_rows();
        &self.values.as_slice()[i * n..(i + 1) * n]
    }

    pub fn row(&self, r: usize) -> Vec<f64> {
        self.values.row(r).iter().copied().collect()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let k = self.n_features();
        if let Some(&bad) = rows.iter().find(|&&r| r >= self.n_rows()) {
            return Err(ExcirError::invalid(format!("row index {bad} out of range")));
        }
        let values = DMatrix::from_fn(rows.len(), k, |r, c| self.values[(rows[r], c)]);
        let mut out = Self::new(values, self.feature_names.clone())?;
        out.split = self.split;
        Ok(out)
    }

    /// Keeps the listed columns in the listed order. Zero columns is allowed.
    pub fn select_columns(&self, cols: &[usize]) -> Result<Self> {
        if let Some(&bad) = cols.iter().find(|&&c| c >= self.n_features()) {
            return Err(ExcirError::invalid(format!("column index {bad} out of range")));
        }
        let values = DMatrix::from_fn(self.n_rows(), cols.len(), |r, c| self.values[(r, cols[c])]);
        let names = cols.iter().map(|&c| self.feature_names[c].clone()).collect();
        let mut out = Self::new(values, names)?;
        out.split = self.split;
        Ok(out)
    }

    pub(crate) fn from_parts_unchecked(
        values: DMatrix<f64>,
        feature_names: Vec<String>,
        split: SplitTag,
    ) -> Self {
        debug_assert_eq!(values.ncols(), feature_names.len());
        Self {
            values,
            feature_names,
            split,
        }
    }
}

pub(crate) fn default_names(k: usize) -> Vec<String> {
    (0..k).map(|i| format!("x{i}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    RegressionScore,
    Logit,
    Probability,
}

/// Model outputs paired row-for-row with a [`DataMatrix`]: `n x p`, `p = 1`
/// for scalar outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputBlock {
    values: DMatrix<f64>,
    kind: OutputKind,
}

impl OutputBlock {
    pub fn new(values: DMatrix<f64>, kind: OutputKind) -> Result<Self> {
        if values.ncols() == 0 {
            return Err(ExcirError::Empty("output block has no columns".into()));
        }
        for r in 0..values.nrows() {
            for c in 0..values.ncols() {
                if !values[(r, c)].is_finite() {
                    return Err(ExcirError::NonFinite {
                        row: r,
                        column: format!("output[{c}]"),
                    });
                }
            }
        }
        if kind == OutputKind::Probability {
            for r in 0..values.nrows() {
                let row = values.row(r);
                if row.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                    return Err(ExcirError::invalid(format!(
                        "probability output outside [0, 1] at row {r}"
                    )));
                }
                if values.ncols() > 1 && (row.sum() - 1.0).abs() > 1e-9 {
                    return Err(ExcirError::invalid(format!(
                        "probability row {r} does not sum to 1"
                    )));
                }
            }
        }
        Ok(Self { values, kind })
    }

    pub fn scalar(values: Vec<f64>, kind: OutputKind) -> Result<Self> {
        let n = values.len();
        Self::new(DMatrix::from_vec(n, 1, values), kind)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn kind(&self) -> OutputKind {
        self.kind
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_outputs(&self) -> usize {
        self.values.ncols()
    }

    pub fn column(&self, l: usize) -> &[f64] {
        let n = self.n_rows();
        &self.values.as_slice()[l * n..(l + 1) * n]
    }

    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        if let Some(&bad) = rows.iter().find(|&&r| r >= self.n_rows()) {
            return Err(ExcirError::invalid(format!("row index {bad} out of range")));
        }
        let values = DMatrix::from_fn(rows.len(), self.n_outputs(), |r, c| {
            self.values[(rows[r], c)]
        });
        Ok(Self {
            values,
            kind: self.kind,
        })
    }

    pub(crate) fn check_rows(&self, data: &DataMatrix) -> Result<()> {
        if self.n_rows() != data.n_rows() {
            return Err(ExcirError::mismatch(
                "output rows",
                data.n_rows(),
                self.n_rows(),
            ));
        }
        Ok(())
    }
}

/// Per-column location and scale, fit on training rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationParams {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    /// Columns with zero spread; these standardize to all zeros.
    pub constant: Vec<bool>,
}

impl StandardizationParams {
    pub fn fit(data: &DataMatrix) -> Self {
        let k = data.n_features();
        let mut mean = Vec::with_capacity(k);
        let mut sd = Vec::with_capacity(k);
        let mut constant = Vec::with_capacity(k);
        for c in 0..k {
            let (m, s) = mean_sd(data.column(c));
            mean.push(m);
            // Relative floor: a column whose spread is pure rounding noise is constant.
            let is_const = s <= 1e-14 * m.abs().max(1.0);
            constant.push(is_const);
            sd.push(if is_const { 1.0 } else { s });
        }
        Self { mean, sd, constant }
    }

    pub fn n_features(&self) -> usize {
        self.mean.len()
    }
}

/// Population mean and standard deviation.
pub(crate) fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let ss = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
    (m, (ss / n).sqrt())
}

/// Applies `(x - mean_c) / sd_c` per column; constant columns become zeros.
pub fn standardize(data: &DataMatrix, params: &StandardizationParams) -> Result<DataMatrix> {
    if params.n_features() != data.n_features() {
        return Err(ExcirError::mismatch(
            "standardization columns",
            data.n_features(),
            params.n_features(),
        ));
    }
    let values = DMatrix::from_fn(data.n_rows(), data.n_features(), |r, c| {
        if params.constant[c] {
            0.0
        } else {
            (data.values[(r, c)] - params.mean[c]) / params.sd[c]
        }
    });
    Ok(DataMatrix::from_parts_unchecked(
        values,
        data.feature_names.clone(),
        data.split,
    ))
}

/// Options for [`load_csv_with`].
#[derive(Debug, Clone, Default)]
pub struct CsvOptions {
    pub has_header: bool,
    /// Column split out as a scalar [`OutputBlock`]; `None` keeps every column as a feature.
    pub target: Option<String>,
    /// Replace empty and `NaN` cells with the column median instead of rejecting them.
    pub impute_median: bool,
}

/// Loads a comma-separated numeric file. `target` of `None` or `"none"`
/// keeps every column as a feature.
pub fn load_csv(
    path: impl AsRef<Path>,
    target: Option<&str>,
    has_header: bool,
) -> Result<(DataMatrix, Option<OutputBlock>)> {
    let opts = CsvOptions {
        has_header,
        target: target.filter(|t| *t != "none").map(str::to_owned),
        impute_median: false,
    };
    load_csv_with(path, &opts)
}

pub fn load_csv_with(
    path: impl AsRef<Path>,
    opts: &CsvOptions,
) -> Result<(DataMatrix, Option<OutputBlock>)> {
    let file = File::open(path)?;
    parse_csv(file, opts)
}

pub fn parse_csv<R: Read>(reader: R, opts: &CsvOptions) -> Result<(DataMatrix, Option<OutputBlock>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = rdr.records();

    let mut header: Option<Vec<String>> = None;
    if opts.has_header {
        match records.next() {
            Some(rec) => header = Some(rec?.iter().map(str::to_owned).collect()),
            None => return Err(ExcirError::Empty("file has no header row".into())),
        }
    }

    // Cells are kept as Option<f64>; None marks a missing cell.
    let mut rows: Vec<Vec<Option<f64>>> = Vec::new();
    let mut width = header.as_ref().map(Vec::len);
    for (i, rec) in records.enumerate() {
        let rec = rec?;
        let w = *width.get_or_insert(rec.len());
        let row_no = i + usize::from(opts.has_header);
        if rec.len() != w {
            return Err(ExcirError::Parse {
                row: row_no,
                column: format!("#{}", rec.len()),
                message: format!("expected {w} fields, found {}", rec.len()),
            });
        }
        let mut cells = Vec::with_capacity(w);
        for (c, field) in rec.iter().enumerate() {
            let col_name = || {
                header
                    .as_ref()
                    .map_or_else(|| format!("x{c}"), |h| h[c].clone())
            };
            if field.is_empty() {
                if opts.impute_median {
                    cells.push(None);
                    continue;
                }
                return Err(ExcirError::Missing {
                    row: row_no,
                    column: col_name(),
                });
            }
            let v: f64 = field.parse().map_err(|_| ExcirError::Parse {
                row: row_no,
                column: col_name(),
                message: format!("`{field}` is not a decimal number"),
            })?;
            if v.is_nan() && opts.impute_median {
                cells.push(None);
            } else if !v.is_finite() {
                return Err(ExcirError::NonFinite {
                    row: row_no,
                    column: col_name(),
                });
            } else {
                cells.push(Some(v));
            }
        }
        rows.push(cells);
    }
    if rows.is_empty() {
        return Err(ExcirError::Empty("file has no data rows".into()));
    }
    let width = width.unwrap_or(0);
    let names = header.unwrap_or_else(|| default_names(width));
    let mut seen = HashSet::new();
    for n in &names {
        if !seen.insert(n.as_str()) {
            return Err(ExcirError::DuplicateHeader(n.clone()));
        }
    }

    let n = rows.len();
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(width);
    for c in 0..width {
        let present: Vec<f64> = rows.iter().filter_map(|r| r[c]).collect();
        let fill = if present.len() < n {
            if present.is_empty() {
                return Err(ExcirError::Missing {
                    row: 0,
                    column: names[c].clone(),
                });
            }
            median(&present)
        } else {
            0.0
        };
        columns.push(rows.iter().map(|r| r[c].unwrap_or(fill)).collect());
    }

    let target_idx = match &opts.target {
        Some(t) => Some(
            names
                .iter()
                .position(|n| n == t)
                .ok_or_else(|| ExcirError::invalid(format!("target column `{t}` not found")))?,
        ),
        None => None,
    };
    let output = match target_idx {
        Some(t) => Some(OutputBlock::scalar(columns[t].clone(), OutputKind::RegressionScore)?),
        None => None,
    };
    let keep: Vec<usize> = (0..width).filter(|&c| Some(c) != target_idx).collect();
    let values = DMatrix::from_fn(n, keep.len(), |r, c| columns[keep[c]][r]);
    let feature_names = keep.iter().map(|&c| names[c].clone()).collect();
    let data = DataMatrix::new(values, feature_names)?;
    Ok((data, output))
}

pub(crate) fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Writes features (and an optional scalar target named `target_name`) as CSV
/// with a header. Values use the shortest round-trip decimal form.
pub fn write_csv(
    path: impl AsRef<Path>,
    data: &DataMatrix,
    target: Option<(&str, &[f64])>,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_csv_to(&mut w, data, target)?;
    w.flush()?;
    Ok(())
}

pub fn write_csv_to<W: Write>(
    w: &mut W,
    data: &DataMatrix,
    target: Option<(&str, &[f64])>,
) -> Result<()> {
    let mut header: Vec<&str> = data.feature_names().iter().map(String::as_str).collect();
    if let Some((name, values)) = target {
        if values.len() != data.n_rows() {
            return Err(ExcirError::mismatch("target rows", data.n_rows(), values.len()));
        }
        header.push(name);
    }
    writeln!(w, "{}", header.join(","))?;
    for r in 0..data.n_rows() {
        let mut line: Vec<String> = (0..data.n_features())
            .map(|c| format!("{}", data.values[(r, c)]))
            .collect();
        if let Some((_, values)) = target {
            line.push(format!("{}", values[r]));
        }
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

/// Serializes a report to pretty JSON with sorted keys and a top-level
/// `"schema_version"`. Non-object reports are wrapped under `"items"`.
pub fn render_report<T: Serialize + ?Sized>(report: &T) -> Result<String> {
    let value = serde_json::to_value(report)?;
    let mut obj = match value {
        Value::Object(map) => map,
        other => {
            let mut map = serde_json::Map::new();
            map.insert("items".into(), other);
            map
        }
    };
    obj.insert("schema_version".into(), Value::String(SCHEMA_VERSION.into()));
    let mut s = serde_json::to_string_pretty(&Value::Object(obj))?;
    s.push('\n');
    Ok(s)
}

pub fn write_report<T: Serialize + ?Sized>(report: &T, path: impl AsRef<Path>) -> Result<()> {
    let s = render_report(report)?;
    std::fs::write(path, s)?;
    Ok(())
}
