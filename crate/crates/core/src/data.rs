//! Mixed categorical/real relational data with missing entries.
//!
//! Rows are subjects. The categorical matrix holds dense integer codes
//! `0..q_j` per attribute, where code 0 is the probit base category. The real
//! matrix holds arbitrary finite reals. In CSV input an empty cell or the
//! literal `NA` marks a missing entry.

use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Flattened index over categorical choices: attribute `j` owns components
/// `offsets[j] .. offsets[j] + q_j - 1`, attribute-major and choice-minor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChoiceLayout {
    counts: Vec<usize>,
    offsets: Vec<usize>,
    width: usize,
}

impl ChoiceLayout {
    pub fn new(counts: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(counts.len());
        let mut width = 0;
        for &q in counts {
            offsets.push(width);
            width += q.saturating_sub(1);
        }
        ChoiceLayout {
            counts: counts.to_vec(),
            offsets,
            width,
        }
    }

    /// Layout with one component per attribute, used for the real matrix.
    pub fn scalar(n: usize) -> Self {
        ChoiceLayout {
            counts: vec![2; n],
            offsets: (0..n).collect(),
            width: n,
        }
    }

    pub fn n_attributes(&self) -> usize {
        self.counts.len()
    }

    pub fn category_count(&self, j: usize) -> usize {
        self.counts[j]
    }

    pub fn category_counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn dim(&self, j: usize) -> usize {
        self.counts[j] - 1
    }

    pub fn offset(&self, j: usize) -> usize {
        self.offsets[j]
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn range(&self, j: usize) -> std::ops::Range<usize> {
        self.offsets[j]..self.offsets[j] + self.dim(j)
    }

    /// `(attribute, component)` of a flattened choice index.
    pub fn locate(&self, flat: usize) -> (usize, usize) {
        let j = match self.offsets.binary_search(&flat) {
            Ok(mut j) => {
                // Skip attributes with no components sharing the same offset.
                while self.dim(j) == 0 {
                    j += 1;
                }
                j
            }
            Err(j) => j - 1,
        };
        (j, flat - self.offsets[j])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixKind {
    #[serde(rename = "cat")]
    Categorical,
    Real,
}

impl MatrixKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            MatrixKind::Categorical => "cat",
            MatrixKind::Real => "real",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationalDataset {
    n_rows: usize,
    row_labels: Option<Vec<String>>,
    cat_names: Vec<String>,
    category_counts: Vec<usize>,
    cat: Vec<u32>,
    cat_missing: Vec<bool>,
    real_names: Vec<String>,
    real: Vec<f64>,
    real_missing: Vec<bool>,
}

impl RelationalDataset {
    /// Build and validate a dataset from row-major cells (`None` = missing).
    pub fn new(
        n_rows: usize,
        category_counts: Vec<usize>,
        cat: Vec<Option<u32>>,
        real_cols: usize,
        real: Vec<Option<f64>>,
    ) -> Result<Self> {
        let m1 = category_counts.len();
        if cat.len() != n_rows * m1 {
            return Err(Error::Validation(format!(
                "categorical matrix has {} cells, expected {n_rows} x {m1}",
                cat.len()
            )));
        }
        if real.len() != n_rows * real_cols {
            return Err(Error::Validation(format!(
                "real matrix has {} cells, expected {n_rows} x {real_cols}",
                real.len()
            )));
        }
        let ds = RelationalDataset {
            n_rows,
            row_labels: None,
            cat_names: (0..m1).map(|j| format!("cat{}", j + 1)).collect(),
            category_counts,
            cat_missing: cat.iter().map(Option::is_none).collect(),
            cat: cat.iter().map(|c| c.unwrap_or(0)).collect(),
            real_names: (0..real_cols).map(|j| format!("real{}", j + 1)).collect(),
            real_missing: real.iter().map(Option::is_none).collect(),
            real: real.iter().map(|c| c.unwrap_or(0.0)).collect(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn with_names(
        mut self,
        row_labels: Option<Vec<String>>,
        cat_names: Vec<String>,
        real_names: Vec<String>,
    ) -> Result<Self> {
        if let Some(l) = &row_labels {
            if l.len() != self.n_rows {
                return Err(Error::Validation("row label count differs from row count".into()));
            }
        }
        if cat_names.len() != self.n_cat() || real_names.len() != self.n_real() {
            return Err(Error::Validation("column name count differs from column count".into()));
        }
        self.row_labels = row_labels;
        self.cat_names = cat_names;
        self.real_names = real_names;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let m1 = self.category_counts.len();
        let m2 = self.real_names.len();
        if self.cat.len() != self.n_rows * m1 || self.cat_missing.len() != self.cat.len() {
            return Err(Error::Validation("categorical matrix and mask shapes differ".into()));
        }
        if self.real.len() != self.n_rows * m2 || self.real_missing.len() != self.real.len() {
            return Err(Error::Validation("real matrix and mask shapes differ".into()));
        }
        for (j, &q) in self.category_counts.iter().enumerate() {
            if q < 2 {
                return Err(Error::Validation(format!(
                    "attribute `{}` has {q} categories; at least 2 are required",
                    self.cat_names[j]
                )));
            }
        }
        for i in 0..self.n_rows {
            for j in 0..m1 {
                let k = i * m1 + j;
                if !self.cat_missing[k] && self.cat[k] as usize >= self.category_counts[j] {
                    return Err(Error::Validation(format!(
                        "row {}, attribute `{}`: code {} is not below the declared {} categories",
                        i + 1,
                        self.cat_names[j],
                        self.cat[k],
                        self.category_counts[j]
                    )));
                }
            }
            for j in 0..m2 {
                let k = i * m2 + j;
                if !self.real_missing[k] && !self.real[k].is_finite() {
                    return Err(Error::Validation(format!(
                        "row {}, column `{}`: non-finite value",
                        i + 1,
                        self.real_names[j]
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cat(&self) -> usize {
        self.category_counts.len()
    }

    pub fn n_real(&self) -> usize {
        self.real_names.len()
    }

    pub fn category_counts(&self) -> &[usize] {
        &self.category_counts
    }

    pub fn choice_layout(&self) -> ChoiceLayout {
        ChoiceLayout::new(&self.category_counts)
    }

    pub fn cat_names(&self) -> &[String] {
        &self.cat_names
    }

    pub fn real_names(&self) -> &[String] {
        &self.real_names
    }

    pub fn row_labels(&self) -> Vec<String> {
        match &self.row_labels {
            Some(l) => l.clone(),
            None => (0..self.n_rows).map(|i| format!("row{}", i + 1)).collect(),
        }
    }

    pub fn has_row_labels(&self) -> bool {
        self.row_labels.is_some()
    }

    /// Labels of the flattened categorical choices, `name:p` for component `p`.
    pub fn choice_labels(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (j, &q) in self.category_counts.iter().enumerate() {
            for p in 1..q {
                out.push(format!("{}:{}", self.cat_names[j], p));
            }
        }
        out
    }

    #[inline]
    pub fn cat(&self, i: usize, j: usize) -> Option<u32> {
        let k = i * self.n_cat() + j;
        if self.cat_missing[k] {
            None
        } else {
            Some(self.cat[k])
        }
    }

    #[inline]
    pub fn real(&self, i: usize, j: usize) -> Option<f64> {
        let k = i * self.n_real() + j;
        if self.real_missing[k] {
            None
        } else {
            Some(self.real[k])
        }
    }

    #[inline]
    pub fn cat_observed(&self, i: usize, j: usize) -> bool {
        !self.cat_missing[i * self.n_cat() + j]
    }

    #[inline]
    pub fn real_observed(&self, i: usize, j: usize) -> bool {
        !self.real_missing[i * self.n_real() + j]
    }

    pub fn cat_missing_mask(&self) -> &[bool] {
        &self.cat_missing
    }

    pub fn real_missing_mask(&self) -> &[bool] {
        &self.real_missing
    }

    /// Raw real values, row-major; missing cells hold 0.
    pub fn real_values(&self) -> &[f64] {
        &self.real
    }

    pub fn n_observed(&self) -> usize {
        self.cat_missing.iter().filter(|m| !**m).count()
            + self.real_missing.iter().filter(|m| !**m).count()
    }

    pub fn set_cat(&mut self, i: usize, j: usize, value: Option<u32>) -> Result<()> {
        let k = i * self.n_cat() + j;
        if let Some(v) = value {
            if v as usize >= self.category_counts[j] {
                return Err(Error::Validation(format!(
                    "code {v} out of range for attribute `{}`",
                    self.cat_names[j]
                )));
            }
        }
        self.cat_missing[k] = value.is_none();
        self.cat[k] = value.unwrap_or(0);
        Ok(())
    }

    pub fn set_real(&mut self, i: usize, j: usize, value: Option<f64>) -> Result<()> {
        let k = i * self.n_real() + j;
        if let Some(v) = value {
            if !v.is_finite() {
                return Err(Error::Validation("non-finite real value".into()));
            }
        }
        self.real_missing[k] = value.is_none();
        self.real[k] = value.unwrap_or(0.0);
        Ok(())
    }

    /// Copy with every cell marked missing, keeping the shape.
    pub fn all_missing(&self) -> Self {
        let mut out = self.clone();
        out.cat_missing.iter_mut().for_each(|m| *m = true);
        out.cat.iter_mut().for_each(|c| *c = 0);
        out.real_missing.iter_mut().for_each(|m| *m = true);
        out.real.iter_mut().for_each(|c| *c = 0.0);
        out
    }
}

/// Column typing supplied as a JSON sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    #[serde(default = "schema_version")]
    pub version: u32,
    pub columns: Vec<ColumnSpec>,
}

fn schema_version() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: ColumnKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ColumnKind {
    Categorical {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        categories: Option<usize>,
    },
    Real,
    /// Row label column; not part of the model.
    Id,
}

impl Schema {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let schema: Schema = serde_json::from_str(&text)?;
        if schema.version != 1 {
            return Err(Error::Validation(format!(
                "unsupported schema version {}",
                schema.version
            )));
        }
        Ok(schema)
    }

    fn lookup(&self, name: &str) -> Option<&ColumnKind> {
        self.columns.iter().find(|c| c.name == name).map(|c| &c.kind)
    }
}

/// Record of a category count that was inferred from the data rather than declared.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeInference {
    pub column: String,
    pub categories: usize,
}

#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub dataset: RelationalDataset,
    pub inferred: Vec<CodeInference>,
}

struct RawTable {
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
    lines: Vec<usize>,
}

fn read_table(path: &Path) -> Result<Option<RawTable>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.trim().is_empty() {
        return Ok(None);
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            row: 1,
            column: 0,
            message: e.to_string(),
        })?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if headers.iter().all(|h| h.is_empty()) {
        return Ok(None);
    }
    let mut rows = Vec::new();
    let mut lines = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            row: e.position().map(|p| p.line() as usize).unwrap_or(0),
            column: 0,
            message: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(rows.len() + 2);
        if rec.len() != headers.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                row: line,
                column: rec.len().min(headers.len()) + 1,
                message: format!("expected {} fields, found {}", headers.len(), rec.len()),
            });
        }
        rows.push(rec.iter().map(|f| f.trim().to_string()).collect());
        lines.push(line);
    }
    Ok(Some(RawTable {
        headers,
        rows,
        lines,
    }))
}

fn is_missing(cell: &str) -> bool {
    cell.is_empty() || cell == "NA"
}

/// Load a dataset from a categorical CSV and a real CSV sharing row order.
///
/// Either path may be `None` or point at an empty file, giving a
/// single-modality dataset. Without a schema every column of the categorical
/// file is categorical with `q_j = 1 + max code` (at least 2), and every
/// column of the real file is real.
pub fn load_dataset(
    cat_path: Option<&Path>,
    real_path: Option<&Path>,
    schema: Option<&Schema>,
) -> Result<LoadedDataset> {
    let cat_table = match cat_path {
        Some(p) => read_table(p)?.map(|t| (p, t)),
        None => None,
    };
    let real_table = match real_path {
        Some(p) => read_table(p)?.map(|t| (p, t)),
        None => None,
    };
    let n_rows = match (&cat_table, &real_table) {
        (Some((_, c)), Some((_, r))) => {
            if c.rows.len() != r.rows.len() {
                return Err(Error::Validation(format!(
                    "categorical file has {} rows but real file has {}",
                    c.rows.len(),
                    r.rows.len()
                )));
            }
            c.rows.len()
        }
        (Some((_, c)), None) => c.rows.len(),
        (None, Some((_, r))) => r.rows.len(),
        (None, None) => return Err(Error::Validation("no data: both input files are empty".into())),
    };

    let mut labels: Option<Vec<String>> = None;
    let mut cat_names = Vec::new();
    let mut counts = Vec::new();
    let mut cat_cols: Vec<Vec<Option<u32>>> = Vec::new();
    let mut inferred = Vec::new();

    if let Some((path, t)) = &cat_table {
        for (c, name) in t.headers.iter().enumerate() {
            let kind = match schema {
                Some(s) => s.lookup(name).cloned().ok_or_else(|| {
                    Error::Validation(format!("column `{name}` is not declared in the schema"))
                })?,
                None => ColumnKind::Categorical { categories: None },
            };
            match kind {
                ColumnKind::Id => {
                    if labels.is_none() {
                        labels = Some(t.rows.iter().map(|r| r[c].clone()).collect());
                    }
                }
                ColumnKind::Real => {
                    return Err(Error::Validation(format!(
                        "column `{name}` is declared real but appears in the categorical file"
                    )))
                }
                ColumnKind::Categorical { categories } => {
                    let mut col = Vec::with_capacity(n_rows);
                    for (r, row) in t.rows.iter().enumerate() {
                        let cell = &row[c];
                        if is_missing(cell) {
                            col.push(None);
                        } else {
                            let v: u32 = cell.parse().map_err(|_| Error::Parse {
                                path: path.to_path_buf(),
                                row: t.lines[r],
                                column: c + 1,
                                message: format!("`{cell}` is not a non-negative integer code"),
                            })?;
                            col.push(Some(v));
                        }
                    }
                    let max_code = col.iter().flatten().copied().max();
                    let q = match categories {
                        Some(q) => {
                            if let Some(m) = max_code {
                                if m as usize >= q {
                                    return Err(Error::Validation(format!(
                                        "column `{name}`: code {m} is not below the declared {q} categories"
                                    )));
                                }
                            }
                            q
                        }
                        None => {
                            let q = (max_code.map(|m| m as usize + 1).unwrap_or(2)).max(2);
                            inferred.push(CodeInference {
                                column: name.clone(),
                                categories: q,
                            });
                            q
                        }
                    };
                    cat_names.push(name.clone());
                    counts.push(q);
                    cat_cols.push(col);
                }
            }
        }
    }

    let mut real_names = Vec::new();
    let mut real_cols: Vec<Vec<Option<f64>>> = Vec::new();
    if let Some((path, t)) = &real_table {
        for (c, name) in t.headers.iter().enumerate() {
            let kind = match schema {
                Some(s) => s.lookup(name).cloned().ok_or_else(|| {
                    Error::Validation(format!("column `{name}` is not declared in the schema"))
                })?,
                None => ColumnKind::Real,
            };
            match kind {
                ColumnKind::Id => {
                    if labels.is_none() {
                        labels = Some(t.rows.iter().map(|r| r[c].clone()).collect());
                    }
                }
                ColumnKind::Categorical { .. } => {
                    return Err(Error::Validation(format!(
                        "column `{name}` is declared categorical but appears in the real file"
                    )))
                }
                ColumnKind::Real => {
                    let mut col = Vec::with_capacity(n_rows);
                    for (r, row) in t.rows.iter().enumerate() {
                        let cell = &row[c];
                        if is_missing(cell) {
                            col.push(None);
                        } else {
                            let v: f64 = cell
                                .parse()
                                .ok()
                                .filter(|v: &f64| v.is_finite())
                                .ok_or_else(|| Error::Parse {
                                    path: path.to_path_buf(),
                                    row: t.lines[r],
                                    column: c + 1,
                                    message: format!("`{cell}` is not a finite real number"),
                                })?;
                            col.push(Some(v));
                        }
                    }
                    real_names.push(name.clone());
                    real_cols.push(col);
                }
            }
        }
    }

    let m1 = cat_cols.len();
    let m2 = real_cols.len();
    let mut cat = Vec::with_capacity(n_rows * m1);
    let mut real = Vec::with_capacity(n_rows * m2);
    for i in 0..n_rows {
        for col in &cat_cols {
            cat.push(col[i]);
        }
        for col in &real_cols {
            real.push(col[i]);
        }
    }
    let dataset = RelationalDataset::new(n_rows, counts, cat, m2, real)?
        .with_names(labels, cat_names, real_names)?;
    Ok(LoadedDataset { dataset, inferred })
}

/// Schema describing `ds` exactly, including an `id` column when labels exist.
pub fn dataset_schema(ds: &RelationalDataset) -> Schema {
    let mut columns = Vec::new();
    if ds.has_row_labels() {
        columns.push(ColumnSpec {
            name: "id".into(),
            kind: ColumnKind::Id,
        });
    }
    for (j, name) in ds.cat_names().iter().enumerate() {
        columns.push(ColumnSpec {
            name: name.clone(),
            kind: ColumnKind::Categorical {
                categories: Some(ds.category_counts()[j]),
            },
        });
    }
    for name in ds.real_names() {
        columns.push(ColumnSpec {
            name: name.clone(),
            kind: ColumnKind::Real,
        });
    }
    Schema {
        version: 1,
        columns,
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Write the dataset as two CSV files plus a JSON schema sidecar.
/// Row labels, when present, go in an `id` column of the categorical file
/// (or of the real file if there are no categorical columns).
pub fn save_dataset(
    ds: &RelationalDataset,
    cat_path: &Path,
    real_path: &Path,
    schema_path: &Path,
) -> Result<()> {
    let labels = ds.row_labels();
    let id_in_cat = ds.has_row_labels() && ds.n_cat() > 0;
    let id_in_real = ds.has_row_labels() && ds.n_cat() == 0;

    let mut w = csv::Writer::from_writer(Vec::new());
    if ds.n_cat() > 0 {
        let mut header: Vec<String> = Vec::new();
        if id_in_cat {
            header.push("id".into());
        }
        header.extend(ds.cat_names().iter().cloned());
        w.write_record(&header)?;
        for i in 0..ds.n_rows() {
            let mut rec: Vec<String> = Vec::new();
            if id_in_cat {
                rec.push(labels[i].clone());
            }
            for j in 0..ds.n_cat() {
                rec.push(match ds.cat(i, j) {
                    Some(v) => v.to_string(),
                    None => "NA".into(),
                });
            }
            w.write_record(&rec)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Validation(e.to_string()))?;
    write_text(cat_path, &String::from_utf8_lossy(&bytes))?;

    let mut w = csv::Writer::from_writer(Vec::new());
    if ds.n_real() > 0 {
        let mut header: Vec<String> = Vec::new();
        if id_in_real {
            header.push("id".into());
        }
        header.extend(ds.real_names().iter().cloned());
        w.write_record(&header)?;
        for i in 0..ds.n_rows() {
            let mut rec: Vec<String> = Vec::new();
            if id_in_real {
                rec.push(labels[i].clone());
            }
            for j in 0..ds.n_real() {
                rec.push(match ds.real(i, j) {
                    Some(v) => format!("{v:?}"),
                    None => "NA".into(),
                });
            }
            w.write_record(&rec)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Validation(e.to_string()))?;
    write_text(real_path, &String::from_utf8_lossy(&bytes))?;

    let schema = dataset_schema(ds);
    write_text(schema_path, &serde_json::to_string_pretty(&schema)?)
}

/// Per-column mean and standard deviation applied to the real matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStandardization {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    pub applied: bool,
}

impl ColumnStandardization {
    pub fn identity(n: usize) -> Self {
        ColumnStandardization {
            means: vec![0.0; n],
            sds: vec![1.0; n],
            applied: false,
        }
    }

    pub fn forward(&self, j: usize, value: f64) -> f64 {
        (value - self.means[j]) / self.sds[j]
    }

    pub fn inverse(&self, j: usize, value: f64) -> f64 {
        value * self.sds[j] + self.means[j]
    }
}

/// Column-normalize the real matrix to zero mean and unit variance over
/// observed entries. Uses the population variance (divide by the count).
pub fn standardize_real(ds: &RelationalDataset) -> Result<(RelationalDataset, ColumnStandardization)> {
    let m2 = ds.n_real();
    let mut means = Vec::with_capacity(m2);
    let mut sds = Vec::with_capacity(m2);
    for j in 0..m2 {
        let vals: Vec<f64> = (0..ds.n_rows()).filter_map(|i| ds.real(i, j)).collect();
        let name = &ds.real_names()[j];
        if vals.len() < 2 {
            return Err(Error::Validation(format!(
                "column `{name}` has fewer than 2 observed entries"
            )));
        }
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let sd = var.sqrt();
        if !(sd > 0.0) || sd <= 1e-12 * mean.abs() {
            return Err(Error::Validation(format!("column `{name}` has zero variance")));
        }
        means.push(mean);
        sds.push(sd);
    }
    let st = ColumnStandardization {
        means,
        sds,
        applied: true,
    };
    let mut out = ds.clone();
    for i in 0..ds.n_rows() {
        for j in 0..m2 {
            if let Some(v) = ds.real(i, j) {
                out.set_real(i, j, Some(st.forward(j, v)))?;
            }
        }
    }
    Ok((out, st))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldOutEntry {
    pub matrix: MatrixKind,
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct HoldOut {
    pub train: RelationalDataset,
    pub heldout: Vec<HeldOutEntry>,
    pub warnings: Vec<String>,
}

/// Hide a uniformly chosen `fraction` of the observed cells (of both matrices).
pub fn hold_out(ds: &RelationalDataset, fraction: f64, seed: u64) -> Result<HoldOut> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Validation(format!(
            "hold-out fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let mut cells: Vec<(MatrixKind, usize, usize)> = Vec::new();
    for i in 0..ds.n_rows() {
        for j in 0..ds.n_cat() {
            if ds.cat_observed(i, j) {
                cells.push((MatrixKind::Categorical, i, j));
            }
        }
    }
    for i in 0..ds.n_rows() {
        for j in 0..ds.n_real() {
            if ds.real_observed(i, j) {
                cells.push((MatrixKind::Real, i, j));
            }
        }
    }
    let count = (fraction * cells.len() as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, cells.len(), count).into_vec();
    picked.sort_unstable();

    let mut train = ds.clone();
    let mut heldout = Vec::with_capacity(count);
    for k in picked {
        let (matrix, i, j) = cells[k];
        let value = match matrix {
            MatrixKind::Categorical => {
                let v = ds.cat(i, j).expect("observed");
                train.set_cat(i, j, None)?;
                v as f64
            }
            MatrixKind::Real => {
                let v = ds.real(i, j).expect("observed");
                train.set_real(i, j, None)?;
                v
            }
        };
        heldout.push(HeldOutEntry {
            matrix,
            row: i,
            col: j,
            value,
        });
    }

    let mut warnings = Vec::new();
    for i in 0..train.n_rows() {
        let any = (0..train.n_cat()).any(|j| train.cat_observed(i, j))
            || (0..train.n_real()).any(|j| train.real_observed(i, j));
        if !any {
            warnings.push(format!("row {} has no observed training entries", i + 1));
        }
    }
    for j in 0..train.n_cat() {
        if !(0..train.n_rows()).any(|i| train.cat_observed(i, j)) {
            warnings.push(format!("attribute `{}` has no observed training entries", train.cat_names()[j]));
        }
    }
    for j in 0..train.n_real() {
        if !(0..train.n_rows()).any(|i| train.real_observed(i, j)) {
            warnings.push(format!("column `{}` has no observed training entries", train.real_names()[j]));
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(HoldOut {
        train,
        heldout,
        warnings,
    })
}

pub fn write_heldout(path: &Path, entries: &[HeldOutEntry]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["matrix", "row", "col", "value"])?;
    for e in entries {
        w.write_record([
            e.matrix.as_str().to_string(),
            e.row.to_string(),
            e.col.to_string(),
            format!("{:?}", e.value),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Validation(e.to_string()))?;
    write_text(path, &String::from_utf8_lossy(&bytes))
}

pub fn read_heldout(path: &Path) -> Result<Vec<HeldOutEntry>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |c: usize, m: &str| Error::Parse {
            path: path.to_path_buf(),
            row: r + 2,
            column: c,
            message: m.to_string(),
        };
        let matrix = match rec.get(0) {
            Some("cat") => MatrixKind::Categorical,
            Some("real") => MatrixKind::Real,
            _ => return Err(bad(1, "matrix must be `cat` or `real`")),
        };
        let row = rec.get(1).and_then(|s| s.parse().ok()).ok_or_else(|| bad(2, "bad row"))?;
        let col = rec.get(2).and_then(|s| s.parse().ok()).ok_or_else(|| bad(3, "bad col"))?;
        let value = rec.get(3).and_then(|s| s.parse().ok()).ok_or_else(|| bad(4, "bad value"))?;
        out.push(HeldOutEntry {
            matrix,
            row,
            col,
            value,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        let mut f = fs::File::create(&p).unwrap();
        f.write_all(text.as_bytes()).unwrap();
        p
    }

    #[test]
    fn layout_indexing() {
        let l = ChoiceLayout::new(&[2, 3, 4]);
        assert_eq!(l.width(), 6);
        assert_eq!(l.offsets(), &[0, 1, 3]);
        assert_eq!(l.locate(0), (0, 0));
        assert_eq!(l.locate(2), (1, 1));
        assert_eq!(l.locate(5), (2, 2));
    }

    #[test]
    fn binary_matrix_without_missing() {
        let dir = tempfile::tempdir().unwrap();
        let mut text = String::new();
        text.push_str(&(1..=85).map(|j| format!("a{j}")).collect::<Vec<_>>().join(","));
        text.push('\n');
        for i in 0..50 {
            let row: Vec<String> = (0..85).map(|j| ((i + j) % 2).to_string()).collect();
            text.push_str(&row.join(","));
            text.push('\n');
        }
        let cat = write(dir.path(), "x.csv", &text);
        let real = write(dir.path(), "y.csv", "");
        let loaded = load_dataset(Some(&cat), Some(&real), None).unwrap();
        let ds = loaded.dataset;
        assert_eq!(ds.n_rows(), 50);
        assert_eq!(ds.n_cat(), 85);
        assert_eq!(ds.n_real(), 0);
        assert!(ds.category_counts().iter().all(|&q| q == 2));
        assert_eq!(ds.n_observed(), 50 * 85);
        assert_eq!(loaded.inferred.len(), 85);
    }

    #[test]
    fn missing_markers_and_out_of_range_codes() {
        let dir = tempfile::tempdir().unwrap();
        let cat = write(dir.path(), "x.csv", "a,b\n0,2\nNA,1\n1,\n");
        let schema = Schema {
            version: 1,
            columns: vec![
                ColumnSpec { name: "a".into(), kind: ColumnKind::Categorical { categories: Some(2) } },
                ColumnSpec { name: "b".into(), kind: ColumnKind::Categorical { categories: Some(3) } },
            ],
        };
        let ds = load_dataset(Some(&cat), None, Some(&schema)).unwrap().dataset;
        assert_eq!(ds.cat(1, 0), None);
        assert_eq!(ds.cat(2, 1), None);
        assert_eq!(ds.cat(0, 1), Some(2));

        let bad = write(dir.path(), "bad.csv", "a,b\n0,3\n");
        let err = load_dataset(Some(&bad), None, Some(&schema)).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
    }

    #[test]
    fn malformed_rows_report_location() {
        let dir = tempfile::tempdir().unwrap();
        let cat = write(dir.path(), "x.csv", "a,b\n0,1\n1\n");
        match load_dataset(Some(&cat), None, None).unwrap_err() {
            Error::Parse { row, .. } => assert_eq!(row, 3),
            e => panic!("unexpected {e}"),
        }
        let cat = write(dir.path(), "z.csv", "a,b\n0,1\n1,x\n");
        match load_dataset(Some(&cat), None, None).unwrap_err() {
            Error::Parse { row, column, .. } => assert_eq!((row, column), (3, 2)),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn save_load_round_trip() {
        let ds = RelationalDataset::new(
            3,
            vec![2, 3],
            vec![Some(0), Some(2), None, Some(1), Some(1), Some(0)],
            2,
            vec![Some(0.1), Some(-1.0 / 3.0), Some(1e-300), None, Some(2.5), Some(7.0)],
        )
        .unwrap()
        .with_names(
            Some(vec!["x, y".into(), "b".into(), "c".into()]),
            vec!["p".into(), "q".into()],
            vec!["u".into(), "v".into()],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (c, r, s) = (dir.path().join("c.csv"), dir.path().join("r.csv"), dir.path().join("s.json"));
        save_dataset(&ds, &c, &r, &s).unwrap();
        let schema = Schema::from_path(&s).unwrap();
        let back = load_dataset(Some(&c), Some(&r), Some(&schema)).unwrap().dataset;
        assert_eq!(back, ds);
    }

    #[test]
    fn standardize_example() {
        let ds = RelationalDataset::new(3, vec![], vec![], 1, vec![Some(2.0), Some(4.0), Some(6.0)]).unwrap();
        let (out, st) = standardize_real(&ds).unwrap();
        // population sd of (2,4,6) is sqrt(8/3)
        let sd = (8.0f64 / 3.0).sqrt();
        let want = [-2.0 / sd, 0.0, 2.0 / sd];
        for i in 0..3 {
            assert!((out.real(i, 0).unwrap() - want[i]).abs() < 1e-15);
            assert!((st.inverse(0, out.real(i, 0).unwrap()) - ds.real(i, 0).unwrap()).abs() < 1e-12);
        }
        let (again, _) = standardize_real(&out).unwrap();
        for i in 0..3 {
            assert!((again.real(i, 0).unwrap() - out.real(i, 0).unwrap()).abs() < 1e-12);
        }
        let flat = RelationalDataset::new(3, vec![], vec![], 1, vec![Some(5.0), Some(5.0), Some(5.0)]).unwrap();
        let err = standardize_real(&flat).unwrap_err();
        assert!(err.to_string().contains("real1"));
    }

    #[test]
    fn hold_out_counts_and_partition() {
        let n = 50;
        let m = 85;
        let cells: Vec<Option<u32>> = (0..n * m).map(|k| Some((k % 2) as u32)).collect();
        let ds = RelationalDataset::new(n, vec![2; m], cells, 0, vec![]).unwrap();
        assert!(hold_out(&ds, 0.0, 1).is_err());
        assert!(hold_out(&ds, 1.0, 1).is_err());
        let h = hold_out(&ds, 0.1, 7).unwrap();
        assert_eq!(h.heldout.len(), 425);
        let h2 = hold_out(&ds, 0.1, 7).unwrap();
        assert_eq!(h.heldout, h2.heldout);
        assert_eq!(h.train, h2.train);
        let mut observed = 0;
        for i in 0..n {
            for j in 0..m {
                let held = h.heldout.iter().any(|e| e.row == i && e.col == j);
                assert!(held ^ h.train.cat_observed(i, j));
                observed += 1;
            }
        }
        assert_eq!(observed, ds.n_observed());
    }
}
