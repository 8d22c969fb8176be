//! Typed tabular input: schema files, dataset CSV parsing and validation,
//! and splitting a dataset by a grouping column.
//!
//! Schema files are JSON arrays of objects:
//!
//! ```json
//! [
//!   {"name": "Age", "abbrev": "Age", "type": "discrete_ordinal", "treat_as": "continuous"},
//!   {"name": "Sex", "abbrev": "Sex", "type": "binary"},
//!   {"name": "Stage", "abbrev": "Stage", "type": "discrete_ordinal", "group": true}
//! ]
//! ```
//!
//! Grouping columns are excluded from the model; their cells may hold
//! arbitrary labels. Every other cell must be a finite dotted decimal.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows a dataset needs before it is accepted for fitting.
pub const MIN_ROWS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarType {
    Continuous,
    #[serde(alias = "ordinal", alias = "discrete")]
    DiscreteOrdinal,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableSpec {
    pub name: String,
    #[serde(rename = "abbrev")]
    pub abbreviation: String,
    #[serde(rename = "type")]
    pub var_type: VarType,
    /// Modeling type when it differs from the observed type (e.g. an
    /// integer-valued age handled as continuous).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub treat_as: Option<VarType>,
    #[serde(default, rename = "group", skip_serializing_if = "std::ops::Not::not")]
    pub group_role: bool,
}

impl VariableSpec {
    pub fn new(name: &str, abbreviation: &str, var_type: VarType) -> Self {
        Self {
            name: name.to_string(),
            abbreviation: abbreviation.to_string(),
            var_type,
            treat_as: None,
            group_role: false,
        }
    }

    pub fn modeled_type(&self) -> VarType {
        self.treat_as.unwrap_or(self.var_type)
    }
}

/// Parses and validates a schema JSON document.
pub fn parse_schema(json: &str) -> Result<Vec<VariableSpec>> {
    let specs: Vec<VariableSpec> = serde_json::from_str(json)?;
    validate_schema(&specs)?;
    Ok(specs)
}

pub fn load_schema(path: &Path) -> Result<Vec<VariableSpec>> {
    parse_schema(&std::fs::read_to_string(path)?)
}

fn validate_schema(specs: &[VariableSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::SchemaMismatch("schema declares no variables".into()));
    }
    let mut seen = BTreeMap::new();
    for (idx, spec) in specs.iter().enumerate() {
        let abbrev = spec.abbreviation.trim();
        if abbrev.is_empty() {
            return Err(Error::SchemaMismatch(format!(
                "variable {} has an empty abbreviation",
                idx + 1
            )));
        }
        if let Some(prev) = seen.insert(abbrev.to_string(), idx) {
            return Err(Error::SchemaMismatch(format!(
                "abbreviation {abbrev:?} used by columns {} and {}",
                prev + 1,
                idx + 1
            )));
        }
    }
    Ok(())
}

/// A validated table of observations.
///
/// `values` holds every column, including grouping columns; for those the
/// stored value is an index into the column's `levels`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: Vec<VariableSpec>,
    pub values: DMatrix<f64>,
    levels: Vec<Option<Vec<String>>>,
}

/// Loader knobs. `min_rows` defaults to [`MIN_ROWS`]; prior-only tooling
/// lowers it to accept header-only files.
#[derive(Debug, Clone, Copy)]
pub struct LoadOptions {
    pub min_rows: usize,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self { min_rows: MIN_ROWS }
    }
}

pub fn load_dataset(csv_path: &Path, schema_path: &Path) -> Result<Dataset> {
    load_dataset_with(csv_path, schema_path, LoadOptions::default())
}

pub fn load_dataset_with(csv_path: &Path, schema_path: &Path, opts: LoadOptions) -> Result<Dataset> {
    let schema = load_schema(schema_path)?;
    let file = std::fs::File::open(csv_path)?;
    Dataset::read_csv(file, schema, opts)
}

fn parse_cell(raw: &str, row: usize, column: usize) -> Result<f64> {
    let cell = raw.trim();
    if cell.is_empty() || cell.eq_ignore_ascii_case("na") || cell.eq_ignore_ascii_case("nan") {
        return Err(Error::MissingCell { row, column });
    }
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::NonNumericCell {
            row,
            column,
            value: cell.to_string(),
        }),
    }
}

impl Dataset {
    /// Parses CSV text (header row required) against `schema`.
    pub fn read_csv<R: Read>(reader: R, schema: Vec<VariableSpec>, opts: LoadOptions) -> Result<Self> {
        validate_schema(&schema)?;
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_reader(reader);
        let header = rdr.headers()?.clone();
        let names: Vec<&str> = header.iter().map(str::trim).collect();
        let expected: Vec<&str> = schema.iter().map(|s| s.abbreviation.trim()).collect();
        if names != expected {
            return Err(Error::SchemaMismatch(format!(
                "CSV header {names:?} does not match schema abbreviations {expected:?}"
            )));
        }
        let p = schema.len();
        let mut data = Vec::new();
        let mut levels: Vec<Option<Vec<String>>> = schema
            .iter()
            .map(|s| if s.group_role { Some(Vec::new()) } else { None })
            .collect();
        let mut n = 0;
        for (r, record) in rdr.records().enumerate() {
            let record = record?;
            let row = r + 1;
            if record.len() != p {
                if record.len() < p {
                    return Err(Error::MissingCell {
                        row,
                        column: record.len() + 1,
                    });
                }
                return Err(Error::SchemaMismatch(format!(
                    "row {row} has {} cells, expected {p}",
                    record.len()
                )));
            }
            for (c, raw) in record.iter().enumerate() {
                let v = match levels[c].as_mut() {
                    Some(lv) => {
                        let label = raw.trim();
                        if label.is_empty() {
                            return Err(Error::MissingCell { row, column: c + 1 });
                        }
                        match lv.iter().position(|l| l == label) {
                            Some(i) => i as f64,
                            None => {
                                lv.push(label.to_string());
                                (lv.len() - 1) as f64
                            }
                        }
                    }
                    None => parse_cell(raw, row, c + 1)?,
                };
                data.push(v);
            }
            n += 1;
        }
        let values = DMatrix::from_row_slice(n, p, &data);
        Self::from_parts(schema, values, levels, opts)
    }

    /// Builds a dataset from an in-memory matrix with no grouping columns.
    pub fn from_matrix(schema: Vec<VariableSpec>, values: DMatrix<f64>) -> Result<Self> {
        Self::from_matrix_with(schema, values, LoadOptions::default())
    }

    pub fn from_matrix_with(schema: Vec<VariableSpec>, values: DMatrix<f64>, opts: LoadOptions) -> Result<Self> {
        validate_schema(&schema)?;
        if values.ncols() != schema.len() {
            return Err(Error::SchemaMismatch(format!(
                "matrix has {} columns, schema has {}",
                values.ncols(),
                schema.len()
            )));
        }
        if schema.iter().any(|s| s.group_role) {
            return Err(Error::SchemaMismatch(
                "grouping columns need labels; load them from CSV".into(),
            ));
        }
        if let Some(idx) = values.iter().position(|v| !v.is_finite()) {
            let (row, column) = (idx % values.nrows(), idx / values.nrows());
            return Err(Error::NonNumericCell {
                row: row + 1,
                column: column + 1,
                value: values[(row, column)].to_string(),
            });
        }
        let levels = vec![None; schema.len()];
        Self::from_parts(schema, values, levels, opts)
    }

    fn from_parts(
        schema: Vec<VariableSpec>,
        values: DMatrix<f64>,
        levels: Vec<Option<Vec<String>>>,
        opts: LoadOptions,
    ) -> Result<Self> {
        let ds = Self {
            schema,
            values,
            levels,
        };
        ds.validate(opts)?;
        Ok(ds)
    }

    fn validate(&self, opts: LoadOptions) -> Result<()> {
        let n = self.n();
        if n < opts.min_rows {
            return Err(Error::SchemaMismatch(format!(
                "dataset has {n} rows, need at least {}",
                opts.min_rows
            )));
        }
        if n == 0 {
            return Ok(());
        }
        for (j, spec) in self.schema.iter().enumerate() {
            if spec.group_role {
                continue;
            }
            let distinct = distinct_count(self.values.column(j).iter().copied());
            let degenerate = |reason: String| Error::DegenerateColumn {
                column: j + 1,
                name: spec.abbreviation.clone(),
                reason,
            };
            if distinct < 2 {
                return Err(degenerate("column is constant".into()));
            }
            match spec.var_type {
                VarType::Binary if distinct != 2 => {
                    return Err(degenerate(format!(
                        "binary column has {distinct} distinct values"
                    )))
                }
                VarType::Continuous if distinct < 3 => {
                    return Err(degenerate(format!(
                        "continuous column has only {distinct} distinct values"
                    )))
                }
                _ => {}
            }
            if spec.modeled_type() == VarType::Continuous && distinct < 3 {
                return Err(degenerate(format!(
                    "column modeled as continuous has only {distinct} distinct values"
                )));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn p(&self) -> usize {
        self.values.ncols()
    }

    /// Number of unordered variable pairs among modeled columns.
    pub fn candidate_edges(&self) -> usize {
        let q = self.model_columns().len();
        q * q.saturating_sub(1) / 2
    }

    pub fn column_index(&self, abbreviation: &str) -> Option<usize> {
        self.schema
            .iter()
            .position(|s| s.abbreviation.trim() == abbreviation.trim())
    }

    /// Indices of columns that enter the model (everything except grouping columns).
    pub fn model_columns(&self) -> Vec<usize> {
        (0..self.p()).filter(|&j| !self.schema[j].group_role).collect()
    }

    pub fn model_schema(&self) -> Vec<VariableSpec> {
        self.model_columns().into_iter().map(|j| self.schema[j].clone()).collect()
    }

    /// The n × q matrix of modeled columns.
    pub fn model_values(&self) -> DMatrix<f64> {
        let cols = self.model_columns();
        DMatrix::from_fn(self.n(), cols.len(), |r, c| self.values[(r, cols[c])])
    }

    /// Text form of cell `(row, col)` as it would appear in CSV.
    pub fn cell_text(&self, row: usize, col: usize) -> String {
        let v = self.values[(row, col)];
        match &self.levels[col] {
            Some(lv) => lv[v as usize].clone(),
            None => format!("{v}"),
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(self.schema.iter().map(|s| s.abbreviation.as_str()))?;
        for r in 0..self.n() {
            w.write_record((0..self.p()).map(|c| self.cell_text(r, c)))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn schema_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.schema)?)
    }

    /// Splits rows by the distinct labels of a grouping column.
    ///
    /// Groups come back in order of first appearance; each keeps its rows
    /// in their original order and drops the grouping column.
    pub fn split_by_group(&self, group_column: &str) -> Result<Vec<(String, Dataset)>> {
        self.split_by_group_min(group_column, MIN_ROWS)
    }

    pub fn split_by_group_min(&self, group_column: &str, min_rows: usize) -> Result<Vec<(String, Dataset)>> {
        let gcol = self.column_index(group_column).ok_or_else(|| {
            Error::SchemaMismatch(format!("no column named {group_column:?}"))
        })?;
        if !self.schema[gcol].group_role {
            return Err(Error::SchemaMismatch(format!(
                "column {group_column:?} is not flagged as a grouping column"
            )));
        }
        let labels = self.levels[gcol].as_ref().expect("group column has levels");
        let keep: Vec<usize> = (0..self.p()).filter(|&c| c != gcol).collect();
        let schema: Vec<VariableSpec> = keep.iter().map(|&c| self.schema[c].clone()).collect();
        let levels: Vec<Option<Vec<String>>> = keep.iter().map(|&c| self.levels[c].clone()).collect();

        let mut out = Vec::with_capacity(labels.len());
        for (code, label) in labels.iter().enumerate() {
            let rows: Vec<usize> = (0..self.n())
                .filter(|&r| self.values[(r, gcol)] as usize == code)
                .collect();
            if rows.len() < min_rows {
                return Err(Error::GroupTooSmall {
                    label: label.clone(),
                    count: rows.len(),
                    min: min_rows,
                });
            }
            let values = DMatrix::from_fn(rows.len(), keep.len(), |r, c| self.values[(rows[r], keep[c])]);
            let ds = Dataset::from_parts(
                schema.clone(),
                values,
                levels.clone(),
                LoadOptions { min_rows },
            )?;
            out.push((label.clone(), ds));
        }
        Ok(out)
    }
}

fn distinct_count(values: impl Iterator<Item = f64>) -> usize {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v.len()
}
