//! Dataset container, CSV ingestion, and small input parsers.
//!
//! Ingestion is strict: a missing column, a non-numeric or missing cell, or
//! an empty file is an error that names the offending row (1-based data row,
//! excluding the header) and column. The CSV reader accepts any `io::Read`,
//! so untrusted byte streams can be fed directly (this is also the fuzzing
//! entry point).

use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Error, Debug)]
pub enum DataError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("empty input: no header row")]
    EmptyInput,
    #[error("no data rows after the header")]
    NoRows,
    #[error("column '{0}' not found in header")]
    MissingColumn(String),
    #[error("row {row}, column '{column}': cannot parse '{value}' as a number")]
    BadCell {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}: expected {expected} fields, found {found}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("row {row}, column '{column}': non-finite value")]
    NonFinite { row: usize, column: String },
    #[error("treatment column has {0} distinct values; discrete treatments support at most {1}")]
    TooManyLevels(usize, usize),
    #[error("invalid grid spec '{spec}': {reason}")]
    BadGridSpec { spec: String, reason: String },
    #[error("dataset must have at least one observation")]
    Empty,
}

/// How the treatment variable is to be interpreted.
#[derive(Debug, Clone, PartialEq)]
pub enum TreatmentKind {
    Continuous,
    /// Finitely many levels, sorted ascending.
    Discrete { levels: Vec<f64> },
    /// Point mass at `mass_point` plus a continuous part elsewhere.
    Mixed { mass_point: f64 },
}

impl fmt::Display for TreatmentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TreatmentKind::Continuous => write!(f, "continuous"),
            TreatmentKind::Discrete { levels } => write!(f, "discrete({} levels)", levels.len()),
            TreatmentKind::Mixed { mass_point } => write!(f, "mixed(mass at {mass_point})"),
        }
    }
}

/// Which columns of a CSV file hold the outcome, treatment, mediators, and
/// confounders.
#[derive(Debug, Clone)]
pub struct ColumnMapping {
    pub y: String,
    pub t: String,
    pub m: Vec<String>,
    pub x: Vec<String>,
}

/// The observed sample `{Y_i, T_i, M_i, X_i}`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub y: DVector<f64>,
    pub t: DVector<f64>,
    /// N x s mediator matrix.
    pub m: DMatrix<f64>,
    /// N x r confounder matrix.
    pub x: DMatrix<f64>,
    pub treatment: TreatmentKind,
}

impl Dataset {
    pub fn new(
        y: DVector<f64>,
        t: DVector<f64>,
        m: DMatrix<f64>,
        x: DMatrix<f64>,
        treatment: TreatmentKind,
    ) -> Result<Self, DataError> {
        let n = y.len();
        if n == 0 {
            return Err(DataError::Empty);
        }
        assert_eq!(t.len(), n, "treatment length mismatch");
        assert_eq!(m.nrows(), n, "mediator rows mismatch");
        assert_eq!(x.nrows(), n, "confounder rows mismatch");
        Ok(Self { y, t, m, x, treatment })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Mediator dimension `s`.
    pub fn s(&self) -> usize {
        self.m.ncols()
    }

    /// Confounder dimension `r`.
    pub fn r(&self) -> usize {
        self.x.ncols()
    }

    /// The confounder row `X_i` as a slice-backed vector.
    pub fn x_row(&self, i: usize) -> Vec<f64> {
        (0..self.x.ncols()).map(|j| self.x[(i, j)]).collect()
    }

    /// The joint row `(M_i, X_i)` in mediator-then-confounder order.
    pub fn mx_row(&self, i: usize) -> Vec<f64> {
        let mut row = Vec::with_capacity(self.s() + self.r());
        for j in 0..self.m.ncols() {
            row.push(self.m[(i, j)]);
        }
        for j in 0..self.x.ncols() {
            row.push(self.x[(i, j)]);
        }
        row
    }

    /// N x r matrix of confounders (a copy).
    pub fn x_matrix(&self) -> DMatrix<f64> {
        self.x.clone()
    }

    /// N x (s + r) matrix of (mediator, confounder) pairs.
    pub fn mx_matrix(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut out = DMatrix::zeros(n, self.s() + self.r());
        out.view_mut((0, 0), (n, self.s())).copy_from(&self.m);
        out.view_mut((0, self.s()), (n, self.r())).copy_from(&self.x);
        out
    }

    /// Distinct treatment levels, sorted (useful for discrete treatments).
    pub fn distinct_treatment_levels(&self) -> Vec<f64> {
        let mut levels: Vec<f64> = Vec::new();
        for &v in self.t.iter() {
            if !levels.iter().any(|&l| (l - v).abs() <= 1e-9 * l.abs().max(1.0)) {
                levels.push(v);
            }
        }
        levels.sort_by(|a, b| a.partial_cmp(b).unwrap());
        levels
    }

    /// Draw a bootstrap resample (rows i.i.d. with replacement).
    pub fn resample(&self, indices: &[usize]) -> Dataset {
        let n = indices.len();
        let mut y = DVector::zeros(n);
        let mut t = DVector::zeros(n);
        let mut m = DMatrix::zeros(n, self.s());
        let mut x = DMatrix::zeros(n, self.r());
        for (row, &i) in indices.iter().enumerate() {
            y[row] = self.y[i];
            t[row] = self.t[i];
            for j in 0..self.s() {
                m[(row, j)] = self.m[(i, j)];
            }
            for j in 0..self.r() {
                x[(row, j)] = self.x[(i, j)];
            }
        }
        Dataset {
            y,
            t,
            m,
            x,
            treatment: self.treatment.clone(),
        }
    }

    /// Parse a CSV stream with a header row into a dataset.
    pub fn from_csv_reader<R: Read>(
        reader: R,
        mapping: &ColumnMapping,
        treatment: TreatmentKind,
    ) -> Result<Self, DataError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_reader(reader);
        let headers: Vec<String> = match rdr.headers() {
            Ok(h) if !h.is_empty() => h.iter().map(|s| s.trim().to_string()).collect(),
            _ => return Err(DataError::EmptyInput),
        };
        if headers.iter().all(|h| h.is_empty()) {
            return Err(DataError::EmptyInput);
        }
        let find = |name: &str| -> Result<usize, DataError> {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| DataError::MissingColumn(name.to_string()))
        };
        let y_idx = find(&mapping.y)?;
        let t_idx = find(&mapping.t)?;
        let m_idx: Vec<usize> = mapping.m.iter().map(|c| find(c)).collect::<Result<_, _>>()?;
        let x_idx: Vec<usize> = mapping.x.iter().map(|c| find(c)).collect::<Result<_, _>>()?;

        let mut y = Vec::new();
        let mut t = Vec::new();
        let mut m_rows: Vec<f64> = Vec::new();
        let mut x_rows: Vec<f64> = Vec::new();
        for (row_num, record) in rdr.records().enumerate() {
            let row = row_num + 1;
            let record = record?;
            if record.len() != headers.len() {
                return Err(DataError::RaggedRow {
                    row,
                    expected: headers.len(),
                    found: record.len(),
                });
            }
            let parse = |idx: usize| -> Result<f64, DataError> {
                let raw = record.get(idx).unwrap_or("").trim();
                let value: f64 = raw.parse().map_err(|_| DataError::BadCell {
                    row,
                    column: headers[idx].clone(),
                    value: raw.to_string(),
                })?;
                if !value.is_finite() {
                    return Err(DataError::NonFinite {
                        row,
                        column: headers[idx].clone(),
                    });
                }
                Ok(value)
            };
            y.push(parse(y_idx)?);
            t.push(parse(t_idx)?);
            for &idx in &m_idx {
                m_rows.push(parse(idx)?);
            }
            for &idx in &x_idx {
                x_rows.push(parse(idx)?);
            }
        }
        let n = y.len();
        if n == 0 {
            return Err(DataError::NoRows);
        }
        let s = m_idx.len();
        let r = x_idx.len();
        let m = DMatrix::from_row_iterator(n, s, m_rows);
        let x = DMatrix::from_row_iterator(n, r, x_rows);
        let treatment = match treatment {
            TreatmentKind::Discrete { levels } if levels.is_empty() => {
                let found: Vec<f64> = {
                    let tmp = Dataset {
                        y: DVector::from_vec(y.clone()),
                        t: DVector::from_vec(t.clone()),
                        m: m.clone(),
                        x: x.clone(),
                        treatment: TreatmentKind::Continuous,
                    };
                    tmp.distinct_treatment_levels()
                };
                if found.len() > 64 {
                    return Err(DataError::TooManyLevels(found.len(), 64));
                }
                TreatmentKind::Discrete { levels: found }
            }
            other => other,
        };
        Dataset::new(
            DVector::from_vec(y),
            DVector::from_vec(t),
            m,
            x,
            treatment,
        )
    }

    pub fn from_csv_path<P: AsRef<Path>>(
        path: P,
        mapping: &ColumnMapping,
        treatment: TreatmentKind,
    ) -> Result<Self, DataError> {
        let file = File::open(path)?;
        Self::from_csv_reader(file, mapping, treatment)
    }

    /// Write the dataset back out as CSV with the given column names; the
    /// default float formatting round-trips exactly.
    pub fn write_csv<W: Write>(&self, out: &mut W, mapping: &ColumnMapping) -> Result<(), DataError> {
        let mut header: Vec<&str> = vec![mapping.y.as_str(), mapping.t.as_str()];
        header.extend(mapping.m.iter().map(|s| s.as_str()));
        header.extend(mapping.x.iter().map(|s| s.as_str()));
        writeln!(out, "{}", header.join(","))?;
        for i in 0..self.n() {
            let mut fields = vec![format!("{}", self.y[i]), format!("{}", self.t[i])];
            for j in 0..self.s() {
                fields.push(format!("{}", self.m[(i, j)]));
            }
            for j in 0..self.r() {
                fields.push(format!("{}", self.x[(i, j)]));
            }
            writeln!(out, "{}", fields.join(","))?;
        }
        Ok(())
    }
}

/// Parse a grid specification of the form `start:end:step` into the list of
/// grid points `start, start+step, ..., <= end` (with a half-step tolerance
/// on the right endpoint).
pub fn parse_grid_spec(spec: &str) -> Result<Vec<f64>, DataError> {
    let bad = |reason: &str| DataError::BadGridSpec {
        spec: spec.to_string(),
        reason: reason.to_string(),
    };
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(bad("expected start:end:step"));
    }
    let nums: Vec<f64> = parts
        .iter()
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| bad("non-numeric field"))?;
    let (start, end, step) = (nums[0], nums[1], nums[2]);
    if !start.is_finite() || !end.is_finite() || !step.is_finite() {
        return Err(bad("non-finite field"));
    }
    if step <= 0.0 {
        return Err(bad("step must be positive"));
    }
    if end < start {
        return Err(bad("end is before start"));
    }
    let count = ((end - start) / step).round() as i64;
    if count < 0 || count > 100_000 {
        return Err(bad("grid would have more than 100000 points"));
    }
    let mut grid = Vec::with_capacity(count as usize + 1);
    for k in 0..=count {
        let v = start + step * k as f64;
        if v <= end + 0.5 * step {
            grid.push(v);
        }
    }
    if grid.is_empty() {
        return Err(bad("empty grid"));
    }
    Ok(grid)
}
