//! Observation matrices: rows are observations, columns are variables.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationMatrix {
    values: DMatrix<f64>,
    labels: Vec<String>,
}

impl ObservationMatrix {
    /// Wraps a q×p matrix. Every entry must be finite and there must be one
    /// label per column. Zero-variance columns are accepted here and rejected
    /// by the estimators that cannot handle them.
    pub fn new(values: DMatrix<f64>, labels: Vec<String>) -> Result<Self> {
        if labels.len() != values.ncols() {
            return Err(Error::DimensionMismatch {
                expected: values.ncols(),
                got: labels.len(),
            });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let (row, col) = (pos % values.nrows(), pos / values.nrows());
            return Err(Error::DegenerateInput(format!(
                "non-finite value at row {row}, column '{}'",
                labels[col]
            )));
        }
        Ok(Self { values, labels })
    }

    /// Labels default to `x0, x1, ...`.
    pub fn from_matrix(values: DMatrix<f64>) -> Result<Self> {
        let labels = (0..values.ncols()).map(|i| format!("x{i}")).collect();
        Self::new(values, labels)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let q = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != p) {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: bad.len(),
            });
        }
        Self::from_matrix(DMatrix::from_fn(q, p, |s, i| rows[s][i]))
    }

    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let p = columns.len();
        let q = columns.first().map_or(0, Vec::len);
        if let Some(bad) = columns.iter().find(|c| c.len() != q) {
            return Err(Error::DimensionMismatch {
                expected: q,
                got: bad.len(),
            });
        }
        Self::from_matrix(DMatrix::from_fn(q, p, |s, i| columns[i][s]))
    }

    /// Number of observations.
    pub fn q(&self) -> usize {
        self.values.nrows()
    }

    /// Number of variables.
    pub fn p(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        self.values.column(i).iter().copied().collect()
    }

    pub fn row(&self, s: usize) -> DVector<f64> {
        self.values.row(s).transpose()
    }

    /// Column means.
    pub fn mean(&self) -> DVector<f64> {
        let q = self.q() as f64;
        DVector::from_fn(self.p(), |i, _| self.values.column(i).iter().sum::<f64>() / q)
    }

    /// Stacks `other` below `self`. Labels are taken from `self`.
    pub fn concat_rows(&self, other: &ObservationMatrix) -> Result<Self> {
        if other.p() != self.p() {
            return Err(Error::DimensionMismatch {
                expected: self.p(),
                got: other.p(),
            });
        }
        let q = self.q();
        let values = DMatrix::from_fn(q + other.q(), self.p(), |s, i| {
            if s < q {
                self.values[(s, i)]
            } else {
                other.values[(s - q, i)]
            }
        });
        Self::new(values, self.labels.clone())
    }

    /// Keeps the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let values = DMatrix::from_fn(rows.len(), self.p(), |s, i| self.values[(rows[s], i)]);
        Self {
            values,
            labels: self.labels.clone(),
        }
    }

    /// Reads a CSV whose header holds the variable labels and whose rows are
    /// observations.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let labels: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        let mut data = Vec::new();
        let mut q = 0;
        for (row, record) in rdr.records().enumerate() {
            let record = record?;
            if record.len() != labels.len() {
                return Err(Error::Ingestion {
                    row: row + 1,
                    column: String::new(),
                    message: format!("expected {} fields, found {}", labels.len(), record.len()),
                });
            }
            for (field, label) in record.iter().zip(&labels) {
                let v: f64 = field.parse().map_err(|_| Error::Ingestion {
                    row: row + 1,
                    column: label.clone(),
                    message: format!("cannot parse '{field}' as a number"),
                })?;
                data.push(v);
            }
            q += 1;
        }
        let p = labels.len();
        Self::new(DMatrix::from_row_slice(q, p, &data), labels)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(&self.labels)?;
        for s in 0..self.q() {
            wtr.write_record(self.values.row(s).iter().map(|v| v.to_string()))?;
        }
        wtr.flush()?;
        Ok(())
    }
}
