//! Price panels, log-returns and the train/test resampling protocol.

use std::collections::HashMap;
use std::io::Read;

use chrono::NaiveDate;
use nalgebra::DMatrix;
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::observation::ObservationMatrix;
use crate::synth::{observation_rng, standard_normal};

/// Daily prices, one column per ticker.
#[derive(Debug, Clone, PartialEq)]
pub struct PricePanel {
    dates: Vec<NaiveDate>,
    tickers: Vec<String>,
    prices: DMatrix<f64>,
}

fn is_missing(field: &str) -> bool {
    field.is_empty() || matches!(field.to_ascii_lowercase().as_str(), "na" | "nan" | "null")
}

impl PricePanel {
    pub fn new(dates: Vec<NaiveDate>, tickers: Vec<String>, prices: DMatrix<f64>) -> Result<Self> {
        if prices.nrows() != dates.len() {
            return Err(Error::DimensionMismatch {
                expected: dates.len(),
                got: prices.nrows(),
            });
        }
        if prices.ncols() != tickers.len() {
            return Err(Error::DimensionMismatch {
                expected: tickers.len(),
                got: prices.ncols(),
            });
        }
        if let Some(w) = dates.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::Ingestion {
                row: w + 2,
                column: "date".into(),
                message: format!("date {} does not follow {}", dates[w + 1], dates[w]),
            });
        }
        Ok(Self {
            dates,
            tickers,
            prices,
        })
    }

    /// Reads a CSV whose first column is `date` (YYYY-MM-DD) and whose other
    /// columns hold one ticker each. Rows with any missing price are
    /// dropped. Row numbers in errors count data rows from 1.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        if header.first().map(String::as_str) != Some("date") {
            return Err(Error::Ingestion {
                row: 0,
                column: header.first().cloned().unwrap_or_default(),
                message: "first column must be named 'date'".into(),
            });
        }
        let tickers = header[1..].to_vec();
        let mut dates = Vec::new();
        let mut data = Vec::new();
        for (idx, record) in rdr.records().enumerate() {
            let row = idx + 1;
            let record = record?;
            if record.len() != header.len() {
                return Err(Error::Ingestion {
                    row,
                    column: String::new(),
                    message: format!("expected {} fields, found {}", header.len(), record.len()),
                });
            }
            let date = NaiveDate::parse_from_str(&record[0], "%Y-%m-%d").map_err(|e| {
                Error::Ingestion {
                    row,
                    column: "date".into(),
                    message: format!("invalid date '{}': {e}", &record[0]),
                }
            })?;
            if record.iter().skip(1).any(is_missing) {
                continue;
            }
            let mut values = Vec::with_capacity(tickers.len());
            for (field, ticker) in record.iter().skip(1).zip(&tickers) {
                let v: f64 = field.parse().map_err(|_| Error::Ingestion {
                    row,
                    column: ticker.clone(),
                    message: format!("cannot parse '{field}' as a price"),
                })?;
                if !(v > 0.0) || !v.is_finite() {
                    return Err(Error::Ingestion {
                        row,
                        column: ticker.clone(),
                        message: format!("price must be positive, got {v}"),
                    });
                }
                values.push(v);
            }
            dates.push(date);
            data.extend(values);
        }
        let q = dates.len();
        Self::new(dates, tickers, DMatrix::from_row_slice(q, header.len() - 1, &data))
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn prices(&self) -> &DMatrix<f64> {
        &self.prices
    }
}

/// First differences of log prices, `(q-1) x p`.
pub fn compute_log_returns(panel: &PricePanel) -> Result<ObservationMatrix> {
    let q = panel.prices.nrows();
    if q < 2 {
        return Err(Error::DegenerateInput(format!(
            "need at least 2 price rows, got {q}"
        )));
    }
    for s in 0..q {
        for (i, ticker) in panel.tickers.iter().enumerate() {
            let price = panel.prices[(s, i)];
            if !(price > 0.0) {
                return Err(Error::Ingestion {
                    row: s + 1,
                    column: ticker.clone(),
                    message: format!("price must be positive, got {price}"),
                });
            }
        }
    }
    let values = DMatrix::from_fn(q - 1, panel.prices.ncols(), |s, i| {
        panel.prices[(s + 1, i)].ln() - panel.prices[(s, i)].ln()
    });
    ObservationMatrix::new(values, panel.tickers.clone())
}

fn default_jitter() -> f64 {
    1e-2
}

fn default_true() -> bool {
    true
}

/// How train/test splits are drawn from a returns matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResamplePlan {
    pub n_resamples: usize,
    pub p_select: usize,
    pub q_train: usize,
    pub q_test: usize,
    #[serde(default = "default_true")]
    pub series_with_replacement: bool,
    #[serde(default)]
    pub seed: u64,
    /// Noise added to repeated copies of a series, as a fraction of its
    /// standard deviation.
    #[serde(default = "default_jitter")]
    pub jitter: f64,
}

impl ResamplePlan {
    pub fn check(&self, q: usize, p: usize) -> Result<()> {
        if self.n_resamples == 0 {
            return Err(Error::Config("n_resamples must be positive".into()));
        }
        if self.p_select == 0 {
            return Err(Error::Config("p_select must be positive".into()));
        }
        if !self.series_with_replacement && self.p_select > p {
            return Err(Error::Config(format!(
                "cannot select {} of {p} series without replacement",
                self.p_select
            )));
        }
        if self.q_train + self.q_test > q {
            return Err(Error::Config(format!(
                "q_train + q_test = {} exceeds the {q} available observations",
                self.q_train + self.q_test
            )));
        }
        if !(self.jitter >= 0.0) {
            return Err(Error::Config(format!("jitter must be non-negative, got {}", self.jitter)));
        }
        Ok(())
    }
}

/// Train/test split number `resample_index`; disjoint rows, deterministic
/// in `(plan.seed, resample_index)`.
pub fn resample(
    returns: &ObservationMatrix,
    plan: &ResamplePlan,
    resample_index: usize,
) -> Result<(ObservationMatrix, ObservationMatrix)> {
    let (q, p) = (returns.q(), returns.p());
    plan.check(q, p)?;
    let mut rng = observation_rng(plan.seed, resample_index as u64);

    let columns: Vec<usize> = if plan.series_with_replacement {
        (0..plan.p_select).map(|_| rng.random_range(0..p)).collect()
    } else {
        index::sample(&mut rng, p, plan.p_select).into_vec()
    };
    let n_rows = plan.q_train + plan.q_test;
    let rows = index::sample(&mut rng, q, n_rows).into_vec();

    let src = returns.values();
    let mut values = DMatrix::from_fn(n_rows, columns.len(), |s, c| src[(rows[s], columns[c])]);
    let mut seen: HashMap<usize, usize> = HashMap::new();
    let mut labels = Vec::with_capacity(columns.len());
    for (c, &orig) in columns.iter().enumerate() {
        let copy = seen.entry(orig).or_insert(0);
        *copy += 1;
        let label = &returns.labels()[orig];
        if *copy == 1 {
            labels.push(label.clone());
            continue;
        }
        labels.push(format!("{label}#{copy}"));
        let col = values.column(c);
        let mean = col.mean();
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n_rows as f64).sqrt();
        let amplitude = plan.jitter * if sd > 0.0 { sd } else { 1.0 };
        for s in 0..n_rows {
            values[(s, c)] += amplitude * standard_normal(&mut rng);
        }
    }

    let all = ObservationMatrix::new(values, labels)?;
    let train_rows: Vec<usize> = (0..plan.q_train).collect();
    let test_rows: Vec<usize> = (plan.q_train..n_rows).collect();
    Ok((all.select_rows(&train_rows), all.select_rows(&test_rows)))
}
