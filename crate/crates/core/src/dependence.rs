//! Pearson and Kendall dependence matrices.
//!
//! Covariances use the maximum-likelihood normalization `1/q`. Kendall
//! correlations are tau-b, computed per pair with Knight's merge-sort
//! inversion count in `O(q log q)`.

use std::cmp::Ordering;
use std::f64::consts::FRAC_PI_2;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::observation::ObservationMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DependenceKind {
    PearsonCovariance,
    PearsonCorrelation,
    KendallCorrelation,
    /// Kendall correlation rescaled by per-variable standard deviations.
    KendallCovariance,
}

impl DependenceKind {
    pub fn is_correlation(self) -> bool {
        matches!(self, Self::PearsonCorrelation | Self::KendallCorrelation)
    }

    pub fn is_covariance(self) -> bool {
        !self.is_correlation()
    }
}

/// Which sample estimator feeds the network and the local inversions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Pearson,
    Kendall,
}

impl Estimator {
    pub fn as_str(self) -> &'static str {
        match self {
            Estimator::Pearson => "pearson",
            Estimator::Kendall => "kendall",
        }
    }
}

impl std::str::FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pearson" => Ok(Estimator::Pearson),
            "kendall" => Ok(Estimator::Kendall),
            other => Err(Error::Config(format!("unknown estimator '{other}'"))),
        }
    }
}

/// Optional consistency transform applied to Kendall's tau before it is used
/// as a correlation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KendallTransform {
    /// Use tau directly.
    #[default]
    None,
    /// `sin(pi * tau / 2)`, consistent for elliptical distributions.
    Sine,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DependenceMatrix {
    kind: DependenceKind,
    matrix: DMatrix<f64>,
    /// Per-variable standard deviations (ML normalization).
    scale: DVector<f64>,
}

impl DependenceMatrix {
    /// Builds a dependence matrix after checking symmetry and the
    /// kind-specific diagonal invariants.
    pub fn new(kind: DependenceKind, matrix: DMatrix<f64>, scale: DVector<f64>) -> Result<Self> {
        let p = matrix.nrows();
        if matrix.ncols() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: matrix.ncols(),
            });
        }
        if scale.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: scale.len(),
            });
        }
        for i in 0..p {
            for j in 0..i {
                if (matrix[(i, j)] - matrix[(j, i)]).abs() > 1e-12 {
                    return Err(Error::DegenerateInput(format!(
                        "dependence matrix not symmetric at ({j}, {i})"
                    )));
                }
            }
        }
        if kind.is_correlation() {
            if (0..p).any(|i| (matrix[(i, i)] - 1.0).abs() > 1e-12) {
                return Err(Error::DegenerateInput(
                    "correlation matrix must have a unit diagonal".into(),
                ));
            }
            if matrix.iter().any(|v| v.abs() > 1.0 + 1e-12) {
                return Err(Error::DegenerateInput(
                    "correlation entries must lie in [-1, 1]".into(),
                ));
            }
        } else if let Some(i) = (0..p).find(|&i| matrix[(i, i)] <= 0.0) {
            return Err(Error::DegenerateInput(format!(
                "covariance diagonal entry {i} is not strictly positive"
            )));
        }
        Ok(Self {
            kind,
            matrix,
            scale,
        })
    }

    pub fn kind(&self) -> DependenceKind {
        self.kind
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn scale(&self) -> &DVector<f64> {
        &self.scale
    }

    pub fn p(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[(i, j)]
    }

    /// Principal submatrix on `indices` (in the given order).
    pub fn block(&self, indices: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(indices.len(), indices.len(), |a, b| {
            self.matrix[(indices[a], indices[b])]
        })
    }
}

fn check_observations(data: &ObservationMatrix) -> Result<()> {
    if data.q() < 2 {
        return Err(Error::DegenerateInput(format!(
            "at least 2 observations required, got {}",
            data.q()
        )));
    }
    Ok(())
}

fn centered_columns(data: &ObservationMatrix) -> Result<(DMatrix<f64>, DVector<f64>)> {
    check_observations(data)?;
    let mean = data.mean();
    let mut centered = data.values().clone();
    for (i, mut col) in centered.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[i]);
    }
    let q = data.q() as f64;
    let sd = DVector::from_fn(data.p(), |i, _| {
        (centered.column(i).iter().map(|v| v * v).sum::<f64>() / q).sqrt()
    });
    if let Some(i) = (0..data.p()).find(|&i| sd[i] == 0.0) {
        return Err(Error::DegenerateInput(format!(
            "column '{}' has zero variance",
            data.labels()[i]
        )));
    }
    Ok((centered, sd))
}

/// Sample covariance with `1/q` normalization.
pub fn pearson_covariance(data: &ObservationMatrix) -> Result<DependenceMatrix> {
    let (centered, sd) = centered_columns(data)?;
    let q = data.q() as f64;
    let p = data.p();
    let mut cov = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in 0..=i {
            let v = centered.column(i).dot(&centered.column(j)) / q;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    DependenceMatrix::new(DependenceKind::PearsonCovariance, cov, sd)
}

pub fn pearson_correlation(data: &ObservationMatrix) -> Result<DependenceMatrix> {
    covariance_to_correlation(&pearson_covariance(data)?)
}

/// Kendall tau-b between two equally long samples.
///
/// Ties are handled with the tau-b correction. Returns an error when either
/// sample is constant.
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::DegenerateInput(
            "Kendall tau needs at least 2 observations".into(),
        ));
    }

    let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let n0 = (n as i64) * (n as i64 - 1) / 2;
    let tie_pairs = |run: i64| run * (run - 1) / 2;

    // Ties in x, and joint ties in (x, y).
    let mut n1 = 0i64;
    let mut n3 = 0i64;
    let mut run_x = 1i64;
    let mut run_xy = 1i64;
    for w in pairs.windows(2) {
        if w[0].0 == w[1].0 {
            run_x += 1;
            if w[0].1 == w[1].1 {
                run_xy += 1;
            } else {
                n3 += tie_pairs(run_xy);
                run_xy = 1;
            }
        } else {
            n1 += tie_pairs(run_x);
            n3 += tie_pairs(run_xy);
            run_x = 1;
            run_xy = 1;
        }
    }
    n1 += tie_pairs(run_x);
    n3 += tie_pairs(run_xy);

    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = vec![0.0; n];
    let discordant = merge_sort_inversions(&mut ys, &mut buf);

    let mut n2 = 0i64;
    let mut run_y = 1i64;
    for w in ys.windows(2) {
        if w[0] == w[1] {
            run_y += 1;
        } else {
            n2 += tie_pairs(run_y);
            run_y = 1;
        }
    }
    n2 += tie_pairs(run_y);

    let untied_x = n0 - n1;
    let untied_y = n0 - n2;
    if untied_x == 0 || untied_y == 0 {
        return Err(Error::DegenerateInput(
            "Kendall tau undefined for a constant sample".into(),
        ));
    }
    let numerator = n0 - n1 - n2 + n3 - 2 * discordant;
    Ok(tau_b_from_counts(numerator, untied_x, untied_y))
}

/// Final tau-b ratio; shared so independent counting routes produce
/// bit-identical results from identical integer counts.
pub fn tau_b_from_counts(concordant_minus_discordant: i64, untied_x: i64, untied_y: i64) -> f64 {
    concordant_minus_discordant as f64 / ((untied_x as f64) * (untied_y as f64)).sqrt()
}

/// Sorts `v` ascending and returns the number of strictly inverted pairs.
fn merge_sort_inversions(v: &mut [f64], buf: &mut [f64]) -> i64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = {
        let (left, right) = v.split_at_mut(mid);
        let (bl, br) = buf.split_at_mut(mid);
        merge_sort_inversions(left, bl) + merge_sort_inversions(right, br)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j].total_cmp(&v[i]) == Ordering::Less {
            buf[k] = v[j];
            swaps += (mid - i) as i64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// Pairwise Kendall tau-b matrix with unit diagonal. Pairs are evaluated in
/// parallel; each entry depends only on its two columns.
pub fn kendall_correlation(data: &ObservationMatrix) -> Result<DependenceMatrix> {
    let (_, sd) = centered_columns(data)?;
    let p = data.p();
    let columns: Vec<Vec<f64>> = (0..p).map(|i| data.column(i)).collect();
    let pairs: Vec<(usize, usize)> = (0..p)
        .flat_map(|i| (0..i).map(move |j| (i, j)))
        .collect();
    let taus = pairs
        .par_iter()
        .map(|&(i, j)| kendall_tau_b(&columns[i], &columns[j]))
        .collect::<Result<Vec<f64>>>()?;
    let mut m = DMatrix::identity(p, p);
    for (&(i, j), &t) in pairs.iter().zip(&taus) {
        m[(i, j)] = t;
        m[(j, i)] = t;
    }
    DependenceMatrix::new(DependenceKind::KendallCorrelation, m, sd)
}

/// Applies `sin(pi * tau / 2)` off the diagonal.
pub fn sine_transform(corr: &DependenceMatrix) -> Result<DependenceMatrix> {
    if corr.kind() != DependenceKind::KendallCorrelation {
        return Err(Error::Config(
            "sine transform applies to Kendall correlations only".into(),
        ));
    }
    let p = corr.p();
    let m = DMatrix::from_fn(p, p, |i, j| {
        if i == j {
            1.0
        } else {
            (FRAC_PI_2 * corr.get(i, j)).sin()
        }
    });
    DependenceMatrix::new(corr.kind(), m, corr.scale().clone())
}

/// `out_ij = scale_i * scale_j * corr_ij`.
pub fn correlation_to_covariance(
    corr: &DependenceMatrix,
    scale: &DVector<f64>,
) -> Result<DependenceMatrix> {
    let kind = match corr.kind() {
        DependenceKind::PearsonCorrelation => DependenceKind::PearsonCovariance,
        DependenceKind::KendallCorrelation => DependenceKind::KendallCovariance,
        _ => {
            return Err(Error::Config(
                "correlation_to_covariance expects a correlation matrix".into(),
            ))
        }
    };
    if scale.len() != corr.p() {
        return Err(Error::DimensionMismatch {
            expected: corr.p(),
            got: scale.len(),
        });
    }
    if let Some(i) = scale.iter().position(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::DegenerateInput(format!(
            "scale entry {i} must be strictly positive, got {}",
            scale[i]
        )));
    }
    let p = corr.p();
    let m = DMatrix::from_fn(p, p, |i, j| scale[i] * scale[j] * corr.get(i, j));
    DependenceMatrix::new(kind, m, scale.clone())
}

/// Divides by the square roots of the diagonal.
pub fn covariance_to_correlation(cov: &DependenceMatrix) -> Result<DependenceMatrix> {
    let kind = match cov.kind() {
        DependenceKind::PearsonCovariance => DependenceKind::PearsonCorrelation,
        DependenceKind::KendallCovariance => DependenceKind::KendallCorrelation,
        _ => {
            return Err(Error::Config(
                "covariance_to_correlation expects a covariance matrix".into(),
            ))
        }
    };
    let p = cov.p();
    let sd = DVector::from_fn(p, |i, _| cov.get(i, i).sqrt());
    let m = DMatrix::from_fn(p, p, |i, j| {
        if i == j {
            1.0
        } else {
            (cov.get(i, j) / (sd[i] * sd[j])).clamp(-1.0, 1.0)
        }
    });
    DependenceMatrix::new(kind, m, sd)
}

/// Correlation matrix used to learn the network for `estimator`.
pub fn correlation_for(
    data: &ObservationMatrix,
    estimator: Estimator,
    transform: KendallTransform,
) -> Result<DependenceMatrix> {
    match estimator {
        Estimator::Pearson => pearson_correlation(data),
        Estimator::Kendall => {
            let tau = kendall_correlation(data)?;
            match transform {
                KendallTransform::None => Ok(tau),
                KendallTransform::Sine => sine_transform(&tau),
            }
        }
    }
}

/// Covariance used for the local inversions for `estimator`: the Pearson
/// covariance, or the (optionally transformed) Kendall correlation rescaled
/// by the sample standard deviations.
pub fn covariance_for(
    data: &ObservationMatrix,
    estimator: Estimator,
    transform: KendallTransform,
) -> Result<DependenceMatrix> {
    match estimator {
        Estimator::Pearson => pearson_covariance(data),
        Estimator::Kendall => {
            let corr = correlation_for(data, estimator, transform)?;
            let scale = corr.scale().clone();
            correlation_to_covariance(&corr, &scale)
        }
    }
}
