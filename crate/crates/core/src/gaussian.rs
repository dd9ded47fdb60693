//! Sparse Gaussian models on a clique forest.
//!
//! The precision matrix is assembled from local inversions:
//! `J = sum_c pad(S_c^-1) - sum_s pad(S_s^-1)`, where `S_c`, `S_s` are the
//! covariance blocks of the cliques and separators. On a chordal structure
//! this is the constrained maximum-likelihood estimate, and both the
//! log-determinant and the Mahalanobis form split over the same blocks.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::dependence::{covariance_for, DependenceMatrix, Estimator, KendallTransform};
use crate::error::{BlockId, Error, Result};
use crate::forest::CliqueForest;
use crate::observation::ObservationMatrix;

/// `log(2 pi)`.
pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AssemblyOptions {
    /// Added to the diagonal of every local block before inversion. Zero
    /// disables loading.
    pub diagonal_loading: f64,
}

/// Inverse of one clique or separator covariance block.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalBlock {
    pub indices: Vec<usize>,
    pub precision: DMatrix<f64>,
    /// `log |precision|`.
    pub log_det: f64,
}

impl LocalBlock {
    fn from_covariance(
        id: BlockId,
        indices: &[usize],
        mut cov: DMatrix<f64>,
        opts: &AssemblyOptions,
    ) -> Result<Self> {
        if opts.diagonal_loading != 0.0 {
            for k in 0..cov.nrows() {
                cov[(k, k)] += opts.diagonal_loading;
            }
        }
        let chol = cov.cholesky().ok_or_else(|| Error::BlockConditioning {
            block: id,
            indices: indices.to_vec(),
        })?;
        let l = chol.l_dirty();
        let log_det = -2.0 * (0..l.nrows()).map(|k| l[(k, k)].ln()).sum::<f64>();
        if !log_det.is_finite() {
            return Err(Error::BlockConditioning {
                block: id,
                indices: indices.to_vec(),
            });
        }
        let inv = chol.inverse();
        let precision = (&inv + inv.transpose()) * 0.5;
        Ok(Self {
            indices: indices.to_vec(),
            precision,
            log_det,
        })
    }

    fn quadratic(&self, delta: &DVector<f64>) -> f64 {
        let n = self.indices.len();
        let mut acc = 0.0;
        for a in 0..n {
            let da = delta[self.indices[a]];
            let mut row = 0.0;
            for b in 0..n {
                row += self.precision[(a, b)] * delta[self.indices[b]];
            }
            acc += da * row;
        }
        acc
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalFactors {
    pub cliques: Vec<LocalBlock>,
    pub separators: Vec<LocalBlock>,
}

/// Symmetric precision with support on the forest edges plus the diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsePrecision {
    p: usize,
    entries: BTreeMap<(usize, usize), f64>,
    forest: Arc<CliqueForest>,
    local: Option<LocalFactors>,
}

impl SparsePrecision {
    /// Wraps explicit entries. Keys are normalized to `i <= j`; entries off
    /// the forest support are rejected. Positive definiteness is not checked.
    pub fn from_entries<I>(forest: Arc<CliqueForest>, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        let p = forest.p();
        let edges = forest.edge_set();
        let mut map = BTreeMap::new();
        for (i, j, v) in entries {
            let (i, j) = (i.min(j), i.max(j));
            if j >= p {
                return Err(Error::DimensionMismatch { expected: p, got: j + 1 });
            }
            if i != j && !edges.contains(i, j) {
                return Err(Error::InvalidForest(format!(
                    "precision entry ({i}, {j}) is not an edge of the network"
                )));
            }
            if !v.is_finite() {
                return Err(Error::DegenerateInput(format!(
                    "precision entry ({i}, {j}) is not finite"
                )));
            }
            map.insert((i, j), v);
        }
        Ok(Self {
            p,
            entries: map,
            forest,
            local: None,
        })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn forest(&self) -> &Arc<CliqueForest> {
        &self.forest
    }

    pub fn local_factors(&self) -> Option<&LocalFactors> {
        self.local.as_ref()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let key = (i.min(j), i.max(j));
        self.entries.get(&key).copied().unwrap_or(0.0)
    }

    /// Stored entries `(i, j, value)` with `i <= j`, sorted.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.entries.iter().map(|(&(i, j), &v)| (i, j, v))
    }

    /// Number of nonzero off-diagonal pairs.
    pub fn off_diagonal_nonzeros(&self) -> usize {
        self.entries
            .iter()
            .filter(|(&(i, j), &v)| i != j && v != 0.0)
            .count()
    }

    pub fn dense_embedding(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.p, self.p);
        for (&(i, j), &v) in &self.entries {
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
        m
    }

    /// `log |J|`. Uses the clique/separator decomposition when the precision
    /// was assembled from local blocks, and a dense Cholesky otherwise.
    pub fn log_det(&self) -> Result<f64> {
        match &self.local {
            Some(local) => Ok(local.cliques.iter().map(|b| b.log_det).sum::<f64>()
                - local.separators.iter().map(|b| b.log_det).sum::<f64>()),
            None => {
                let chol = self
                    .dense_embedding()
                    .cholesky()
                    .ok_or(Error::NotPositiveDefinite)?;
                let l = chol.l_dirty();
                Ok(2.0 * (0..self.p).map(|k| l[(k, k)].ln()).sum::<f64>())
            }
        }
    }

    /// `(x - mu)^T J (x - mu)`, split over cliques and separators when local
    /// blocks are available. Clamped at zero against rounding.
    pub fn mahalanobis_sq(&self, x: &DVector<f64>, mu: &DVector<f64>) -> f64 {
        let delta = x - mu;
        let d2 = match &self.local {
            Some(local) => {
                local.cliques.iter().map(|b| b.quadratic(&delta)).sum::<f64>()
                    - local.separators.iter().map(|b| b.quadratic(&delta)).sum::<f64>()
            }
            None => self.quadratic_form(&delta),
        };
        d2.max(0.0)
    }

    /// Direct sparse quadratic form `v^T J v`.
    pub fn quadratic_form(&self, v: &DVector<f64>) -> f64 {
        self.entries
            .iter()
            .map(|(&(i, j), &a)| {
                if i == j {
                    a * v[i] * v[i]
                } else {
                    2.0 * a * v[i] * v[j]
                }
            })
            .sum()
    }

    /// Maximum relative change `|new - old| / (1 + |old|)` over the union
    /// of both supports.
    pub fn max_relative_change(&self, old: &SparsePrecision) -> f64 {
        let keys: std::collections::BTreeSet<&(usize, usize)> =
            self.entries.keys().chain(old.entries.keys()).collect();
        keys.into_iter()
            .map(|k| {
                let a = self.entries.get(k).copied().unwrap_or(0.0);
                let b = old.entries.get(k).copied().unwrap_or(0.0);
                (a - b).abs() / (1.0 + b.abs())
            })
            .fold(0.0, f64::max)
    }
}

/// True iff the dense embedding admits a Cholesky factorization.
pub fn check_positive_definite(precision: &SparsePrecision) -> bool {
    precision.dense_embedding().cholesky().is_some()
}

/// Assembles `J` from local covariance blocks supplied by `block`. Cliques
/// and separators are inverted in parallel and summed in forest order.
pub(crate) fn assemble_from_blocks<F>(
    forest: Arc<CliqueForest>,
    block: F,
    opts: &AssemblyOptions,
) -> Result<SparsePrecision>
where
    F: Fn(&[usize]) -> DMatrix<f64> + Sync,
{
    let cliques = forest
        .cliques()
        .par_iter()
        .enumerate()
        .map(|(c, idx)| LocalBlock::from_covariance(BlockId::Clique(c), idx, block(idx), opts))
        .collect::<Result<Vec<_>>>()?;
    let separators = forest
        .separators()
        .par_iter()
        .enumerate()
        .filter(|(_, s)| !s.vertices.is_empty())
        .map(|(k, s)| {
            LocalBlock::from_covariance(BlockId::Separator(k), &s.vertices, block(&s.vertices), opts)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut entries: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut scatter = |b: &LocalBlock, sign: f64| {
        for (a, &i) in b.indices.iter().enumerate() {
            for (c, &j) in b.indices.iter().enumerate().skip(a) {
                *entries.entry((i.min(j), i.max(j))).or_insert(0.0) += sign * b.precision[(a, c)];
            }
        }
    };
    for b in &cliques {
        scatter(b, 1.0);
    }
    for b in &separators {
        scatter(b, -1.0);
    }

    Ok(SparsePrecision {
        p: forest.p(),
        entries,
        forest,
        local: Some(LocalFactors {
            cliques,
            separators,
        }),
    })
}

/// Constrained maximum-likelihood precision from a covariance estimate.
pub fn assemble_precision(
    cov: &DependenceMatrix,
    forest: Arc<CliqueForest>,
    opts: &AssemblyOptions,
) -> Result<SparsePrecision> {
    if !cov.kind().is_covariance() {
        return Err(Error::Config(
            "assemble_precision expects a covariance matrix".into(),
        ));
    }
    if cov.p() != forest.p() {
        return Err(Error::DimensionMismatch {
            expected: forest.p(),
            got: cov.p(),
        });
    }
    assemble_from_blocks(forest, |idx| cov.block(idx), opts)
}

/// Sample mean.
pub fn fit_mu(data: &ObservationMatrix) -> DVector<f64> {
    data.mean()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianModel {
    pub mu: DVector<f64>,
    pub precision: SparsePrecision,
}

impl GaussianModel {
    pub fn new(mu: DVector<f64>, precision: SparsePrecision) -> Result<Self> {
        if mu.len() != precision.p() {
            return Err(Error::DimensionMismatch {
                expected: precision.p(),
                got: mu.len(),
            });
        }
        Ok(Self { mu, precision })
    }

    pub fn p(&self) -> usize {
        self.mu.len()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FitOptions {
    pub kendall_transform: KendallTransform,
    pub assembly: AssemblyOptions,
}

/// Sample mean plus the constrained-ML precision for the chosen estimator.
pub fn fit_gaussian(
    data: &ObservationMatrix,
    forest: Arc<CliqueForest>,
    estimator: Estimator,
    opts: &FitOptions,
) -> Result<GaussianModel> {
    let cov = covariance_for(data, estimator, opts.kendall_transform)?;
    let precision = assemble_precision(&cov, forest, &opts.assembly)?;
    GaussianModel::new(fit_mu(data), precision)
}

fn check_data(data: &ObservationMatrix, p: usize) -> Result<()> {
    if data.p() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: data.p(),
        });
    }
    Ok(())
}

/// Squared Mahalanobis distance of every observation.
pub fn mahalanobis_all(
    data: &ObservationMatrix,
    mu: &DVector<f64>,
    precision: &SparsePrecision,
) -> Vec<f64> {
    (0..data.q())
        .into_par_iter()
        .map(|s| precision.mahalanobis_sq(&data.row(s), mu))
        .collect()
}

/// `(q/2) log|J| - (1/2) sum_s d_s^2 - (q p / 2) log(2 pi)`.
pub fn gaussian_log_likelihood(data: &ObservationMatrix, model: &GaussianModel) -> Result<f64> {
    check_data(data, model.p())?;
    let q = data.q() as f64;
    let p = model.p() as f64;
    let log_det = model.precision.log_det()?;
    let d2: f64 = mahalanobis_all(data, &model.mu, &model.precision).iter().sum();
    Ok(0.5 * q * log_det - 0.5 * d2 - 0.5 * q * p * LN_2PI)
}

fn log_normal_density(delta: &DVector<f64>, cov: DMatrix<f64>) -> Result<f64> {
    let n = delta.len() as f64;
    let chol = cov.cholesky().ok_or(Error::NotPositiveDefinite)?;
    let l = chol.l_dirty();
    let log_det_cov = 2.0 * (0..l.nrows()).map(|k| l[(k, k)].ln()).sum::<f64>();
    let z = chol.solve(delta);
    Ok(-0.5 * (n * LN_2PI + log_det_cov + delta.dot(&z)))
}

/// Relative error between the joint normal density at `x` and the product
/// of clique marginals over separator marginals. Marginal blocks come from
/// the dense inverse of `J`.
pub fn pdf_factorization_check(x: &DVector<f64>, model: &GaussianModel) -> Result<f64> {
    let j = model.precision.dense_embedding();
    let chol = j.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
    let sigma = chol.inverse();
    let delta = x - &model.mu;
    let l = chol.l_dirty();
    let log_det_j = 2.0 * (0..l.nrows()).map(|k| l[(k, k)].ln()).sum::<f64>();
    let log_joint = 0.5 * log_det_j - 0.5 * delta.dot(&(&j * &delta))
        - 0.5 * model.p() as f64 * LN_2PI;

    let marginal = |idx: &[usize]| -> Result<f64> {
        let d = DVector::from_fn(idx.len(), |a, _| delta[idx[a]]);
        let cov = DMatrix::from_fn(idx.len(), idx.len(), |a, b| sigma[(idx[a], idx[b])]);
        log_normal_density(&d, cov)
    };
    let forest = model.precision.forest();
    let mut log_factored = 0.0;
    for c in forest.cliques() {
        log_factored += marginal(c)?;
    }
    for s in forest.separators() {
        if !s.vertices.is_empty() {
            log_factored -= marginal(&s.vertices)?;
        }
    }
    Ok((log_factored - log_joint).exp_m1().abs())
}
