//! Sparse multivariate Student-t models fitted by expectation-maximization.
//!
//! The density is parameterized by the inverse covariance `J` (not the shape
//! matrix), so `nu > 2` is required. Each EM iteration computes latent
//! weights from the current Mahalanobis distances, takes the weighted mean,
//! forms weighted second moments only on the clique and separator blocks,
//! and reassembles `J` from local inversions. The moments carry the factor
//! `nu / (nu - 2)`.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::dependence::{covariance_for, Estimator};
use crate::error::{Error, Result};
use crate::forest::CliqueForest;
use crate::gaussian::{assemble_from_blocks, assemble_precision, fit_mu, mahalanobis_all, FitOptions, SparsePrecision};
use crate::observation::ObservationMatrix;
use crate::tail::{estimate_nu_tail, DEFAULT_TAIL_FRACTION};

/// Degrees of freedom used when nothing else is configured.
pub const DEFAULT_NU: f64 = 2.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NuSource {
    Fixed(f64),
    TailEstimate { tail_fraction: f64 },
}

impl Default for NuSource {
    fn default() -> Self {
        NuSource::Fixed(DEFAULT_NU)
    }
}

impl NuSource {
    pub fn tail_estimate() -> Self {
        NuSource::TailEstimate {
            tail_fraction: DEFAULT_TAIL_FRACTION,
        }
    }

    pub fn resolve(&self, data: &ObservationMatrix) -> Result<f64> {
        let nu = match *self {
            NuSource::Fixed(nu) => nu,
            NuSource::TailEstimate { tail_fraction } => estimate_nu_tail(data, tail_fraction)?,
        };
        check_nu(nu)?;
        Ok(nu)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub max_iterations: usize,
    /// Stop once `max |delta| / (1 + |old|)` over `mu` and `J` falls below this.
    pub tolerance: f64,
    pub nu: NuSource,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            tolerance: 1e-6,
            nu: NuSource::default(),
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::Config(format!(
                "EM tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("EM needs at least one iteration".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmSummary {
    pub iterations: usize,
    pub final_loglik: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudentTModel {
    pub mu: DVector<f64>,
    pub precision: SparsePrecision,
    pub nu: f64,
    pub em: Option<EmSummary>,
}

impl StudentTModel {
    pub fn new(mu: DVector<f64>, precision: SparsePrecision, nu: f64) -> Result<Self> {
        check_nu(nu)?;
        if mu.len() != precision.p() {
            return Err(Error::DimensionMismatch {
                expected: precision.p(),
                got: mu.len(),
            });
        }
        Ok(Self {
            mu,
            precision,
            nu,
            em: None,
        })
    }

    pub fn p(&self) -> usize {
        self.mu.len()
    }

    pub fn forest(&self) -> &Arc<CliqueForest> {
        self.precision.forest()
    }
}

/// One EM iterate together with the weights and likelihood it implies.
#[derive(Debug, Clone, PartialEq)]
pub struct EmState {
    pub iteration: usize,
    pub mu: DVector<f64>,
    pub precision: SparsePrecision,
    pub weights: Vec<f64>,
    pub log_likelihood: f64,
    /// Relative parameter change from the previous iterate (infinite at the
    /// start).
    pub change: f64,
}

fn check_nu(nu: f64) -> Result<()> {
    if nu > 2.0 && nu.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "degrees of freedom must exceed 2, got {nu}"
        )))
    }
}

/// Per-observation normalizing constant
/// `log Gamma((nu+p)/2) - log Gamma(nu/2) - (p/2) log((nu-2) pi)`.
fn log_normalizer(nu: f64, p: usize) -> f64 {
    let p = p as f64;
    ln_gamma(0.5 * (nu + p)) - ln_gamma(0.5 * nu) - 0.5 * p * ((nu - 2.0) * std::f64::consts::PI).ln()
}

fn log_likelihood_from_distances(d2: &[f64], log_det: f64, nu: f64, p: usize) -> f64 {
    let q = d2.len() as f64;
    let tail: f64 = d2.iter().map(|&d| (d / (nu - 2.0)).ln_1p()).sum();
    q * log_normalizer(nu, p) + 0.5 * q * log_det - 0.5 * (nu + p as f64) * tail
}

fn weights_from_distances(d2: &[f64], nu: f64, p: usize) -> Vec<f64> {
    let k = nu / (nu - 2.0);
    d2.iter().map(|&d| (nu + p as f64) / (nu + k * d)).collect()
}

/// Student-t log-likelihood of `data` in the inverse-covariance
/// parameterization.
pub fn student_log_likelihood(data: &ObservationMatrix, model: &StudentTModel) -> Result<f64> {
    check_nu(model.nu)?;
    if data.p() != model.p() {
        return Err(Error::DimensionMismatch {
            expected: model.p(),
            got: data.p(),
        });
    }
    let d2 = mahalanobis_all(data, &model.mu, &model.precision);
    let log_det = model.precision.log_det()?;
    Ok(log_likelihood_from_distances(&d2, log_det, model.nu, model.p()))
}

/// `w_s = (nu + p) / (nu + nu/(nu-2) d_s^2)`.
pub fn em_weights(
    data: &ObservationMatrix,
    mu: &DVector<f64>,
    precision: &SparsePrecision,
    nu: f64,
) -> Result<Vec<f64>> {
    check_nu(nu)?;
    let d2 = mahalanobis_all(data, mu, precision);
    Ok(weights_from_distances(&d2, nu, precision.p()))
}

impl EmState {
    /// State at iteration 0: weights and likelihood implied by `(mu, J)`.
    pub fn initial(
        data: &ObservationMatrix,
        mu: DVector<f64>,
        precision: SparsePrecision,
        nu: f64,
    ) -> Result<Self> {
        check_nu(nu)?;
        let d2 = mahalanobis_all(data, &mu, &precision);
        let log_det = precision.log_det()?;
        Ok(Self {
            iteration: 0,
            weights: weights_from_distances(&d2, nu, precision.p()),
            log_likelihood: log_likelihood_from_distances(&d2, log_det, nu, precision.p()),
            mu,
            precision,
            change: f64::INFINITY,
        })
    }
}

/// Weighted mean `sum_s w_s x_s / sum_s w_s`.
fn weighted_mean(data: &ObservationMatrix, weights: &[f64]) -> DVector<f64> {
    let total: f64 = weights.iter().sum();
    let x = data.values();
    DVector::from_fn(data.p(), |i, _| {
        x.column(i)
            .iter()
            .zip(weights)
            .map(|(v, w)| w * v)
            .sum::<f64>()
            / total
    })
}

/// `nu/(nu-2) * (1/q) * sum_s w_s (x_is - mu_i)(x_js - mu_j)` for every pair
/// on the forest support (edges and diagonal).
fn weighted_local_moments(
    data: &ObservationMatrix,
    weights: &[f64],
    mu: &DVector<f64>,
    forest: &CliqueForest,
    nu: f64,
) -> HashMap<(usize, usize), f64> {
    let q = data.q();
    let p = data.p();
    let factor = nu / (nu - 2.0) / q as f64;
    let x = data.values();
    let centered: Vec<Vec<f64>> = (0..p)
        .map(|i| x.column(i).iter().map(|v| v - mu[i]).collect())
        .collect();
    let weighted: Vec<Vec<f64>> = centered
        .iter()
        .map(|c| c.iter().zip(weights).map(|(v, w)| v * w).collect())
        .collect();
    let support: Vec<(usize, usize)> = (0..p)
        .map(|i| (i, i))
        .chain(forest.edge_set().iter().copied())
        .collect();
    support
        .par_iter()
        .map(|&(i, j)| {
            let m: f64 = weighted[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum();
            ((i, j), factor * m)
        })
        .collect()
}

/// One EM iteration from `state`.
pub fn em_step(
    data: &ObservationMatrix,
    state: &EmState,
    nu: f64,
    opts: &FitOptions,
) -> Result<EmState> {
    check_nu(nu)?;
    let forest = state.precision.forest().clone();
    let mu = weighted_mean(data, &state.weights);
    let moments = weighted_local_moments(data, &state.weights, &mu, &forest, nu);
    let block = |idx: &[usize]| {
        DMatrix::from_fn(idx.len(), idx.len(), |a, b| {
            let (i, j) = (idx[a].min(idx[b]), idx[a].max(idx[b]));
            moments[&(i, j)]
        })
    };
    let precision = assemble_from_blocks(forest, block, &opts.assembly)?;

    let d2 = mahalanobis_all(data, &mu, &precision);
    let log_det = precision.log_det()?;
    let mu_change = mu
        .iter()
        .zip(state.mu.iter())
        .map(|(a, b)| (a - b).abs() / (1.0 + b.abs()))
        .fold(0.0, f64::max);
    let change = mu_change.max(precision.max_relative_change(&state.precision));
    Ok(EmState {
        iteration: state.iteration + 1,
        weights: weights_from_distances(&d2, nu, precision.p()),
        log_likelihood: log_likelihood_from_distances(&d2, log_det, nu, precision.p()),
        mu,
        precision,
        change,
    })
}

/// Student-t model with Gaussian-style parameters: sample mean and the
/// constrained-ML precision of the estimator's covariance, no EM.
pub fn fit_student_plain(
    data: &ObservationMatrix,
    forest: Arc<CliqueForest>,
    estimator: Estimator,
    nu: NuSource,
    opts: &FitOptions,
) -> Result<StudentTModel> {
    let nu = nu.resolve(data)?;
    let cov = covariance_for(data, estimator, opts.kendall_transform)?;
    let precision = assemble_precision(&cov, forest, &opts.assembly)?;
    StudentTModel::new(fit_mu(data), precision, nu)
}

/// Runs EM from the estimator's Gaussian solution until the relative
/// parameter change drops below the tolerance.
pub fn fit_student_em(
    data: &ObservationMatrix,
    forest: Arc<CliqueForest>,
    cfg: &EmConfig,
    estimator: Estimator,
    opts: &FitOptions,
) -> Result<StudentTModel> {
    cfg.validate()?;
    let init = fit_student_plain(data, forest, estimator, cfg.nu, opts)?;
    let nu = init.nu;
    let mut state = EmState::initial(data, init.mu, init.precision, nu)?;
    while state.iteration < cfg.max_iterations {
        state = em_step(data, &state, nu, opts)?;
        if state.change < cfg.tolerance {
            let summary = EmSummary {
                iterations: state.iteration,
                final_loglik: state.log_likelihood,
            };
            let mut model = StudentTModel::new(state.mu, state.precision, nu)?;
            model.em = Some(summary);
            return Ok(model);
        }
    }
    Err(Error::Convergence {
        iterations: state.iteration,
        last_change: state.change,
        state: Box::new(state),
    })
}
