//! Clique-size sweeps, result tables and their aggregation.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DVector;
use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dependence::{correlation_for, covariance_for, pearson_covariance, DependenceMatrix, Estimator, KendallTransform};
use crate::error::{Error, Result};
use crate::forest::CliqueForest;
use crate::gaussian::{assemble_precision, fit_mu, gaussian_log_likelihood, FitOptions, GaussianModel};
use crate::mfcf::{build_mfcf, BuildConfig};
use crate::model::Model;
use crate::observation::ObservationMatrix;
use crate::returns::{resample, ResamplePlan};
use crate::student::{fit_student_em, student_log_likelihood, EmConfig, NuSource, StudentTModel, DEFAULT_NU};
use crate::synth::{factor_covariance, observation_rng, sample, Family, GeneratorSpec};
use crate::tail::DEFAULT_TAIL_FRACTION;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelId {
    NormalPearson,
    NormalKendall,
    StudentPearson,
    StudentPearsonEm,
    StudentKendall,
    StudentKendallEm,
}

impl ModelId {
    pub const ALL: [ModelId; 6] = [
        ModelId::NormalPearson,
        ModelId::NormalKendall,
        ModelId::StudentPearson,
        ModelId::StudentPearsonEm,
        ModelId::StudentKendall,
        ModelId::StudentKendallEm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelId::NormalPearson => "normal_pearson",
            ModelId::NormalKendall => "normal_kendall",
            ModelId::StudentPearson => "student_pearson",
            ModelId::StudentPearsonEm => "student_pearson_em",
            ModelId::StudentKendall => "student_kendall",
            ModelId::StudentKendallEm => "student_kendall_em",
        }
    }

    pub fn estimator(self) -> Estimator {
        match self {
            ModelId::NormalPearson | ModelId::StudentPearson | ModelId::StudentPearsonEm => Estimator::Pearson,
            _ => Estimator::Kendall,
        }
    }

    pub fn is_student(self) -> bool {
        !matches!(self, ModelId::NormalPearson | ModelId::NormalKendall)
    }

    pub fn uses_em(self) -> bool {
        matches!(self, ModelId::StudentPearsonEm | ModelId::StudentKendallEm)
    }
}

impl std::fmt::Display for ModelId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ModelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelId::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown model '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NuKeyword {
    TailEstimate,
}

/// Either a fixed number or the keyword `"tail_estimate"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NuSetting {
    Fixed(f64),
    Estimated(NuKeyword),
}

impl Default for NuSetting {
    fn default() -> Self {
        NuSetting::Fixed(DEFAULT_NU)
    }
}

impl NuSetting {
    pub fn source(self, tail_fraction: f64) -> NuSource {
        match self {
            NuSetting::Fixed(nu) => NuSource::Fixed(nu),
            NuSetting::Estimated(NuKeyword::TailEstimate) => NuSource::TailEstimate { tail_fraction },
        }
    }
}

impl std::str::FromStr for NuSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "tail_estimate" || s == "tail" {
            return Ok(NuSetting::Estimated(NuKeyword::TailEstimate));
        }
        s.parse::<f64>()
            .map(NuSetting::Fixed)
            .map_err(|_| Error::Config(format!("nu must be a number or 'tail_estimate', got '{s}'")))
    }
}

fn default_sectors() -> usize {
    5
}

/// Where observations come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// A returns CSV (header = labels, rows = observations).
    Returns { path: PathBuf },
    /// Fresh synthetic draws for every resample. Parameters are the sample
    /// mean and covariance of `params_from` when given, otherwise a seeded
    /// factor model with `p` variables.
    Synthetic {
        family: Family,
        #[serde(default)]
        p: Option<usize>,
        #[serde(default = "default_sectors")]
        n_sectors: usize,
        #[serde(default)]
        params_from: Option<PathBuf>,
        #[serde(default)]
        covariance_seed: u64,
    },
}

fn default_tail_fraction() -> f64 {
    DEFAULT_TAIL_FRACTION
}

fn default_em_max_iterations() -> usize {
    EmConfig::default().max_iterations
}

fn default_em_tolerance() -> f64 {
    EmConfig::default().tolerance
}

fn default_models() -> Vec<ModelId> {
    ModelId::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub clique_sizes: Vec<usize>,
    #[serde(default = "default_models")]
    pub models: Vec<ModelId>,
    #[serde(default)]
    pub nu: NuSetting,
    #[serde(default = "default_tail_fraction")]
    pub tail_fraction: f64,
    #[serde(default = "default_em_max_iterations")]
    pub em_max_iterations: usize,
    #[serde(default = "default_em_tolerance")]
    pub em_tolerance: f64,
    #[serde(default)]
    pub kendall_transform: KendallTransform,
    pub plan: ResamplePlan,
    pub source: DataSource,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub jobs: Option<usize>,
    /// Record per-cell wall time. Off by default so reruns are
    /// byte-identical.
    #[serde(default)]
    pub timing: bool,
}

impl SweepConfig {
    /// Parses TOML or JSON, chosen by the first non-blank character.
    pub fn parse(text: &str) -> Result<Self> {
        if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("sweep config: {e}")))
        } else {
            toml::from_str(text).map_err(|e| Error::Parse(format!("sweep config: {e}")))
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.clique_sizes.is_empty() {
            return Err(Error::Config("clique_sizes must not be empty".into()));
        }
        if let Some(&r) = self.clique_sizes.iter().find(|&&r| r < 2) {
            return Err(Error::Config(format!("clique sizes must be at least 2, got {r}")));
        }
        if self.models.is_empty() {
            return Err(Error::Config("models must not be empty".into()));
        }
        if let NuSetting::Fixed(nu) = self.nu {
            if !(nu > 2.0) {
                return Err(Error::Config(format!("nu must exceed 2, got {nu}")));
            }
        }
        if self.jobs == Some(0) {
            return Err(Error::Config("jobs must be positive".into()));
        }
        self.em_config().validate()
    }

    pub fn em_config(&self) -> EmConfig {
        EmConfig {
            max_iterations: self.em_max_iterations,
            tolerance: self.em_tolerance,
            nu: self.nu.source(self.tail_fraction),
        }
    }

    fn fit_options(&self) -> FitOptions {
        FitOptions {
            kendall_transform: self.kendall_transform,
            ..Default::default()
        }
    }
}

/// Observations available to a sweep.
#[derive(Debug, Clone)]
pub enum SweepData {
    Returns(ObservationMatrix),
    Synthetic {
        mu: DVector<f64>,
        sigma: nalgebra::DMatrix<f64>,
        family: Family,
    },
}

impl SweepData {
    /// Loads or builds the data described by `source`; relative paths are
    /// resolved against `base`.
    pub fn load(source: &DataSource, base: Option<&std::path::Path>) -> Result<Self> {
        let resolve = |p: &PathBuf| match base {
            Some(b) if p.is_relative() => b.join(p),
            _ => p.clone(),
        };
        match source {
            DataSource::Returns { path } => {
                let file = std::fs::File::open(resolve(path))?;
                Ok(SweepData::Returns(ObservationMatrix::read_csv(file)?))
            }
            DataSource::Synthetic {
                family,
                p,
                n_sectors,
                params_from,
                covariance_seed,
            } => {
                let (mu, sigma) = match (params_from, p) {
                    (Some(path), _) => {
                        let data = ObservationMatrix::read_csv(std::fs::File::open(resolve(path))?)?;
                        (data.mean(), pearson_covariance(&data)?.matrix().clone())
                    }
                    (None, Some(p)) => (DVector::zeros(*p), factor_covariance(*p, *n_sectors, *covariance_seed)),
                    (None, None) => {
                        return Err(Error::Config(
                            "synthetic source needs either p or params_from".into(),
                        ))
                    }
                };
                Ok(SweepData::Synthetic {
                    mu,
                    sigma,
                    family: *family,
                })
            }
        }
    }

    /// Train/test split for one resample.
    pub fn split(&self, plan: &ResamplePlan, index: usize) -> Result<(ObservationMatrix, ObservationMatrix)> {
        match self {
            SweepData::Returns(data) => resample(data, plan, index),
            SweepData::Synthetic { mu, sigma, family } => {
                let seed = observation_rng(plan.seed ^ 0x5eed_da7a, index as u64).next_u64();
                let spec = GeneratorSpec {
                    mu: mu.clone(),
                    sigma: sigma.clone(),
                    family: *family,
                    seed,
                    q: plan.q_train + plan.q_test,
                };
                resample(&sample(&spec)?, plan, index)
            }
        }
    }
}

/// One (resample, clique size, model) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub resample_id: usize,
    pub max_clique: usize,
    pub n_edges: Option<usize>,
    pub model: ModelId,
    pub estimator: Estimator,
    pub ll_train_per_obs: Option<f64>,
    pub ll_test_per_obs: Option<f64>,
    pub em_iterations: Option<usize>,
    pub wall_time_ms: Option<f64>,
    pub status: String,
}

impl SweepResult {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    fn sort_key(&self) -> (usize, usize, ModelId) {
        (self.resample_id, self.max_clique, self.model)
    }
}

fn per_obs(ll: f64, q: usize) -> Option<f64> {
    (q > 0).then(|| ll / q as f64)
}

struct Prepared {
    train: ObservationMatrix,
    test: ObservationMatrix,
    nu: Result<f64>,
    dependence: BTreeMap<Estimator, Result<(DependenceMatrix, DependenceMatrix)>>,
}

fn prepare(data: &SweepData, config: &SweepConfig, index: usize) -> Result<Prepared> {
    let (train, test) = data.split(&config.plan, index)?;
    let mut dependence = BTreeMap::new();
    for est in config.models.iter().map(|m| m.estimator()) {
        dependence.entry(est).or_insert_with(|| {
            let corr = correlation_for(&train, est, config.kendall_transform)?;
            let cov = covariance_for(&train, est, config.kendall_transform)?;
            Ok((corr, cov))
        });
    }
    let nu = if config.models.iter().any(|m| m.is_student()) {
        config.nu.source(config.tail_fraction).resolve(&train)
    } else {
        Ok(DEFAULT_NU)
    };
    Ok(Prepared {
        train,
        test,
        nu,
        dependence,
    })
}

fn fit_cell(
    model: ModelId,
    forest: Arc<CliqueForest>,
    cov: &DependenceMatrix,
    prep: &Prepared,
    config: &SweepConfig,
) -> Result<(Model, Option<usize>)> {
    let opts = config.fit_options();
    if model.uses_em() {
        let nu = *prep.nu.as_ref().map_err(|e| Error::Config(e.to_string()))?;
        let cfg = EmConfig {
            nu: NuSource::Fixed(nu),
            ..config.em_config()
        };
        let m = fit_student_em(&prep.train, forest, &cfg, model.estimator(), &opts)?;
        let iterations = m.em.map(|s| s.iterations);
        return Ok((m.into(), iterations));
    }
    let precision = assemble_precision(cov, forest, &opts.assembly)?;
    let mu = fit_mu(&prep.train);
    if model.is_student() {
        let nu = *prep.nu.as_ref().map_err(|e| Error::Config(e.to_string()))?;
        Ok((StudentTModel::new(mu, precision, nu)?.into(), None))
    } else {
        Ok((GaussianModel::new(mu, precision)?.into(), None))
    }
}

fn evaluate(model: &Model, data: &ObservationMatrix) -> Result<Option<f64>> {
    if data.q() == 0 {
        return Ok(None);
    }
    let ll = match model {
        Model::Gaussian(m) => gaussian_log_likelihood(data, m)?,
        Model::StudentT(m) => student_log_likelihood(data, m)?,
    };
    Ok(per_obs(ll, data.q()))
}

fn status_of(err: &Error) -> String {
    format!("error: {err}").replace(['\n', '\r'], " ")
}

fn run_cells(prep: &Prepared, resample_id: usize, r: usize, config: &SweepConfig) -> Vec<SweepResult> {
    let mut out = Vec::with_capacity(config.models.len());
    let mut forests: BTreeMap<Estimator, Result<Arc<CliqueForest>>> = BTreeMap::new();
    for &model in &config.models {
        let start = Instant::now();
        let est = model.estimator();
        let base = SweepResult {
            resample_id,
            max_clique: r,
            n_edges: None,
            model,
            estimator: est,
            ll_train_per_obs: None,
            ll_test_per_obs: None,
            em_iterations: None,
            wall_time_ms: None,
            status: "ok".into(),
        };
        let deps = &prep.dependence[&est];
        let forest = forests
            .entry(est)
            .or_insert_with(|| {
                let (corr, _) = deps.as_ref().map_err(|e| Error::Config(e.to_string()))?;
                Ok(Arc::new(build_mfcf(corr, &BuildConfig::new(r))?))
            })
            .as_ref()
            .map(Arc::clone)
            .map_err(|e| Error::Config(e.to_string()));
        let cell = forest.and_then(|forest| {
            let n_edges = forest.edge_set().len();
            let (_, cov) = deps.as_ref().map_err(|e| Error::Config(e.to_string()))?;
            let (fitted, em_iterations) = fit_cell(model, forest, cov, prep, config)?;
            let train = evaluate(&fitted, &prep.train)?;
            let test = evaluate(&fitted, &prep.test)?;
            Ok((n_edges, train, test, em_iterations))
        });
        let mut row = match cell {
            Ok((n_edges, train, test, em_iterations)) => SweepResult {
                n_edges: Some(n_edges),
                ll_train_per_obs: train,
                ll_test_per_obs: test,
                em_iterations,
                ..base
            },
            Err(e) => SweepResult {
                n_edges: forests
                    .get(&est)
                    .and_then(|f| f.as_ref().ok())
                    .map(|f| f.edge_set().len()),
                status: status_of(&e),
                ..base
            },
        };
        if config.timing {
            row.wall_time_ms = Some(start.elapsed().as_secs_f64() * 1e3);
        }
        out.push(row);
    }
    out
}

/// Runs every (resample, clique size, model) cell. Failures become rows
/// with an error status. Rows are sorted by resample, clique size and
/// model.
pub fn run_sweep(config: &SweepConfig, data: &SweepData) -> Result<Vec<SweepResult>> {
    config.validate()?;
    let work = || -> Vec<SweepResult> {
        let prepared: Vec<(usize, std::result::Result<Prepared, String>)> = (0..config.plan.n_resamples)
            .into_par_iter()
            .map(|i| (i, prepare(data, config, i).map_err(|e| status_of(&e))))
            .collect();
        let cells: Vec<(usize, usize)> = (0..prepared.len())
            .flat_map(|i| config.clique_sizes.iter().map(move |&r| (i, r)))
            .collect();
        let mut rows: Vec<SweepResult> = cells
            .into_par_iter()
            .flat_map_iter(|(i, r)| match &prepared[i].1 {
                Ok(prep) => run_cells(prep, i, r, config),
                Err(status) => config
                    .models
                    .iter()
                    .map(|&model| SweepResult {
                        resample_id: i,
                        max_clique: r,
                        n_edges: None,
                        model,
                        estimator: model.estimator(),
                        ll_train_per_obs: None,
                        ll_test_per_obs: None,
                        em_iterations: None,
                        wall_time_ms: None,
                        status: status.clone(),
                    })
                    .collect(),
            })
            .collect();
        rows.sort_by_key(SweepResult::sort_key);
        rows
    };
    match config.jobs {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(work))
        }
        None => Ok(work()),
    }
}

pub fn write_results<W: Write>(rows: &[SweepResult], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for row in rows {
        wtr.serialize(row)?;
    }
    if rows.is_empty() {
        wtr.write_record([
            "resample_id",
            "max_clique",
            "n_edges",
            "model",
            "estimator",
            "ll_train_per_obs",
            "ll_test_per_obs",
            "em_iterations",
            "wall_time_ms",
            "status",
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_results<R: Read>(reader: R) -> Result<Vec<SweepResult>> {
    let mut rdr = csv::Reader::from_reader(reader);
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub model: ModelId,
    pub max_clique: usize,
    pub n_edges: Option<usize>,
    pub mean_ll_test: f64,
    pub q10: f64,
    pub q90: f64,
    pub is_argmax: bool,
}

/// Empirical quantile of sorted values, linear interpolation between
/// order statistics.
pub fn quantile(sorted: &[f64], prob: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Mean and 10%/90% quantiles of the test log-likelihood per (model, R),
/// flagging the R with the highest mean for each model. Rows without a
/// test value are ignored.
pub fn aggregate(results: &[SweepResult]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<(ModelId, usize), (Option<usize>, Vec<f64>)> = BTreeMap::new();
    for r in results {
        if let (true, Some(v)) = (r.is_ok(), r.ll_test_per_obs) {
            let entry = groups.entry((r.model, r.max_clique)).or_insert((r.n_edges, Vec::new()));
            entry.1.push(v);
        }
    }
    let mut rows: Vec<AggregateRow> = groups
        .into_iter()
        .map(|((model, max_clique), (n_edges, mut values))| {
            values.sort_by(f64::total_cmp);
            AggregateRow {
                model,
                max_clique,
                n_edges,
                mean_ll_test: values.iter().sum::<f64>() / values.len() as f64,
                q10: quantile(&values, 0.1),
                q90: quantile(&values, 0.9),
                is_argmax: false,
            }
        })
        .collect();
    let mut best: BTreeMap<ModelId, usize> = BTreeMap::new();
    for (k, row) in rows.iter().enumerate() {
        let slot = best.entry(row.model).or_insert(k);
        if row.mean_ll_test > rows[*slot].mean_ll_test {
            *slot = k;
        }
    }
    for k in best.into_values() {
        rows[k].is_argmax = true;
    }
    rows
}

/// Externally computed `(n_edges, ll_test_per_obs)` points, kept as the
/// original text.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselinePoint {
    pub n_edges: String,
    pub ll_test_per_obs: String,
}

pub fn read_baseline<R: Read>(reader: R) -> Result<Vec<BaselinePoint>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Ingestion {
                row: 0,
                column: name.into(),
                message: "missing baseline column".into(),
            })
    };
    let (e, l) = (col("n_edges")?, col("ll_test_per_obs")?);
    rdr.records()
        .map(|rec| {
            let rec = rec?;
            Ok(BaselinePoint {
                n_edges: rec[e].to_string(),
                ll_test_per_obs: rec[l].to_string(),
            })
        })
        .collect()
}

pub fn write_aggregate<W: Write>(
    rows: &[AggregateRow],
    baseline: &[BaselinePoint],
    baseline_label: &str,
    writer: W,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["model", "max_clique", "n_edges", "mean_ll_test", "q10", "q90", "is_argmax"])?;
    for r in rows {
        wtr.write_record([
            r.model.as_str().to_string(),
            r.max_clique.to_string(),
            r.n_edges.map(|n| n.to_string()).unwrap_or_default(),
            r.mean_ll_test.to_string(),
            r.q10.to_string(),
            r.q90.to_string(),
            r.is_argmax.to_string(),
        ])?;
    }
    for b in baseline {
        wtr.write_record([baseline_label, "", &b.n_edges, &b.ll_test_per_obs, "", "", ""])?;
    }
    wtr.flush()?;
    Ok(())
}
