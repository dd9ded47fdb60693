use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DVector;

use logo_core::dependence::{correlation_for, pearson_covariance, Estimator, KendallTransform};
use logo_core::forest::CliqueForest;
use logo_core::gaussian::{fit_gaussian, FitOptions};
use logo_core::harness::{
    aggregate, read_baseline, read_results, run_sweep, write_aggregate, write_results, ModelId, NuSetting,
    SweepConfig, SweepData,
};
use logo_core::mfcf::{build_mfcf, BuildConfig};
use logo_core::model::Model;
use logo_core::observation::ObservationMatrix;
use logo_core::returns::{compute_log_returns, PricePanel};
use logo_core::student::{fit_student_em, fit_student_plain, EmConfig};
use logo_core::synth::{factor_covariance, sample, Family, GeneratorSpec};
use logo_core::tail::DEFAULT_TAIL_FRACTION;
use logo_core::{Error, Result};

#[derive(Parser)]
#[command(name = "logo", version, about = "Sparse chordal Normal and Student-t covariance models")]
struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Sweep configuration (TOML or JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Normal,
    StudentT,
}

/// Optional sine transform of Kendall's tau before it is used as a
/// correlation.
#[derive(Clone, Copy, ValueEnum)]
enum TransformArg {
    None,
    Sine,
}

impl From<TransformArg> for KendallTransform {
    fn from(t: TransformArg) -> Self {
        match t {
            TransformArg::None => KendallTransform::None,
            TransformArg::Sine => KendallTransform::Sine,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Convert a price CSV into log-returns.
    Returns {
        #[arg(long)]
        prices: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw synthetic observations.
    Synth {
        #[arg(long, value_enum)]
        family: FamilyArg,
        #[arg(long)]
        nu: Option<f64>,
        #[arg(long)]
        q: usize,
        /// Number of variables for the built-in factor covariance.
        #[arg(long, conflicts_with = "params")]
        p: Option<usize>,
        #[arg(long, default_value_t = 5)]
        sectors: usize,
        /// Take mean and covariance from this observation CSV.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a clique-forest network from observations.
    BuildNet {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "pearson")]
        estimator: Estimator,
        #[arg(long)]
        max_clique: usize,
        #[arg(long, value_enum, default_value = "none")]
        kendall_transform: TransformArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a model on a network and report its training log-likelihood.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        network: PathBuf,
        #[arg(long)]
        model: ModelId,
        /// Degrees of freedom, or `tail_estimate`.
        #[arg(long, default_value = "2.2")]
        nu: NuSetting,
        #[arg(long, default_value_t = DEFAULT_TAIL_FRACTION)]
        tail_fraction: f64,
        #[arg(long, default_value_t = EmConfig::default().max_iterations)]
        em_max_iterations: usize,
        #[arg(long, default_value_t = EmConfig::default().tolerance)]
        em_tolerance: f64,
        #[arg(long, value_enum, default_value = "none")]
        kendall_transform: TransformArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Log-likelihood of a fitted model on observations.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Run a clique-size sweep described by `--config`.
    Sweep {
        /// Results CSV; overrides `output` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Fill the wall_time_ms column.
        #[arg(long)]
        timing: bool,
    },
    /// Summarize a results CSV per model and clique size.
    Aggregate {
        #[arg(long)]
        results: PathBuf,
        /// CSV of externally computed (n_edges, ll_test_per_obs) points.
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long, default_value = "baseline")]
        baseline_label: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn read_observations(path: &Path) -> Result<ObservationMatrix> {
    ObservationMatrix::read_csv(open(path)?)
}

fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    match cli.command {
        Command::Returns { prices, out } => {
            let panel = PricePanel::read_csv(open(&prices)?)?;
            compute_log_returns(&panel)?.write_csv(create(&out)?)?;
        }
        Command::Synth {
            family,
            nu,
            q,
            p,
            sectors,
            params,
            out,
        } => {
            let family = match (family, nu) {
                (FamilyArg::Normal, _) => Family::Normal,
                (FamilyArg::StudentT, Some(nu)) => Family::StudentT(nu),
                (FamilyArg::StudentT, None) => {
                    return Err(Error::Config("--family student-t needs --nu".into()))
                }
            };
            let (mu, sigma, labels) = match (params, p) {
                (Some(path), _) => {
                    let data = read_observations(&path)?;
                    (data.mean(), pearson_covariance(&data)?.matrix().clone(), Some(data.labels().to_vec()))
                }
                (None, Some(p)) => (DVector::zeros(p), factor_covariance(p, sectors, seed), None),
                (None, None) => return Err(Error::Config("synth needs --p or --params".into())),
            };
            let spec = GeneratorSpec {
                mu,
                sigma,
                family,
                seed,
                q,
            };
            let mut data = sample(&spec)?;
            if let Some(labels) = labels {
                data = ObservationMatrix::new(data.values().clone(), labels)?;
            }
            data.write_csv(create(&out)?)?;
        }
        Command::BuildNet {
            data,
            estimator,
            max_clique,
            kendall_transform,
            out,
        } => {
            let data = read_observations(&data)?;
            let corr = correlation_for(&data, estimator, kendall_transform.into())?;
            let forest = build_mfcf(&corr, &BuildConfig::new(max_clique))?;
            let mut w = create(&out)?;
            writeln!(w, "{}", forest.to_json_pretty())?;
            w.flush()?;
            println!("cliques {}", forest.cliques().len());
            println!("edges {}", forest.edge_set().len());
        }
        Command::Fit {
            data,
            network,
            model,
            nu,
            tail_fraction,
            em_max_iterations,
            em_tolerance,
            kendall_transform,
            out,
        } => {
            let data = read_observations(&data)?;
            let forest = Arc::new(CliqueForest::from_json(&std::fs::read_to_string(&network)?)?);
            let opts = FitOptions {
                kendall_transform: kendall_transform.into(),
                ..Default::default()
            };
            let nu = nu.source(tail_fraction);
            let fitted: Model = if model.uses_em() {
                let cfg = EmConfig {
                    max_iterations: em_max_iterations,
                    tolerance: em_tolerance,
                    nu,
                };
                fit_student_em(&data, forest, &cfg, model.estimator(), &opts)?.into()
            } else if model.is_student() {
                fit_student_plain(&data, forest, model.estimator(), nu, &opts)?.into()
            } else {
                fit_gaussian(&data, forest, model.estimator(), &opts)?.into()
            };
            // Report the likelihood of the stored document so `eval` agrees.
            let text = fitted.to_json();
            let stored = Model::from_json(&text)?;
            let mut w = create(&out)?;
            writeln!(w, "{text}")?;
            w.flush()?;
            report(&stored, &data)?;
            if let Model::StudentT(m) = &stored {
                println!("nu {}", m.nu);
                if let Some(em) = m.em {
                    println!("em_iterations {}", em.iterations);
                }
            }
        }
        Command::Eval { model, data } => {
            let model = Model::from_json(&std::fs::read_to_string(&model)?)?;
            report(&model, &read_observations(&data)?)?;
        }
        Command::Sweep { out, timing } => {
            let path = cli
                .config
                .ok_or_else(|| Error::Config("sweep needs --config".into()))?;
            let mut config = SweepConfig::parse(&std::fs::read_to_string(&path)?)?;
            if let Some(s) = cli.seed {
                config.plan.seed = s;
            }
            if cli.jobs.is_some() {
                config.jobs = cli.jobs;
            }
            config.timing |= timing;
            let out = out
                .or_else(|| config.output.clone())
                .ok_or_else(|| Error::Config("sweep needs --out or an output path in the config".into()))?;
            let data = SweepData::load(&config.source, path.parent())?;
            let rows = run_sweep(&config, &data)?;
            write_results(&rows, create(&out)?)?;
            let failed = rows.iter().filter(|r| !r.is_ok()).count();
            println!("rows {}", rows.len());
            println!("failed {failed}");
        }
        Command::Aggregate {
            results,
            baseline,
            baseline_label,
            out,
        } => {
            let rows = read_results(open(&results)?)?;
            if rows.is_empty() {
                return Err(Error::DegenerateInput("results file has no rows".into()));
            }
            let baseline = match baseline {
                Some(path) => read_baseline(open(&path)?)?,
                None => Vec::new(),
            };
            write_aggregate(&aggregate(&rows), &baseline, &baseline_label, create(&out)?)?;
        }
    }
    Ok(())
}

fn report(model: &Model, data: &ObservationMatrix) -> Result<()> {
    let ll = model.log_likelihood(data)?;
    println!("log_likelihood {ll}");
    if data.q() > 0 {
        println!("per_obs {}", ll / data.q() as f64);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        if n == 0 {
            eprintln!("error: --jobs must be positive");
            return ExitCode::from(2);
        }
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
