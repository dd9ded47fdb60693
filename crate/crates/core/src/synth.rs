//! Seeded multivariate Normal and Student-t samplers.
//!
//! Observation `s` draws from its own ChaCha20 stream (`seed`, stream `s`),
//! so rows can be generated in parallel and still match a sequential run.
//! Standard normals use Box-Muller; gamma variates use Marsaglia-Tsang.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::observation::ObservationMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Normal,
    StudentT(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub family: Family,
    pub seed: u64,
    pub q: usize,
}

impl GeneratorSpec {
    pub fn p(&self) -> usize {
        self.mu.len()
    }

    fn cholesky(&self) -> Result<DMatrix<f64>> {
        let p = self.p();
        if self.sigma.nrows() != p || self.sigma.ncols() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: self.sigma.nrows(),
            });
        }
        let asym = (&self.sigma - self.sigma.transpose()).amax();
        if asym > 1e-12 * self.sigma.amax().max(1.0) {
            return Err(Error::NotPositiveDefinite);
        }
        self.sigma
            .clone()
            .cholesky()
            .map(|c| c.l())
            .ok_or(Error::NotPositiveDefinite)
    }
}

/// Random generator for observation `index` under `seed`.
pub fn observation_rng(seed: u64, index: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1 = 1.0 - rng.random::<f64>();
    let u2 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Gamma variate with the given shape and unit scale.
pub fn standard_gamma<R: Rng>(rng: &mut R, shape: f64) -> f64 {
    if shape < 1.0 {
        let u = 1.0 - rng.random::<f64>();
        return standard_gamma(rng, shape + 1.0) * u.powf(1.0 / shape);
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x = standard_normal(rng);
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u = 1.0 - rng.random::<f64>();
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 || u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}

fn default_labels(p: usize) -> Vec<String> {
    (0..p).map(|i| format!("x{i}")).collect()
}

fn generate<F>(spec: &GeneratorSpec, row: F) -> Result<ObservationMatrix>
where
    F: Fn(&mut ChaCha20Rng, &DMatrix<f64>) -> DVector<f64> + Sync,
{
    let l = spec.cholesky()?;
    let p = spec.p();
    let rows: Vec<DVector<f64>> = (0..spec.q)
        .into_par_iter()
        .map(|s| {
            let mut rng = observation_rng(spec.seed, s as u64);
            row(&mut rng, &l)
        })
        .collect();
    let values = DMatrix::from_fn(spec.q, p, |s, i| rows[s][i]);
    ObservationMatrix::new(values, default_labels(p))
}

/// `x = mu + L z` with `z` i.i.d. standard normal.
pub fn sample_gaussian(spec: &GeneratorSpec) -> Result<ObservationMatrix> {
    if spec.family != Family::Normal {
        return Err(Error::Config("sample_gaussian needs the normal family".into()));
    }
    generate(spec, |rng, l| {
        let z = DVector::from_fn(spec.p(), |_, _| standard_normal(rng));
        &spec.mu + l * z
    })
}

/// `x = mu + L g sqrt((nu-2)/(nu z))` with `z ~ Gamma(nu/2, rate nu/2)`, so
/// that the covariance of `x` is `sigma`.
pub fn sample_student(spec: &GeneratorSpec) -> Result<ObservationMatrix> {
    let Family::StudentT(nu) = spec.family else {
        return Err(Error::Config("sample_student needs the student_t family".into()));
    };
    if !(nu > 2.0) {
        return Err(Error::Domain(format!(
            "degrees of freedom must exceed 2, got {nu}"
        )));
    }
    generate(spec, |rng, l| {
        let g = DVector::from_fn(spec.p(), |_, _| standard_normal(rng));
        let z = standard_gamma(rng, 0.5 * nu) / (0.5 * nu);
        let scale = ((nu - 2.0) / (nu * z)).sqrt();
        &spec.mu + l * g * scale
    })
}

pub fn sample(spec: &GeneratorSpec) -> Result<ObservationMatrix> {
    match spec.family {
        Family::Normal => sample_gaussian(spec),
        Family::StudentT(_) => sample_student(spec),
    }
}

/// Covariance of a market-plus-sectors factor model with heterogeneous
/// loadings and volatilities, drawn from `seed`.
pub fn factor_covariance(p: usize, n_sectors: usize, seed: u64) -> DMatrix<f64> {
    let n_sectors = n_sectors.max(1);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut loadings = DMatrix::<f64>::zeros(p, 1 + n_sectors);
    let mut idio = DVector::<f64>::zeros(p);
    let mut vol = DVector::<f64>::zeros(p);
    for i in 0..p {
        loadings[(i, 0)] = rng.random_range(0.3..0.8);
        loadings[(i, 1 + i % n_sectors)] = rng.random_range(0.2..0.7);
        idio[i] = rng.random_range(0.3..0.8);
        vol[i] = rng.random_range(0.01..0.03);
    }
    let mut corr = &loadings * loadings.transpose();
    for i in 0..p {
        corr[(i, i)] += idio[i];
    }
    DMatrix::from_fn(p, p, |i, j| {
        let norm = (corr[(i, i)] * corr[(j, j)]).sqrt();
        vol[i] * vol[j] * corr[(i, j)] / norm
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(p: usize, family: Family, q: usize) -> GeneratorSpec {
        GeneratorSpec {
            mu: DVector::zeros(p),
            sigma: DMatrix::identity(p, p),
            family,
            seed: 7,
            q,
        }
    }

    fn moments(x: &[f64]) -> (f64, f64, f64) {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        let m2 = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
        let m4 = x.iter().map(|v| (v - m).powi(4)).sum::<f64>() / n;
        (m, m2, m4 / (m2 * m2) - 3.0)
    }

    #[test]
    fn deterministic() {
        let s = spec(3, Family::StudentT(4.0), 50);
        assert_eq!(sample(&s).unwrap(), sample(&s).unwrap());
        let mut other = s.clone();
        other.seed = 8;
        assert_ne!(sample(&s).unwrap(), sample(&other).unwrap());
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut s = spec(2, Family::Normal, 5);
        s.sigma[(0, 1)] = 2.0;
        s.sigma[(1, 0)] = 2.0;
        assert!(matches!(sample_gaussian(&s), Err(Error::NotPositiveDefinite)));
        let s = spec(2, Family::StudentT(2.0), 5);
        assert!(matches!(sample_student(&s), Err(Error::Domain(_))));
    }

    #[test]
    fn scalar_normal_variance() {
        let mut s = spec(1, Family::Normal, 100_000);
        s.sigma[(0, 0)] = 4.0;
        let (_, var, _) = moments(&sample(&s).unwrap().column(0));
        assert!((var / 4.0 - 1.0).abs() < 0.05, "{var}");
    }

    #[test]
    fn gamma_mean_and_variance() {
        for shape in [0.4, 1.1, 5.0] {
            let mut rng = observation_rng(3, 0);
            let x: Vec<f64> = (0..200_000).map(|_| standard_gamma(&mut rng, shape)).collect();
            let (m, v, _) = moments(&x);
            assert!((m / shape - 1.0).abs() < 0.02, "shape {shape}: mean {m}");
            assert!((v / shape - 1.0).abs() < 0.05, "shape {shape}: var {v}");
        }
    }

    #[test]
    fn factor_covariance_is_pd() {
        let s = factor_covariance(40, 5, 1);
        assert!(s.clone().cholesky().is_some());
        assert_eq!(s, s.transpose());
    }
}
