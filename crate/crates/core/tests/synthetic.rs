use std::sync::Arc;

use logo_core::dependence::{pearson_covariance, Estimator};
use logo_core::forest::CliqueForest;
use logo_core::observation::ObservationMatrix;
use logo_core::student::{fit_student_em, EmConfig, NuSource};
use logo_core::synth::{sample, Family, GeneratorSpec};
use logo_core::tail::estimate_nu_tail;
use nalgebra::{DMatrix, DVector};
use statrs::function::beta::beta_reg;
use statrs::function::erf::erfc;

fn spec(p: usize, family: Family, q: usize, seed: u64) -> GeneratorSpec {
    GeneratorSpec {
        mu: DVector::zeros(p),
        sigma: DMatrix::identity(p, p),
        family,
        seed,
        q,
    }
}

fn max_cov_error(data: &ObservationMatrix) -> f64 {
    let p = data.p();
    (pearson_covariance(data).unwrap().matrix() - DMatrix::<f64>::identity(p, p)).amax()
}

fn ks_normal_p_value(x: Vec<f64>) -> f64 {
    ks_p_value(x, |v| 0.5 * erfc(-v / std::f64::consts::SQRT_2))
}

#[test]
fn gaussian_moments() {
    let data = sample(&spec(3, Family::Normal, 100_000, 1)).unwrap();
    assert!(data.mean().amax() < 0.02);
    assert!(max_cov_error(&data) < 0.05);
}

#[test]
fn gaussian_location_and_scale() {
    let mut s = spec(2, Family::Normal, 50_000, 2);
    s.mu = DVector::from_vec(vec![3.0, -1.0]);
    s.sigma = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0]);
    let data = sample(&s).unwrap();
    assert!((data.mean() - &s.mu).amax() < 0.03);
    assert!((pearson_covariance(&data).unwrap().matrix() - &s.sigma).amax() < 0.06);
}

/// One-sample Kolmogorov-Smirnov p-value against a continuous CDF, using
/// the asymptotic Kolmogorov distribution.
fn ks_p_value(mut x: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    let d = x
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = cdf(v);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max);
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let p: f64 = (1..=100)
        .map(|k| {
            let k = k as f64;
            2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp()
        })
        .sum();
    p.clamp(0.0, 1.0)
}

// At nu = 2.2 the sample covariance has infinite variance.
#[test]
fn heavy_student_marginal_law() {
    let nu = 2.2;
    let data = sample(&spec(2, Family::StudentT(nu), 100_000, 3)).unwrap();
    let scale = ((nu - 2.0) / nu).sqrt();
    let t_cdf = |x: f64| {
        let t = x / scale;
        let tail = 0.5 * beta_reg(0.5 * nu, 0.5, nu / (nu + t * t));
        if t > 0.0 {
            1.0 - tail
        } else {
            tail
        }
    };
    for i in 0..2 {
        assert!(ks_p_value(data.column(i), t_cdf) > 0.01);
    }
}

#[test]
fn heavy_student_covariance() {
    let nu = 2.2;
    let mut s = spec(2, Family::StudentT(nu), 100_000, 3);
    s.sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 2.0]);
    let data = sample(&s).unwrap();
    let cfg = EmConfig {
        nu: NuSource::Fixed(nu),
        ..Default::default()
    };
    let model = fit_student_em(&data, Arc::new(CliqueForest::complete(2)), &cfg, Estimator::Pearson, &Default::default()).unwrap();
    let cov = model.precision.dense_embedding().try_inverse().unwrap();
    let err = (cov - &s.sigma).component_div(&s.sigma).amax();
    assert!(err < 0.15, "{err}");
}

#[test]
fn student_with_huge_nu_looks_normal() {
    let t = sample(&spec(2, Family::StudentT(1e6), 20_000, 4)).unwrap();
    let g = sample(&spec(2, Family::Normal, 20_000, 4)).unwrap();
    for i in 0..2 {
        assert!(ks_normal_p_value(t.column(i)) > 0.01);
        assert!(ks_normal_p_value(g.column(i)) > 0.01);
    }
}

#[test]
fn student_excess_kurtosis() {
    let x = sample(&spec(1, Family::StudentT(10.0), 1_000_000, 5)).unwrap().column(0);
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let m2 = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    let m4 = x.iter().map(|v| (v - m).powi(4)).sum::<f64>() / n;
    let excess = m4 / (m2 * m2) - 3.0;
    assert!((excess - 1.0).abs() < 0.3, "{excess}");
}

#[test]
fn tail_estimate_recovers_nu() {
    for (k, nu) in [2.5, 3.0, 4.0, 5.0].into_iter().enumerate() {
        let data = sample(&spec(1, Family::StudentT(nu), 100_000, 10 + k as u64)).unwrap();
        let est = estimate_nu_tail(&data, 0.05).unwrap();
        assert!((est - nu).abs() <= 0.5, "nu {nu}: {est}");
    }
}

#[test]
fn tail_estimate_of_normal_is_large() {
    let data = sample(&spec(2, Family::Normal, 100_000, 20)).unwrap();
    let est = estimate_nu_tail(&data, 0.05).unwrap();
    assert!(est > 10.0, "{est}");
}

#[test]
fn tail_estimate_is_within_bounds_and_scale_free() {
    let data = sample(&spec(3, Family::StudentT(3.0), 20_000, 21)).unwrap();
    let a = estimate_nu_tail(&data, 0.05).unwrap();
    let scaled = ObservationMatrix::from_matrix(data.values() * 250.0 + DMatrix::from_element(data.q(), 3, 7.0)).unwrap();
    let b = estimate_nu_tail(&scaled, 0.05).unwrap();
    assert!((2.05..=50.0).contains(&a));
    assert!((a - b).abs() < 1e-3, "{a} vs {b}");
}

#[test]
fn parallel_generation_is_order_free() {
    let s = spec(4, Family::StudentT(3.0), 1000, 22);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let serial = pool.install(|| sample(&s).unwrap());
    assert_eq!(serial, sample(&s).unwrap());
    let mut longer = s.clone();
    longer.q = 1500;
    let prefix: Vec<usize> = (0..1000).collect();
    assert_eq!(sample(&longer).unwrap().select_rows(&prefix), serial);
}
