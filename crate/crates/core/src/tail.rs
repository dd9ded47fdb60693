//! Degrees-of-freedom estimation from marginal tails.
//!
//! Each column is centered at its median and both tails are fitted
//! separately. A tail fit is the conditional maximum-likelihood estimate of
//! a zero-location Student-t (free scale and degrees of freedom) given the
//! `k` largest exceedances, i.e. a power law with the t-distribution's own
//! second-order correction. The Hill estimator on the same order statistics
//! seeds the optimizer.

use statrs::function::beta::beta_reg;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::observation::ObservationMatrix;

pub const MIN_NU: f64 = 2.05;
pub const MAX_NU: f64 = 50.0;
pub const DEFAULT_TAIL_FRACTION: f64 = 0.05;

/// Search range for the tail exponent inside a single fit.
const FIT_NU_RANGE: (f64, f64) = (0.2, 1000.0);

/// Hill estimate of the tail index from a sample sorted in descending order,
/// using the top `k` values and `sorted_desc[k]` as threshold.
pub fn hill_tail_index(sorted_desc: &[f64], k: usize) -> Option<f64> {
    if k == 0 || k >= sorted_desc.len() {
        return None;
    }
    let threshold = sorted_desc[k];
    if threshold <= 0.0 {
        return None;
    }
    let mean_log: f64 = sorted_desc[..k]
        .iter()
        .map(|&x| (x / threshold).ln())
        .sum::<f64>()
        / k as f64;
    (mean_log > 0.0).then(|| 1.0 / mean_log)
}

fn student_ln_pdf(z: f64, nu: f64) -> f64 {
    ln_gamma(0.5 * (nu + 1.0))
        - ln_gamma(0.5 * nu)
        - 0.5 * (nu * std::f64::consts::PI).ln()
        - 0.5 * (nu + 1.0) * (z * z / nu).ln_1p()
}

/// `log P(T > z)` for `z > 0`.
fn student_ln_sf(z: f64, nu: f64) -> f64 {
    (0.5 * beta_reg(0.5 * nu, 0.5, nu / (nu + z * z))).ln()
}

/// Fits the tail exponent to exceedances `tail` (all above `threshold > 0`).
pub fn fit_student_tail(tail: &[f64], threshold: f64, start_nu: f64, start_scale: f64) -> f64 {
    let k = tail.len() as f64;
    let nll = |params: [f64; 2]| -> f64 {
        let nu = params[0].exp();
        if !(FIT_NU_RANGE.0..=FIT_NU_RANGE.1).contains(&nu) {
            return f64::INFINITY;
        }
        let log_scale = params[1];
        let scale = log_scale.exp();
        let ll: f64 = tail
            .iter()
            .map(|&x| student_ln_pdf(x / scale, nu) - log_scale)
            .sum::<f64>()
            - k * student_ln_sf(threshold / scale, nu);
        if ll.is_finite() {
            -ll
        } else {
            f64::INFINITY
        }
    };
    let start = [
        start_nu.clamp(FIT_NU_RANGE.0 * 2.0, FIT_NU_RANGE.1 / 2.0).ln(),
        start_scale.ln(),
    ];
    let best = nelder_mead(nll, start, [0.3, 0.3], 1e-10, 2000);
    best[0].exp()
}

/// Average tail exponent over both tails of every column, each clamped to
/// `[MIN_NU, MAX_NU]`.
pub fn estimate_nu_tail(data: &ObservationMatrix, tail_fraction: f64) -> Result<f64> {
    if !(tail_fraction > 0.0 && tail_fraction < 0.5) {
        return Err(Error::Config(format!(
            "tail fraction must lie in (0, 0.5), got {tail_fraction}"
        )));
    }
    let q = data.q();
    if (q as f64) * tail_fraction < 10.0 {
        return Err(Error::DegenerateInput(format!(
            "tail fit needs q * tail_fraction >= 10, got {q} * {tail_fraction}"
        )));
    }
    let k = (tail_fraction * q as f64).ceil() as usize;

    let mut estimates = Vec::with_capacity(2 * data.p());
    for i in 0..data.p() {
        let mut col = data.column(i);
        col.sort_by(f64::total_cmp);
        let median = if q % 2 == 1 {
            col[q / 2]
        } else {
            0.5 * (col[q / 2 - 1] + col[q / 2])
        };
        let mut abs_dev: Vec<f64> = col.iter().map(|v| (v - median).abs()).collect();
        abs_dev.sort_by(f64::total_cmp);
        let mad = abs_dev[q / 2];

        let upper: Vec<f64> = col.iter().rev().map(|v| v - median).collect();
        let lower: Vec<f64> = col.iter().map(|v| median - v).collect();
        for tail in [upper, lower] {
            let threshold = tail[k];
            if threshold <= 0.0 || mad <= 0.0 {
                return Err(Error::DegenerateInput(format!(
                    "column '{}' has no spread beyond its median in the tail",
                    data.labels()[i]
                )));
            }
            let hill = hill_tail_index(&tail, k).unwrap_or(MAX_NU);
            let nu = fit_student_tail(&tail[..k], threshold, hill, 1.4826 * mad);
            estimates.push(nu.clamp(MIN_NU, MAX_NU));
        }
    }
    let mean = estimates.iter().sum::<f64>() / estimates.len() as f64;
    Ok(mean.clamp(MIN_NU, MAX_NU))
}

/// Minimizes `f` over two parameters with the Nelder-Mead simplex method.
fn nelder_mead<F>(f: F, start: [f64; 2], step: [f64; 2], tol: f64, max_iter: usize) -> [f64; 2]
where
    F: Fn([f64; 2]) -> f64,
{
    let mut simplex = [
        start,
        [start[0] + step[0], start[1]],
        [start[0], start[1] + step[1]],
    ];
    let mut values = simplex.map(&f);

    for _ in 0..max_iter {
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.map(|i| simplex[i]);
        values = order.map(|i| values[i]);

        if (values[2] - values[0]).abs() <= tol * (1.0 + values[0].abs())
            && values[0].is_finite()
        {
            break;
        }

        let centroid = [
            0.5 * (simplex[0][0] + simplex[1][0]),
            0.5 * (simplex[0][1] + simplex[1][1]),
        ];
        let along = |t: f64| {
            [
                centroid[0] + t * (simplex[2][0] - centroid[0]),
                centroid[1] + t * (simplex[2][1] - centroid[1]),
            ]
        };

        let reflected = along(-1.0);
        let fr = f(reflected);
        if fr < values[0] {
            let expanded = along(-2.0);
            let fe = f(expanded);
            if fe < fr {
                simplex[2] = expanded;
                values[2] = fe;
            } else {
                simplex[2] = reflected;
                values[2] = fr;
            }
        } else if fr < values[1] {
            simplex[2] = reflected;
            values[2] = fr;
        } else {
            let contracted = if fr < values[2] { along(-0.5) } else { along(0.5) };
            let fc = f(contracted);
            if fc < values[2].min(fr) {
                simplex[2] = contracted;
                values[2] = fc;
            } else {
                for k in 1..3 {
                    simplex[k] = [
                        simplex[0][0] + 0.5 * (simplex[k][0] - simplex[0][0]),
                        simplex[0][1] + 0.5 * (simplex[k][1] - simplex[0][1]),
                    ];
                    values[k] = f(simplex[k]);
                }
            }
        }
    }
    let best = (0..3)
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .expect("simplex has three vertices");
    simplex[best]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn hill_on_exact_pareto_quantiles() {
        // Quantiles of a Pareto(alpha = 2) at evenly spaced levels.
        let n = 20_000;
        let mut x: Vec<f64> = (1..=n)
            .map(|i| (1.0 - (i as f64 - 0.5) / n as f64).powf(-0.5))
            .collect();
        x.sort_by(|a, b| b.total_cmp(a));
        let a = hill_tail_index(&x, 2000).unwrap();
        assert!((a - 2.0).abs() < 0.01, "{a}");
    }

    #[test]
    fn hill_rejects_bad_k() {
        assert!(hill_tail_index(&[3.0, 2.0, 1.0], 0).is_none());
        assert!(hill_tail_index(&[3.0, 2.0, 1.0], 3).is_none());
        assert!(hill_tail_index(&[3.0, -1.0, -2.0], 1).is_none());
    }

    #[test]
    fn t_density_and_survival() {
        // Cauchy: pdf(0) = 1/pi, P(T > 1) = 1/4.
        assert_relative_eq!(student_ln_pdf(0.0, 1.0), -std::f64::consts::PI.ln(), epsilon = 1e-12);
        assert_relative_eq!(student_ln_sf(1.0, 1.0), 0.25f64.ln(), epsilon = 1e-10);
    }

    #[test]
    fn nelder_mead_quadratic() {
        let best = nelder_mead(
            |x| (x[0] - 1.5).powi(2) + 3.0 * (x[1] + 0.5).powi(2),
            [0.0, 0.0],
            [0.5, 0.5],
            1e-14,
            5000,
        );
        assert!((best[0] - 1.5).abs() < 1e-5 && (best[1] + 0.5).abs() < 1e-5, "{best:?}");
    }

    #[test]
    fn too_few_observations() {
        let data = ObservationMatrix::from_columns(&[(0..100).map(f64::from).collect()]).unwrap();
        assert!(matches!(estimate_nu_tail(&data, 0.05), Err(Error::DegenerateInput(_))));
    }
}
