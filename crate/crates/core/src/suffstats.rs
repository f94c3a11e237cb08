//! Closed-form sufficient statistics of the NLAR1 model.
//!
//! All sums run over `n = 1..N` with `x_0` (the initial condition) as the
//! regressor of the first step, so `N` terms enter each sum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Nonlinearity, Trajectory};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SufficientStats {
    pub alpha_hat: f64,
    pub sigma2_hat: f64,
    pub order: f64,
}

impl SufficientStats {
    /// `√σ̂²`, comparable to σ itself.
    pub fn sigma_hat(&self) -> f64 {
        self.sigma2_hat.sqrt()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        vec![self.alpha_hat, self.sigma2_hat, self.order]
    }

    /// Values for [`EXPORT_COLUMNS`].
    pub fn export_row(&self) -> Vec<f64> {
        vec![self.alpha_hat, self.sigma2_hat, self.sigma_hat(), self.order]
    }
}

/// Column names of exported statistic tables.
pub const EXPORT_COLUMNS: [&str; 4] = ["alpha_hat", "sigma2_hat", "sigma_hat", "order"];

struct Sums {
    sxf: f64,
    sff: f64,
}

fn sums(x: &Trajectory, f: Nonlinearity) -> Sums {
    let mut s = Sums { sxf: 0.0, sff: 0.0 };
    for (prev, next) in x.transitions() {
        let fx = f.eval(prev);
        s.sxf += next * fx;
        s.sff += fx * fx;
    }
    s
}

/// `α̂ = Σ x_n f(x_{n−1}) / Σ f(x_{n−1})²`.
pub fn mle_alpha(x: &Trajectory) -> Result<f64> {
    mle_alpha_with(x, Nonlinearity::Cubic)
}

pub fn mle_alpha_with(x: &Trajectory, f: Nonlinearity) -> Result<f64> {
    let s = sums(x, f);
    if s.sff <= 0.0 || !s.sff.is_finite() {
        return Err(Error::UndefinedStatistic("alpha_hat: Σ f(x)² is zero"));
    }
    Ok(s.sxf / s.sff)
}

/// `σ̂² = (1/N) Σ (x_n − α̂ f(x_{n−1}))²`.
pub fn mle_sigma2(x: &Trajectory) -> Result<f64> {
    mle_sigma2_with(x, Nonlinearity::Cubic)
}

pub fn mle_sigma2_with(x: &Trajectory, f: Nonlinearity) -> Result<f64> {
    let a = mle_alpha_with(x, f)?;
    let ss: f64 = x
        .transitions()
        .map(|(prev, next)| {
            let r = next - a * f.eval(prev);
            r * r
        })
        .sum();
    Ok(ss / x.len() as f64)
}

/// `o = (1/N) Σ f(x_{n−1})²`.
pub fn order_param(x: &Trajectory) -> f64 {
    order_param_with(x, Nonlinearity::Cubic)
}

pub fn order_param_with(x: &Trajectory, f: Nonlinearity) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    sums(x, f).sff / x.len() as f64
}

pub fn sufficient_stats(x: &Trajectory) -> Result<SufficientStats> {
    Ok(SufficientStats {
        alpha_hat: mle_alpha(x)?,
        sigma2_hat: mle_sigma2(x)?,
        order: order_param(x),
    })
}

/// NLAR1 log-likelihood written through the statistics:
/// `−N/2 log(2πσ²) − N/(2σ²) [σ̂² + (α̂−α)² o]`.
pub fn factorized_log_likelihood(stats: &SufficientStats, n: usize, alpha: f64, sigma: f64) -> f64 {
    let n = n as f64;
    let s2 = sigma * sigma;
    let d = stats.alpha_hat - alpha;
    -0.5 * n * (2.0 * std::f64::consts::PI * s2).ln() - n / (2.0 * s2) * (stats.sigma2_hat + d * d * stats.order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{simulate_nlar1, BareNoise, ModelId};

    #[test]
    fn noiseless_regression_is_exact() {
        for &alpha in &[4.4, 5.0, 5.3, 5.7] {
            let noise = BareNoise::from_seed(ModelId::Nlar1, 200, 1);
            let t = simulate_nlar1(&[alpha, 0.0], &noise, 0.5, 200).unwrap();
            let a = mle_alpha(&t).unwrap();
            assert!(((a - alpha) / alpha).abs() <= 1e-12);
            assert!(mle_sigma2(&t).unwrap() < 1e-20);
        }
    }

    #[test]
    fn pinned_zero_is_undefined() {
        let t = Trajectory::new(vec![0.0; 10], 0.0);
        assert!(matches!(mle_alpha(&t), Err(Error::UndefinedStatistic(_))));
        assert!(mle_sigma2(&t).is_err());
        assert_eq!(order_param(&t), 0.0);
    }

    #[test]
    fn period_two_order_is_two_point_average() {
        let (a, b) = (0.3, 0.8);
        let t = Trajectory::new(vec![b, a, b, a, b, a], a);
        let f = |x: f64| x * x * (1.0 - x);
        let expect = 0.5 * (f(a).powi(2) + f(b).powi(2));
        assert!((order_param(&t) - expect).abs() < 1e-15);
    }
}
