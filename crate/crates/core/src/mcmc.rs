//! Random-walk Metropolis on exact likelihoods with a flat box prior.
//!
//! Proposals move all components at once with independent Gaussian steps.
//! During burn-in the per-component scales are re-estimated every window
//! from the chain itself and a global factor is tuned towards 23.4%
//! acceptance; both are frozen afterwards.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{sample_prior, Model, PriorSpec, Trajectory};
use crate::rng;
use crate::samples::SampleSet;

pub const TARGET_ACCEPTANCE: f64 = 0.234;
const WINDOW: usize = 500;

/// Unnormalised log target restricted to the prior box; `−∞` outside the support.
pub trait LogDensity {
    fn log_density(&self, theta: &[f64]) -> f64;
}

/// Exact log-likelihood of an observed trajectory.
pub struct ModelLikelihood<'a> {
    pub model: &'a Model,
    pub observation: &'a Trajectory,
}

impl LogDensity for ModelLikelihood<'_> {
    fn log_density(&self, theta: &[f64]) -> f64 {
        self.model
            .log_likelihood(self.observation, theta)
            .unwrap_or(f64::NEG_INFINITY)
    }
}

/// Metropolis decision for log acceptance ratio `log_ratio` and a uniform `u`.
#[inline]
pub fn metropolis_accept(log_ratio: f64, u: f64) -> bool {
    if log_ratio.is_nan() {
        return false;
    }
    log_ratio >= 0.0 || u.ln() < log_ratio
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    /// Total iterations including burn-in.
    pub length: usize,
    pub burn_in_fraction: f64,
    pub thin: usize,
    /// Initial proposal standard deviations; defaults to 5% of the prior range.
    pub proposal_scales: Option<Vec<f64>>,
    /// Starting point; defaults to the first of up to 10⁴ prior draws with
    /// finite density.
    pub init: Option<Vec<f64>>,
    pub seed: u64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            length: 200_000,
            burn_in_fraction: 0.25,
            thin: 10,
            proposal_scales: None,
            init: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct McmcResult {
    pub samples: SampleSet,
    /// Acceptance rate after burn-in.
    pub acceptance_rate: f64,
    /// Frozen proposal standard deviations.
    pub scales: Vec<f64>,
    pub mixing_warning: bool,
}

fn start_point(target: &dyn LogDensity, prior: &PriorSpec, cfg: &McmcConfig) -> Result<(Vec<f64>, f64)> {
    if let Some(init) = &cfg.init {
        if !prior.contains(init) {
            return Err(Error::InvalidParameter(format!("initial point {init:?} outside the prior")));
        }
        let lp = target.log_density(init);
        if lp == f64::NEG_INFINITY {
            return Err(Error::InvalidParameter("initial point has zero likelihood".into()));
        }
        return Ok((init.clone(), lp));
    }
    let mut r = rng::stream(cfg.seed, rng::domain::MCMC, 1, 0);
    for _ in 0..10_000 {
        let t = sample_prior(prior, &mut r);
        let lp = target.log_density(&t);
        if lp.is_finite() {
            return Ok((t, lp));
        }
    }
    Err(Error::InvalidParameter("no prior draw with positive likelihood; give an initial point".into()))
}

/// Metropolis sampler for any [`LogDensity`] on the box `prior`.
pub fn metropolis(target: &dyn LogDensity, prior: &PriorSpec, cfg: &McmcConfig) -> Result<McmcResult> {
    let p = prior.dim();
    let burn = (cfg.length as f64 * cfg.burn_in_fraction).floor() as usize;
    if cfg.length <= burn || cfg.thin == 0 {
        return Err(Error::Config("chain length must exceed burn-in and thin must be ≥ 1".into()));
    }
    let mut scales = match &cfg.proposal_scales {
        Some(s) if s.len() == p && s.iter().all(|v| *v > 0.0) => s.clone(),
        Some(s) => return Err(Error::Config(format!("invalid proposal scales {s:?}"))),
        None => prior.ranges().iter().map(|r| (0.05 * r).max(f64::MIN_POSITIVE)).collect(),
    };
    let (mut theta, mut lp) = start_point(target, prior, cfg)?;
    let mut r = rng::stream(cfg.seed, rng::domain::MCMC, 0, 0);
    let mut log_factor = 0.0f64;
    let mut window: Vec<Vec<f64>> = Vec::with_capacity(WINDOW);
    let mut window_acc = 0usize;
    let mut accepted_after = 0usize;
    let mut draws = Vec::with_capacity((cfg.length - burn) / cfg.thin + 1);
    let mut prop = vec![0.0; p];

    for it in 0..cfg.length {
        let f = log_factor.exp();
        for j in 0..p {
            let z: f64 = StandardNormal.sample(&mut r);
            prop[j] = theta[j] + f * scales[j] * z;
        }
        let u: f64 = r.random();
        let accepted = if prior.contains(&prop) {
            let lp_new = target.log_density(&prop);
            if lp_new > f64::NEG_INFINITY && metropolis_accept(lp_new - lp, u) {
                theta.copy_from_slice(&prop);
                lp = lp_new;
                true
            } else {
                false
            }
        } else {
            false
        };

        if it < burn {
            window_acc += accepted as usize;
            window.push(theta.clone());
            if window.len() == WINDOW {
                let rate = window_acc as f64 / WINDOW as f64;
                log_factor += rate - TARGET_ACCEPTANCE;
                for j in 0..p {
                    let m = window.iter().map(|t| t[j]).sum::<f64>() / WINDOW as f64;
                    let sd = (window.iter().map(|t| (t[j] - m).powi(2)).sum::<f64>() / (WINDOW - 1) as f64).sqrt();
                    if sd > 0.0 {
                        scales[j] = 2.38 / (p as f64).sqrt() * sd;
                    }
                }
                window.clear();
                window_acc = 0;
            }
        } else {
            accepted_after += accepted as usize;
            if (it - burn) % cfg.thin == 0 {
                draws.push(theta.clone());
            }
        }
    }

    let f = log_factor.exp();
    let acceptance_rate = accepted_after as f64 / (cfg.length - burn) as f64;
    let mixing_warning = acceptance_rate < 1e-3;
    if mixing_warning {
        log::warn!("metropolis: acceptance rate {acceptance_rate:.2e} after burn-in; chain is not mixing");
    }
    Ok(McmcResult {
        samples: SampleSet::new(prior.names.clone(), draws, "metropolis")?,
        acceptance_rate,
        scales: scales.iter().map(|s| s * f).collect(),
        mixing_warning,
    })
}

/// Metropolis ground truth for one of the benchmark models.
pub fn metropolis_run(model: &Model, prior: &PriorSpec, observation: &Trajectory, cfg: &McmcConfig) -> Result<McmcResult> {
    if prior.dim() != model.id.n_params() {
        return Err(Error::ModelMismatch(format!(
            "{} prior components for {}",
            prior.dim(),
            model.id
        )));
    }
    metropolis(&ModelLikelihood { model, observation }, prior, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accept_rule() {
        assert!(metropolis_accept(0.0, 0.999));
        assert!(metropolis_accept(-1.0, 0.3));
        assert!(!metropolis_accept(-1.0, 0.4));
        assert!(!metropolis_accept(f64::NEG_INFINITY, 1e-300));
        assert!(!metropolis_accept(f64::NAN, 0.1));
    }
}
