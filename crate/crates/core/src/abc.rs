//! Approximate Bayesian computation in summary-statistic space.
//!
//! Distances are Euclidean norms of standardized statistic differences.
//! The simulated-annealing sampler keeps a population of particles, each a
//! parameter vector with the distance `ρ` of its simulated statistics to the
//! observed ones. A sweep proposes a Gaussian random-walk move for every
//! particle (per-component scale `λ · sd` of the current population) and
//! accepts with probability `min(1, exp(−(ρ* − ρ)/ε))`. Between sweeps the
//! tolerance follows
//!
//! ```text
//! ε ← min(ε, (1 − v) · mean(ρ) / q)
//! ```
//!
//! where `mean(ρ)/q` is the tolerance at which the current population would
//! be in equilibrium (distances near the observation are Gamma(q, ε)
//! distributed under the kernel `exp(−ρ/ε)`), and `v` is the annealing
//! velocity.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::models::{sample_prior, BareNoise, Model, PriorSpec, Trajectory};
use crate::rng::{self, Rng};
use crate::samples::SampleSet;
use crate::suffstats;

/// Produces one simulated series for a parameter vector.
pub trait Simulator: Sync {
    /// `None` when the simulation fails (for example diverges); such
    /// proposals are rejected.
    fn simulate(&self, theta: &[f64], rng: &mut Rng) -> Option<Vec<f64>>;
}

/// Maps simulated series to summary statistics. Undefined statistics are
/// reported as NaN and make the distance infinite.
pub trait Summarizer: Sync {
    fn dim(&self) -> usize;
    fn summarize(&self, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>>;
}

/// One of the benchmark maps with fixed initial condition and length.
#[derive(Clone, Debug)]
pub struct MapSimulator {
    pub model: Model,
    pub x0: f64,
    pub n: usize,
}

impl Simulator for MapSimulator {
    fn simulate(&self, theta: &[f64], rng: &mut Rng) -> Option<Vec<f64>> {
        let noise = BareNoise::draw(self.model.id, self.n, rng);
        self.model.simulate(theta, &noise, self.x0, self.n).ok().map(|t| t.x)
    }
}

/// Learned statistics, optionally restricted to some components.
#[derive(Clone, Debug)]
pub struct EncoderSummary {
    pub encoder: Encoder,
    pub components: Option<Vec<usize>>,
}

impl EncoderSummary {
    pub fn new(encoder: Encoder) -> Self {
        Self {
            encoder,
            components: None,
        }
    }

    pub fn select(encoder: Encoder, components: Vec<usize>) -> Self {
        Self {
            encoder,
            components: Some(components),
        }
    }
}

impl Summarizer for EncoderSummary {
    fn dim(&self) -> usize {
        self.components.as_ref().map_or(self.encoder.q(), Vec::len)
    }

    fn summarize(&self, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let chunks: Vec<Result<Vec<Vec<f64>>>> = refs.par_chunks(64).map(|c| self.encoder.encode_raw(c)).collect();
        let mut out = Vec::with_capacity(xs.len());
        for c in chunks {
            for s in c? {
                out.push(match &self.components {
                    Some(idx) => idx.iter().map(|&i| s[i]).collect(),
                    None => s,
                });
            }
        }
        Ok(out)
    }
}

/// `(α̂, √σ̂², o)` of the NLAR1 model.
#[derive(Clone, Debug)]
pub struct SufficientSummary {
    pub x0: f64,
}

impl Summarizer for SufficientSummary {
    fn dim(&self) -> usize {
        3
    }

    fn summarize(&self, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        Ok(xs
            .iter()
            .map(|x| {
                let t = Trajectory::new(x.clone(), self.x0);
                match suffstats::sufficient_stats(&t) {
                    Ok(s) => vec![s.alpha_hat, s.sigma_hat(), s.order],
                    Err(_) => vec![f64::NAN; 3],
                }
            })
            .collect())
    }
}

/// Per-statistic location and scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub location: Vec<f64>,
    pub scale: Vec<f64>,
    pub count: usize,
    pub seed: u64,
}

/// Type-7 (linear interpolation) quantile of sorted data.
fn quantile_sorted(v: &[f64], p: f64) -> f64 {
    let h = (v.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

impl Standardizer {
    /// Median and `IQR / 1.349` per component; the standard deviation
    /// replaces a zero IQR. Rows containing NaN are ignored.
    pub fn fit(stats: &[Vec<f64>], seed: u64) -> Result<Self> {
        let rows: Vec<&Vec<f64>> = stats.iter().filter(|s| s.iter().all(|v| v.is_finite())).collect();
        if rows.len() < 2 {
            return Err(Error::EmptySample);
        }
        let q = rows[0].len();
        let mut location = Vec::with_capacity(q);
        let mut scale = Vec::with_capacity(q);
        for j in 0..q {
            let mut col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            col.sort_by(f64::total_cmp);
            let med = quantile_sorted(&col, 0.5);
            let iqr = quantile_sorted(&col, 0.75) - quantile_sorted(&col, 0.25);
            let mut sc = iqr / 1.349;
            if !(sc > 0.0) {
                let n = col.len() as f64;
                let m = col.iter().sum::<f64>() / n;
                sc = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            }
            if !(sc > 0.0) {
                return Err(Error::DegenerateStatistic { component: j });
            }
            location.push(med);
            scale.push(sc);
        }
        Ok(Self {
            location,
            scale,
            count: rows.len(),
            seed,
        })
    }

    pub fn dim(&self) -> usize {
        self.scale.len()
    }

    pub fn apply(&self, s: &[f64]) -> Vec<f64> {
        s.iter()
            .zip(self.location.iter().zip(&self.scale))
            .map(|(v, (l, sc))| (v - l) / sc)
            .collect()
    }
}

/// Simulate `m` prior-predictive series and fit a [`Standardizer`].
pub fn fit_standardizer(
    sim: &dyn Simulator,
    summary: &dyn Summarizer,
    prior: &PriorSpec,
    m: usize,
    seed: u64,
) -> Result<Standardizer> {
    let xs: Vec<Vec<f64>> = (0..m as u64)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, rng::domain::PILOT, i, 1);
            loop {
                let theta = sample_prior(prior, &mut r);
                if let Some(x) = sim.simulate(&theta, &mut r) {
                    return x;
                }
            }
        })
        .collect();
    Standardizer::fit(&summary.summarize(&xs)?, seed)
}

/// Standardized Euclidean distance and the per-component absolute
/// standardized differences. Non-finite statistics give `+∞`.
pub fn distance(s_sim: &[f64], s_obs: &[f64], std: &Standardizer) -> (f64, Vec<f64>) {
    let parts: Vec<f64> = s_sim
        .iter()
        .zip(s_obs)
        .zip(&std.scale)
        .map(|((a, b), sc)| ((a - b) / sc).abs())
        .collect();
    let total = parts.iter().map(|d| d * d).sum::<f64>().sqrt();
    if total.is_finite() {
        (total, parts)
    } else {
        (f64::INFINITY, parts)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbcConfig {
    pub population: usize,
    /// Total number of simulations, including the initial population.
    pub budget: usize,
    pub velocity: f64,
    /// Random-walk step in units of the population standard deviation.
    pub proposal_scale: f64,
    /// Prior-predictive runs used to fit the standardizer (not part of the budget).
    pub standardizer_runs: usize,
    pub seed: u64,
}

impl Default for AbcConfig {
    fn default() -> Self {
        Self {
            population: 1000,
            budget: 100_000,
            velocity: 0.3,
            proposal_scale: 2.0,
            standardizer_runs: 10_000,
            seed: 0,
        }
    }
}

impl AbcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 10 || self.budget < self.population {
            return Err(Error::Config("need population ≥ 10 and budget ≥ population".into()));
        }
        if !(self.velocity > 0.0 && self.velocity < 1.0) || !(self.proposal_scale > 0.0) {
            return Err(Error::Config("velocity must be in (0, 1) and proposal_scale > 0".into()));
        }
        Ok(())
    }
}

/// Final distances of every particle and the per-sweep traces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceRecord {
    /// Per particle: absolute standardized difference per statistic.
    pub components: Vec<Vec<f64>>,
    pub total: Vec<f64>,
    pub acceptance: Vec<f64>,
    pub epsilon: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct AbcResult {
    pub samples: SampleSet,
    pub record: DistanceRecord,
    pub standardizer: Standardizer,
    pub simulations: usize,
    /// Set when a full sweep accepted nothing and the run stopped early.
    pub stagnated: bool,
}

struct Particle {
    theta: Vec<f64>,
    rho: f64,
    parts: Vec<f64>,
}

/// Simulate and summarize a batch of parameter vectors, each with its own
/// generator; `None` rows failed to simulate.
fn simulate_batch(
    sim: &dyn Simulator,
    summary: &dyn Summarizer,
    thetas: &[Option<Vec<f64>>],
    rngs: &mut [Rng],
) -> Result<Vec<Option<Vec<f64>>>> {
    let xs: Vec<Option<Vec<f64>>> = thetas
        .par_iter()
        .zip(rngs.par_iter_mut())
        .map(|(t, r)| t.as_ref().and_then(|t| sim.simulate(t, r)))
        .collect();
    let ok: Vec<Vec<f64>> = xs.iter().flatten().cloned().collect();
    let mut stats = summary.summarize(&ok)?.into_iter();
    Ok(xs.iter().map(|x| x.as_ref().and_then(|_| stats.next())).collect())
}

/// Simulated-annealing ABC. Fits a standardizer from prior-predictive
/// runs unless one is given.
pub fn sabc_run(
    sim: &dyn Simulator,
    summary: &dyn Summarizer,
    prior: &PriorSpec,
    observed: &[f64],
    standardizer: Option<Standardizer>,
    cfg: &AbcConfig,
) -> Result<AbcResult> {
    cfg.validate()?;
    let std = match standardizer {
        Some(s) => s,
        None => fit_standardizer(sim, summary, prior, cfg.standardizer_runs, cfg.seed)?,
    };
    let q = summary.dim() as f64;
    let p = prior.dim();
    let np = cfg.population;

    let mut rngs: Vec<Rng> = (0..np as u64).map(|i| rng::stream(cfg.seed, rng::domain::ABC, 0, i)).collect();
    let thetas: Vec<Option<Vec<f64>>> = rngs
        .iter_mut()
        .map(|r| Some(sample_prior(prior, r)))
        .collect();
    let stats = simulate_batch(sim, summary, &thetas, &mut rngs)?;
    let mut pop: Vec<Particle> = thetas
        .into_iter()
        .zip(stats)
        .map(|(t, s)| {
            let (rho, parts) = match s {
                Some(s) => distance(&s, observed, &std),
                None => (f64::INFINITY, vec![f64::INFINITY; observed.len()]),
            };
            Particle {
                theta: t.unwrap_or_default(),
                rho,
                parts,
            }
        })
        .collect();
    let mut used = np;

    let mean_rho = |pop: &[Particle]| {
        let finite: Vec<f64> = pop.iter().map(|p| p.rho).filter(|r| r.is_finite()).collect();
        finite.iter().sum::<f64>() / finite.len().max(1) as f64
    };
    let mut eps = mean_rho(&pop) / q;
    let mut acceptance = Vec::new();
    let mut epsilon = vec![eps];
    let mut stagnated = false;
    let mut sweep = 0u64;

    while used < cfg.budget {
        sweep += 1;
        let active = np.min(cfg.budget - used);
        let sd: Vec<f64> = (0..p)
            .map(|j| {
                let m = pop.iter().map(|x| x.theta[j]).sum::<f64>() / np as f64;
                (pop.iter().map(|x| (x.theta[j] - m).powi(2)).sum::<f64>() / (np - 1) as f64).sqrt()
            })
            .collect();
        let mut rngs: Vec<Rng> = (0..active as u64)
            .map(|i| rng::stream(cfg.seed, rng::domain::ABC, sweep, i))
            .collect();
        let proposals: Vec<Option<Vec<f64>>> = pop[..active]
            .iter()
            .zip(rngs.iter_mut())
            .map(|(part, r)| {
                let t: Vec<f64> = part
                    .theta
                    .iter()
                    .zip(&sd)
                    .map(|(&v, &s)| {
                        let z: f64 = StandardNormal.sample(r);
                        v + cfg.proposal_scale * s * z
                    })
                    .collect();
                prior.contains(&t).then_some(t)
            })
            .collect();
        let simulated = proposals.iter().filter(|t| t.is_some()).count();
        let stats = simulate_batch(sim, summary, &proposals, &mut rngs)?;
        let mut accepted = 0usize;
        for (i, (t, s)) in proposals.into_iter().zip(stats).enumerate() {
            let (Some(t), Some(s)) = (t, s) else { continue };
            let (rho, parts) = distance(&s, observed, &std);
            if !rho.is_finite() {
                continue;
            }
            let u: f64 = rngs[i].random();
            let cur = pop[i].rho;
            if rho <= cur || u < (-(rho - cur) / eps).exp() {
                pop[i] = Particle { theta: t, rho, parts };
                accepted += 1;
            }
        }
        used += simulated.max(1).min(cfg.budget - used);
        acceptance.push(accepted as f64 / active as f64);
        eps = eps.min((1.0 - cfg.velocity) * mean_rho(&pop) / q);
        epsilon.push(eps);
        if accepted == 0 && active == np {
            log::warn!("sabc: no proposal accepted in sweep {sweep}; stopping early");
            stagnated = true;
            break;
        }
    }

    let record = DistanceRecord {
        components: pop.iter().map(|x| x.parts.clone()).collect(),
        total: pop.iter().map(|x| x.rho).collect(),
        acceptance,
        epsilon,
    };
    let names = prior.names.clone();
    let samples = SampleSet::new(names, pop.into_iter().map(|x| x.theta).collect(), "sabc")?;
    Ok(AbcResult {
        samples,
        record,
        standardizer: std,
        simulations: used,
        stagnated,
    })
}

/// Keep the `round(keep_fraction · n_sims)` prior draws with the smallest
/// distances.
pub fn rejection_abc(
    sim: &dyn Simulator,
    summary: &dyn Summarizer,
    prior: &PriorSpec,
    observed: &[f64],
    std: &Standardizer,
    n_sims: usize,
    keep_fraction: f64,
    seed: u64,
) -> Result<(SampleSet, DistanceRecord)> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::Config(format!("keep_fraction must be in (0, 1], got {keep_fraction}")));
    }
    let mut rngs: Vec<Rng> = (0..n_sims as u64).map(|i| rng::stream(seed, rng::domain::ABC, u64::MAX, i)).collect();
    let thetas: Vec<Option<Vec<f64>>> = rngs
        .iter_mut()
        .map(|r| Some(sample_prior(prior, r)))
        .collect();
    let stats = simulate_batch(sim, summary, &thetas, &mut rngs)?;
    let mut scored: Vec<(f64, Vec<f64>, Vec<f64>)> = thetas
        .into_iter()
        .zip(stats)
        .map(|(t, s)| {
            let (rho, parts) = match s {
                Some(s) => distance(&s, observed, std),
                None => (f64::INFINITY, vec![f64::INFINITY; observed.len()]),
            };
            (rho, parts, t.unwrap_or_default())
        })
        .collect();
    let keep = ((keep_fraction * n_sims as f64).round() as usize).max(1);
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    scored.truncate(keep);
    let record = DistanceRecord {
        components: scored.iter().map(|s| s.1.clone()).collect(),
        total: scored.iter().map(|s| s.0).collect(),
        acceptance: vec![keep as f64 / n_sims as f64],
        epsilon: vec![scored.last().map_or(0.0, |s| s.0)],
    };
    let names = prior.names.clone();
    let samples = SampleSet::new(names, scored.into_iter().map(|s| s.2).collect(), "rejection")?;
    Ok((samples, record))
}
