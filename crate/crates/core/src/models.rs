//! The two benchmark stochastic iterative maps.
//!
//! Both are written as deterministic functions of the parameters and a
//! parameter-independent bare-noise record, `x = M(θ, ε)`:
//!
//! * NLAR1: `x_{n+1} = α f(x_n) + σ ε_n` with `f(x) = x²(1−x)` and
//!   standard-normal `ε_n`.
//! * DYNAMO: `x_{n+1} = (α + δ u_n) f₂(x_n) + ε v_n` with standard-uniform
//!   `u_n, v_n`, i.e. `α_n ~ U[α, α+δ]` and `ε_n ~ U[0, ε]`.
//!
//! Trajectories hold `x_1..x_N`; the initial condition `x_0` is metadata.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Open01, StandardNormal, StandardUniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Iterates with `|x| > DIVERGENCE_BOUND` abort the simulation.
pub const DIVERGENCE_BOUND: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelId {
    Nlar1,
    Dynamo,
}

impl ModelId {
    pub fn n_params(self) -> usize {
        match self {
            ModelId::Nlar1 => 2,
            ModelId::Dynamo => 3,
        }
    }

    pub fn noise_channels(self) -> usize {
        match self {
            ModelId::Nlar1 => 1,
            ModelId::Dynamo => 2,
        }
    }

    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            ModelId::Nlar1 => &["alpha", "sigma"],
            ModelId::Dynamo => &["alpha", "delta", "epsilon"],
        }
    }

    /// Parameter values used for the synthetic observations.
    pub fn true_theta(self) -> Vec<f64> {
        match self {
            ModelId::Nlar1 => vec![5.3, 0.015],
            ModelId::Dynamo => vec![1.11, 0.15, 0.08],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelId::Nlar1 => "nlar1",
            ModelId::Dynamo => "dynamo",
        }
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nlar1" => Ok(ModelId::Nlar1),
            "dynamo" => Ok(ModelId::Dynamo),
            other => Err(Error::Config(format!("unknown model `{other}`"))),
        }
    }
}

/// Parameter vector tagged with its model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    model: ModelId,
    values: Vec<f64>,
}

impl ParameterVector {
    pub fn new(model: ModelId, values: Vec<f64>) -> Result<Self> {
        if values.len() != model.n_params() {
            return Err(Error::InvalidParameter(format!(
                "{model} takes {} parameters, got {}",
                model.n_params(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite parameter".into()));
        }
        Ok(Self { model, values })
    }

    pub fn model(&self) -> ModelId {
        self.model
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

impl std::ops::Deref for ParameterVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.values
    }
}

/// Parameter-independent noise record, `N` rows of `channels` entries.
#[derive(Clone, Debug, PartialEq)]
pub struct BareNoise {
    channels: usize,
    data: Vec<f64>,
    seed: u64,
}

impl BareNoise {
    pub fn new(channels: usize, data: Vec<f64>, seed: u64) -> Result<Self> {
        if channels == 0 || data.len() % channels != 0 {
            return Err(Error::InvalidParameter(format!(
                "{} noise values do not fill rows of {channels}",
                data.len()
            )));
        }
        Ok(Self { channels, data, seed })
    }

    /// Draw `n` rows for `model` from a generator seeded with `seed`.
    pub fn from_seed(model: ModelId, n: usize, seed: u64) -> Self {
        let mut r = rng::seeded(seed);
        let channels = model.noise_channels();
        let data = match model {
            ModelId::Nlar1 => (0..n).map(|_| StandardNormal.sample(&mut r)).collect(),
            ModelId::Dynamo => (0..n * channels).map(|_| StandardUniform.sample(&mut r)).collect(),
        };
        Self { channels, data, seed }
    }

    /// Draw a fresh record whose seed comes from `rng`.
    pub fn draw<R: Rng + ?Sized>(model: ModelId, n: usize, rng: &mut R) -> Self {
        Self::from_seed(model, n, rng.random())
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.data[n * self.channels..(n + 1) * self.channels]
    }

    /// Row-major `[N, channels]` values.
    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Simulated (or observed) series `x_1..x_N` with its initial condition.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub x: Vec<f64>,
    pub x0: f64,
}

impl Trajectory {
    pub fn new(x: Vec<f64>, x0: f64) -> Self {
        Self { x, x0 }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// `(x_{n-1}, x_n)` pairs for `n = 1..N`, seeded with `x_0`.
    pub fn transitions(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        std::iter::once(self.x0)
            .chain(self.x.iter().copied())
            .zip(self.x.iter().copied())
    }
}

/// Smooth threshold nonlinearity
/// `f₂(x) = x · ¼ · [1 + erf((x − x₁)/d₁)] · [1 − erf((x − x₂)/d₂)]`.
///
/// The default constants are calibrated so that the deterministic sweep over
/// `α ∈ [0.9, 1.4]` (additive term 0.04) shows a zero branch up to α≈1.05, a
/// nonzero fixed point, period doubling near 1.18, 1.26, 1.28 and chaos from
/// about 1.29.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdMap {
    pub x1: f64,
    pub d1: f64,
    pub x2: f64,
    pub d2: f64,
}

impl Default for ThresholdMap {
    fn default() -> Self {
        Self {
            x1: 0.4,
            d1: 0.2,
            x2: 1.0,
            d2: 0.2,
        }
    }
}

impl ThresholdMap {
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        x * 0.25 * (1.0 + libm::erf((x - self.x1) / self.d1)) * (1.0 - libm::erf((x - self.x2) / self.d2))
    }
}

/// Deterministic part of the map.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Nonlinearity {
    /// `x²(1−x)`
    Cubic,
    /// `x` (linear AR(1) harness)
    Identity,
    Threshold(ThresholdMap),
}

impl Nonlinearity {
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Nonlinearity::Cubic => x * x * (1.0 - x),
            Nonlinearity::Identity => x,
            Nonlinearity::Threshold(m) => m.eval(x),
        }
    }
}

/// Extension point for further one-dimensional stochastic maps driven by
/// bare noise. The ABC and MCMC layers only rely on this interface.
pub trait StochasticMap {
    fn n_params(&self) -> usize;
    fn noise_channels(&self) -> usize;
    /// One step `x_{n+1} = M(θ, x_n, noise_row)`.
    fn step(&self, theta: &[f64], x: f64, noise: &[f64]) -> f64;
    /// Exact one-step transition density `p(x_next | x, θ)`.
    fn transition_density(&self, x_next: f64, x: f64, theta: &[f64]) -> Result<f64>;
    /// `log p(x_next | x, θ)`; `-∞` outside the support.
    fn log_transition(&self, x_next: f64, x: f64, theta: &[f64]) -> Result<f64> {
        Ok(self.transition_density(x_next, x, theta)?.ln())
    }
}

/// A benchmark model: its identity plus the nonlinearity it iterates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub id: ModelId,
    pub map: Nonlinearity,
}

impl Model {
    pub fn nlar1() -> Self {
        Self {
            id: ModelId::Nlar1,
            map: Nonlinearity::Cubic,
        }
    }

    pub fn dynamo() -> Self {
        Self::dynamo_with(ThresholdMap::default())
    }

    pub fn dynamo_with(map: ThresholdMap) -> Self {
        Self {
            id: ModelId::Dynamo,
            map: Nonlinearity::Threshold(map),
        }
    }

    pub fn from_id(id: ModelId) -> Self {
        match id {
            ModelId::Nlar1 => Self::nlar1(),
            ModelId::Dynamo => Self::dynamo(),
        }
    }

    #[inline]
    pub fn f(&self, x: f64) -> f64 {
        self.map.eval(x)
    }

    /// Run the map for `n` steps from `x0`.
    pub fn simulate(&self, theta: &[f64], noise: &BareNoise, x0: f64, n: usize) -> Result<Trajectory> {
        if theta.len() != self.id.n_params() {
            return Err(Error::InvalidParameter(format!(
                "{} takes {} parameters, got {}",
                self.id,
                self.id.n_params(),
                theta.len()
            )));
        }
        if noise.channels() != self.id.noise_channels() || noise.len() < n {
            return Err(Error::InvalidParameter(format!(
                "noise has {} channels × {} rows; need {} × {n}",
                noise.channels(),
                noise.len(),
                self.id.noise_channels()
            )));
        }
        let mut x = Vec::with_capacity(n);
        let mut prev = x0;
        for i in 0..n {
            let next = self.step(theta, prev, noise.row(i));
            if !next.is_finite() || next.abs() > DIVERGENCE_BOUND {
                return Err(Error::SimulationDiverged { step: i + 1 });
            }
            x.push(next);
            prev = next;
        }
        Ok(Trajectory { x, x0 })
    }

    pub fn log_likelihood(&self, traj: &Trajectory, theta: &[f64]) -> Result<f64> {
        let mut total = 0.0;
        for (prev, next) in traj.transitions() {
            let lp = self.log_transition(next, prev, theta)?;
            if lp == f64::NEG_INFINITY {
                return Ok(f64::NEG_INFINITY);
            }
            total += lp;
        }
        Ok(total)
    }
}

impl StochasticMap for Model {
    fn n_params(&self) -> usize {
        self.id.n_params()
    }

    fn noise_channels(&self) -> usize {
        self.id.noise_channels()
    }

    #[inline]
    fn step(&self, theta: &[f64], x: f64, noise: &[f64]) -> f64 {
        let fx = self.f(x);
        match self.id {
            ModelId::Nlar1 => theta[0] * fx + theta[1] * noise[0],
            ModelId::Dynamo => (theta[0] + theta[1] * noise[0]) * fx + theta[2] * noise[1],
        }
    }

    fn transition_density(&self, x_next: f64, x: f64, theta: &[f64]) -> Result<f64> {
        match self.id {
            ModelId::Nlar1 => gaussian_density(x_next, theta[0] * self.f(x), theta[1]),
            ModelId::Dynamo => trapezoid_density(x_next, self.f(x), theta),
        }
    }

    fn log_transition(&self, x_next: f64, x: f64, theta: &[f64]) -> Result<f64> {
        match self.id {
            ModelId::Nlar1 => {
                let sigma = theta[1];
                if sigma <= 0.0 {
                    return Err(Error::InvalidParameter(format!("sigma must be positive, got {sigma}")));
                }
                let r = (x_next - theta[0] * self.f(x)) / sigma;
                Ok(-0.5 * r * r - sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln())
            }
            ModelId::Dynamo => Ok(trapezoid_density(x_next, self.f(x), theta)?.ln()),
        }
    }
}

fn gaussian_density(x: f64, mean: f64, sd: f64) -> Result<f64> {
    if sd <= 0.0 {
        return Err(Error::InvalidParameter(format!("sigma must be positive, got {sd}")));
    }
    let z = (x - mean) / sd;
    Ok((-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt()))
}

/// Density of `A·c + E` with `A ~ U[α, α+δ]`, `E ~ U[0, ε]`: a trapezoid on
/// `[αc, αc + δc + ε]`.
fn trapezoid_density(x_next: f64, c: f64, theta: &[f64]) -> Result<f64> {
    let (alpha, delta, eps) = (theta[0], theta[1], theta[2]);
    if delta < 0.0 || eps < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "delta and epsilon must be non-negative, got {delta}, {eps}"
        )));
    }
    if c < 0.0 {
        return Err(Error::InvalidParameter(format!("f2(x) must be non-negative, got {c}")));
    }
    let a = delta * c;
    let b = eps;
    let (lo, hi) = (a.min(b), a.max(b));
    if hi == 0.0 {
        return Err(Error::DegenerateLikelihood);
    }
    let y = x_next - alpha * c;
    if y < 0.0 || y > a + b {
        return Ok(0.0);
    }
    if lo == 0.0 {
        return Ok(1.0 / hi);
    }
    Ok(if y < lo {
        y / (a * b)
    } else if y <= hi {
        1.0 / hi
    } else {
        (a + b - y) / (a * b)
    })
}

/// One-step NLAR1 simulation with `f(x) = x²(1−x)`.
pub fn simulate_nlar1(theta: &[f64], noise: &BareNoise, x0: f64, n: usize) -> Result<Trajectory> {
    Model::nlar1().simulate(theta, noise, x0, n)
}

pub fn simulate_dynamo(theta: &[f64], noise: &BareNoise, x0: f64, n: usize, map: ThresholdMap) -> Result<Trajectory> {
    Model::dynamo_with(map).simulate(theta, noise, x0, n)
}

/// Normal density with mean `α f(x)` and standard deviation `σ`.
pub fn transition_density_nlar1(x_next: f64, x: f64, theta: &[f64]) -> Result<f64> {
    Model::nlar1().transition_density(x_next, x, theta)
}

pub fn transition_density_dynamo(x_next: f64, x: f64, theta: &[f64], map: ThresholdMap) -> Result<f64> {
    Model::dynamo_with(map).transition_density(x_next, x, theta)
}

/// Uniform box prior with the model's fixed initial condition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub names: Vec<String>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub x0: f64,
}

impl PriorSpec {
    pub fn new(names: Vec<String>, lower: Vec<f64>, upper: Vec<f64>, x0: f64) -> Result<Self> {
        let p = names.len();
        if lower.len() != p || upper.len() != p || p == 0 {
            return Err(Error::Config(format!("prior needs {p} bounds per side")));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u) || !l.is_finite() || !u.is_finite()) {
            return Err(Error::Config(format!("invalid prior box {lower:?} .. {upper:?}")));
        }
        Ok(Self { names, lower, upper, x0 })
    }

    /// Box for `model` with the given bounds.
    pub fn for_model(model: ModelId, lower: Vec<f64>, upper: Vec<f64>, x0: f64) -> Result<Self> {
        let names = model.param_names().iter().map(|s| s.to_string()).collect();
        Self::new(names, lower, upper, x0)
    }

    pub fn default_for(model: ModelId) -> Self {
        let (lower, upper, x0) = match model {
            ModelId::Nlar1 => (vec![4.2, 0.005], vec![5.8, 0.025], 0.25),
            ModelId::Dynamo => (vec![0.9, 0.05, 0.02], vec![1.4, 0.25, 0.15], 1.0),
        };
        Self::for_model(model, lower, upper, x0).expect("default prior is valid")
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(t, (l, u))| t >= l && t <= u)
    }

    pub fn ranges(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).collect()
    }
}

/// Componentwise uniform draw from the open prior box (a degenerate
/// component returns its bound).
pub fn sample_prior<R: Rng + ?Sized>(prior: &PriorSpec, rng: &mut R) -> Vec<f64> {
    prior
        .lower
        .iter()
        .zip(&prior.upper)
        .map(|(&l, &u)| {
            let t: f64 = Open01.sample(rng);
            l + (u - l) * t
        })
        .collect()
}

/// Recorded iterates of the deterministic map at one grid value of α.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BifurcationPoint {
    pub alpha: f64,
    pub values: Vec<f64>,
    /// Step at which the orbit escaped, if it did.
    pub diverged_at: Option<usize>,
}

impl BifurcationPoint {
    /// Number of distinct recorded values after merging those closer than `tol`.
    pub fn distinct(&self, tol: f64) -> usize {
        distinct_values(&self.values, tol).len()
    }
}

/// Sorted cluster representatives of `values` with gaps larger than `tol`.
pub fn distinct_values(values: &[f64], tol: f64) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mut out: Vec<f64> = Vec::new();
    for x in v {
        match out.last() {
            Some(&last) if (x - last).abs() <= tol => {}
            _ => out.push(x),
        }
    }
    out
}

/// Deterministic sweep over α. NLAR1 runs with σ = 0; DYNAMO runs with a
/// constant multiplier `α_n ≡ α` and the additive noise replaced by the
/// constant `additive` (its mean, ε/2).
pub fn bifurcation_sweep(
    model: &Model,
    alpha_grid: &[f64],
    n_transient: usize,
    n_record: usize,
    x0: f64,
    additive: f64,
) -> Vec<BifurcationPoint> {
    alpha_grid
        .iter()
        .map(|&alpha| {
            let mut x = x0;
            let mut values = Vec::with_capacity(n_record);
            let mut diverged_at = None;
            for step in 0..n_transient + n_record {
                x = match model.id {
                    ModelId::Nlar1 => alpha * model.f(x),
                    ModelId::Dynamo => alpha * model.f(x) + additive,
                };
                if !x.is_finite() || x.abs() > DIVERGENCE_BOUND {
                    diverged_at = Some(step + 1);
                    break;
                }
                if step >= n_transient {
                    values.push(x);
                }
            }
            BifurcationPoint {
                alpha,
                values,
                diverged_at,
            }
        })
        .collect()
}
