mod common;

use common::*;
use rand::Rng as _;
use statforge::config::ModelSection;
use statforge::mcmc::*;
use statforge::models::*;
use statforge::pipeline;
use statforge::rng;

struct Flat;

impl LogDensity for Flat {
    fn log_density(&self, _: &[f64]) -> f64 {
        0.0
    }
}

/// AR(1) likelihood in α with σ held at its true value.
struct KnownSigma<'a> {
    model: Model,
    traj: &'a Trajectory,
    sigma: f64,
}

impl LogDensity for KnownSigma<'_> {
    fn log_density(&self, theta: &[f64]) -> f64 {
        self.model.log_likelihood(self.traj, &[theta[0], self.sigma]).unwrap()
    }
}

/// Monte-Carlo standard error of the mean by 50 batch means.
fn batch_se(v: &[f64]) -> f64 {
    let b = v.len() / 50;
    let means: Vec<f64> = v.chunks_exact(b).map(|c| c.iter().sum::<f64>() / b as f64).collect();
    mean_sd(&means).1 / (means.len() as f64).sqrt()
}

fn observation(id: ModelId) -> (Model, PriorSpec, Trajectory) {
    let m = ModelSection::default_for(id);
    (m.model(), m.prior().unwrap(), pipeline::observation(&m).unwrap())
}

#[test]
fn flat_target_recovers_uniform_prior() {
    let prior = PriorSpec::default_for(ModelId::Dynamo);
    let cfg = McmcConfig {
        length: 200_000,
        burn_in_fraction: 0.5,
        thin: 10,
        seed: 1,
        ..McmcConfig::default()
    };
    let res = metropolis(&Flat, &prior, &cfg).unwrap();
    assert_eq!(res.samples.len(), 10_000);
    for j in 0..3 {
        let (l, u) = (prior.lower[j], prior.upper[j]);
        let ks = ks_statistic(&res.samples.column(j), |x| ((x - l) / (u - l)).clamp(0.0, 1.0));
        assert!(ks < 0.02, "component {j}: {ks}");
    }
}

#[test]
fn linear_gaussian_posterior() {
    let model = Model {
        id: ModelId::Nlar1,
        map: Nonlinearity::Identity,
    };
    let sigma = 0.1;
    let t = model.simulate(&[0.7, sigma], &BareNoise::from_seed(ModelId::Nlar1, 300, 2), 0.5, 300).unwrap();
    let (sxy, sxx) = t.transitions().fold((0.0, 0.0), |(a, b), (p, n)| (a + p * n, b + p * p));
    let (mean, sd) = (sxy / sxx, sigma / sxx.sqrt());
    let prior = PriorSpec::new(vec!["alpha".into()], vec![0.0], vec![1.5], 0.5).unwrap();
    let target = KnownSigma { model, traj: &t, sigma };
    let res = metropolis(&target, &prior, &McmcConfig { seed: 3, ..McmcConfig::default() }).unwrap();
    let got = res.samples.column(0);
    let (m, s) = mean_sd(&got);
    assert!((m / mean - 1.0).abs() < 0.02, "{m} vs {mean}");
    assert!((s / sd - 1.0).abs() < 0.02, "{s} vs {sd}");
}

#[test]
fn independent_chains_agree() {
    let (model, prior, obs) = observation(ModelId::Nlar1);
    let run = |seed| {
        let cfg = McmcConfig {
            seed,
            init: Some(ModelId::Nlar1.true_theta()),
            ..McmcConfig::default()
        };
        metropolis_run(&model, &prior, &obs, &cfg).unwrap()
    };
    let (a, b) = (run(4), run(5));
    for j in 0..2 {
        let (ca, cb) = (a.samples.column(j), b.samples.column(j));
        let se = (batch_se(&ca).powi(2) + batch_se(&cb).powi(2)).sqrt();
        let diff = (mean_sd(&ca).0 - mean_sd(&cb).0).abs();
        assert!(diff < 3.0 * se, "component {j}: {diff} vs {se}");
    }
}

#[test]
fn three_state_chain_has_target_stationary_law() {
    let target = [0.2f64, 0.3, 0.5];
    let mut r = rng::seeded(6);
    let mut state = 0usize;
    let mut counts = [0usize; 3];
    let steps = 1_000_000;
    for _ in 0..steps {
        let next = (state + r.random_range(1..3)) % 3;
        let ratio = (target[next] / target[state]).ln();
        if metropolis_accept(ratio, r.random()) {
            state = next;
        }
        counts[state] += 1;
    }
    for k in 0..3 {
        let f = counts[k] as f64 / steps as f64;
        assert!((f / target[k] - 1.0).abs() < 0.01, "state {k}: {f}");
    }
}

#[test]
fn benchmark_chains_stay_in_box_with_moderate_acceptance() {
    for id in [ModelId::Nlar1, ModelId::Dynamo] {
        let (model, prior, obs) = observation(id);
        let cfg = McmcConfig {
            seed: 7,
            init: Some(id.true_theta()),
            ..McmcConfig::default()
        };
        let res = metropolis_run(&model, &prior, &obs, &cfg).unwrap();
        assert!(res.samples.draws.iter().all(|d| prior.contains(d)));
        assert!((0.1..=0.5).contains(&res.acceptance_rate), "{id}: {}", res.acceptance_rate);
        assert!(!res.mixing_warning);
    }
}

#[test]
fn chain_is_seed_deterministic_and_validates_config() {
    let prior = PriorSpec::default_for(ModelId::Nlar1);
    let cfg = McmcConfig {
        length: 5000,
        seed: 8,
        ..McmcConfig::default()
    };
    assert_eq!(metropolis(&Flat, &prior, &cfg).unwrap().samples, metropolis(&Flat, &prior, &cfg).unwrap().samples);
    assert!(metropolis(&Flat, &prior, &McmcConfig { thin: 0, ..cfg.clone() }).is_err());
    assert!(metropolis(&Flat, &prior, &McmcConfig { proposal_scales: Some(vec![1.0]), ..cfg }).is_err());
}
