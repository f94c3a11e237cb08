#![allow(dead_code)]

use statforge::rng;
use statforge::models::{BareNoise, Model, ModelId};

/// Standard normal CDF.
pub fn phi(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Two-sided one-sample Kolmogorov–Smirnov statistic against `cdf`.
pub fn ks_statistic(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut v = sample.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Composite trapezoid rule on `k` intervals.
pub fn trapezoid(f: impl Fn(f64) -> f64, a: f64, b: f64, k: usize) -> f64 {
    let h = (b - a) / k as f64;
    let inner: f64 = (1..k).map(|i| f(a + i as f64 * h)).sum();
    h * (0.5 * (f(a) + f(b)) + inner)
}

/// Composite Simpson rule on `k` (even) intervals.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, k: usize) -> f64 {
    let h = (b - a) / k as f64;
    let mut s = f(a) + f(b);
    for i in 1..k {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * h);
    }
    s * h / 3.0
}

pub fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

/// `count` independent one-step outputs from `x0`.
pub fn one_step_draws(model: &Model, theta: &[f64], x0: f64, count: usize, seed: u64) -> Vec<f64> {
    let mut r = rng::seeded(seed);
    (0..count)
        .map(|_| {
            let noise = BareNoise::draw(model.id, 1, &mut r);
            model.simulate(theta, &noise, x0, 1).unwrap().x[0]
        })
        .collect()
}

pub fn trajectory(id: ModelId, theta: &[f64], n: usize, seed: u64) -> statforge::models::Trajectory {
    let model = Model::from_id(id);
    let x0 = statforge::models::PriorSpec::default_for(id).x0;
    model.simulate(theta, &BareNoise::from_seed(id, n, seed), x0, n).unwrap()
}
