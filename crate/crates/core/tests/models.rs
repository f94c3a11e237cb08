mod common;

use common::*;
use proptest::prelude::*;
use statforge::models::*;
use statforge::rng;
use statforge::Error;

#[test]
fn nlar1_first_step_moments() {
    let m = Model::nlar1();
    let xs = one_step_draws(&m, &[5.3, 0.015], 0.25, 100_000, 1);
    let (mean, sd) = mean_sd(&xs);
    assert!((mean - 0.2484375).abs() < 3.0 * 0.015 / 1e5f64.sqrt(), "mean {mean}");
    // Variance within 4 standard errors; for a normal, se(s²) = σ²√(2/(n−1)).
    let se = 0.015f64.powi(2) * (2.0 / 99_999.0f64).sqrt();
    assert!((sd * sd - 0.015f64.powi(2)).abs() < 4.0 * se);
}

#[test]
fn dynamo_first_step_moments() {
    let m = Model::dynamo();
    let (a, d, e) = (1.11, 0.15, 0.08);
    let xs = one_step_draws(&m, &[a, d, e], 1.0, 100_000, 2);
    let c = m.f(1.0);
    let (mean, sd) = mean_sd(&xs);
    let expect = (a + d / 2.0) * c + e / 2.0;
    assert!((mean - expect).abs() < 3.0 * sd / 1e5f64.sqrt(), "{mean} vs {expect}");
    let var = (d * c).powi(2) / 12.0 + e * e / 12.0;
    // Sum of two uniforms has excess kurtosis in (−1.2, −0.6); a bound of 2
    // on the fourth moment ratio gives a conservative standard error.
    let se = var * (2.0 / 1e5f64).sqrt();
    assert!((sd * sd - var).abs() < 4.0 * se, "{} vs {var}", sd * sd);
}

#[test]
fn nlar1_density_normalizes_and_peaks() {
    for &(x, a, s) in &[(0.25, 5.3, 0.015), (0.7, 4.4, 0.005), (0.1, 5.8, 0.025)] {
        let mean = a * x * x * (1.0 - x);
        let total = simpson(|y| transition_density_nlar1(y, x, &[a, s]).unwrap(), mean - 12.0 * s, mean + 12.0 * s, 4000);
        assert!((total - 1.0).abs() < 1e-8, "{total}");
        let peak = transition_density_nlar1(mean, x, &[a, s]).unwrap();
        assert!((peak - 1.0 / (s * (2.0 * std::f64::consts::PI).sqrt())).abs() < 1e-9 * peak);
    }
}

/// Largest per-bin deviation, in binomial standard errors, between a
/// histogram of `xs` and bin masses integrated from `density`.
fn worst_bin_deviation(xs: &[f64], density: impl Fn(f64) -> f64, lo: f64, hi: f64, bins: usize) -> f64 {
    let w = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &x in xs {
        if x >= lo && x < hi {
            counts[(((x - lo) / w) as usize).min(bins - 1)] += 1;
        }
    }
    let n = xs.len() as f64;
    (0..bins)
        .map(|b| {
            let a = lo + b as f64 * w;
            let p = simpson(&density, a, a + w, 200);
            let se = (p * (1.0 - p) / n).sqrt().max(1.0 / n);
            (counts[b] as f64 / n - p).abs() / se
        })
        .fold(0.0, f64::max)
}

#[test]
fn nlar1_density_matches_histogram() {
    let m = Model::nlar1();
    let theta = [5.3, 0.015];
    let xs = one_step_draws(&m, &theta, 0.25, 1_000_000, 3);
    let mean = 5.3 * m.f(0.25);
    let dev = worst_bin_deviation(&xs, |y| transition_density_nlar1(y, 0.25, &theta).unwrap(), mean - 0.06, mean + 0.06, 50);
    assert!(dev < 3.0, "worst bin {dev} se");
}

#[test]
fn trapezoid_density_normalizes_and_matches_histogram() {
    let map = ThresholdMap::default();
    let m = Model::dynamo();
    for (i, &x) in [1.0, 0.6, 0.45].iter().enumerate() {
        let theta = [1.11, 0.15, 0.08];
        let c = m.f(x);
        let (lo, hi) = (1.11 * c, 1.11 * c + 0.15 * c + 0.08);
        let total = trapezoid(|y| transition_density_dynamo(y, x, &theta, map).unwrap(), lo - 0.01, hi + 0.01, 200_000);
        assert!((total - 1.0).abs() < 1e-6, "x={x}: {total}");
        let xs = one_step_draws(&m, &theta, x, 1_000_000, 10 + i as u64);
        let dev = worst_bin_deviation(&xs, |y| transition_density_dynamo(y, x, &theta, map).unwrap(), lo, hi, 50);
        assert!(dev < 3.0, "x={x}: worst bin {dev} se");
    }
}

#[test]
fn trapezoid_special_cases() {
    let map = ThresholdMap::default();
    let x = 1.0;
    let c = map.eval(x);
    // Outside the support.
    assert_eq!(transition_density_dynamo(1.11 * c - 1e-9, x, &[1.11, 0.15, 0.08], map).unwrap(), 0.0);
    assert_eq!(transition_density_dynamo(1.26 * c + 0.08 + 1e-9, x, &[1.11, 0.15, 0.08], map).unwrap(), 0.0);
    // δ = 0 is a single uniform of width ε.
    for y in [0.001, 0.04, 0.079] {
        let d = transition_density_dynamo(1.11 * c + y, x, &[1.11, 0.0, 0.08], map).unwrap();
        assert!((d - 1.0 / 0.08).abs() < 1e-12);
    }
    assert!(matches!(
        transition_density_dynamo(1.11 * c, x, &[1.11, 0.0, 0.0], map),
        Err(Error::DegenerateLikelihood)
    ));
}

#[test]
fn single_step_likelihood_is_log_density() {
    let t = Trajectory::new(vec![0.26], 0.25);
    let ll = Model::nlar1().log_likelihood(&t, &[5.3, 0.015]).unwrap();
    let d = transition_density_nlar1(0.26, 0.25, &[5.3, 0.015]).unwrap();
    assert!((ll - d.ln()).abs() < 1e-12);

    let m = Model::dynamo();
    let c = m.f(1.0);
    let t = Trajectory::new(vec![1.15 * c + 0.03], 1.0);
    let ll = m.log_likelihood(&t, &[1.11, 0.15, 0.08]).unwrap();
    let d = transition_density_dynamo(t.x[0], 1.0, &[1.11, 0.15, 0.08], ThresholdMap::default()).unwrap();
    assert!((ll - d.ln()).abs() < 1e-12);
}

#[test]
fn linear_harness_grid_maximum_is_least_squares_slope() {
    let m = Model {
        id: ModelId::Nlar1,
        map: Nonlinearity::Identity,
    };
    let t = m.simulate(&[0.7, 0.1], &BareNoise::from_seed(ModelId::Nlar1, 500, 4), 0.5, 500).unwrap();
    let (sxy, sxx) = t.transitions().fold((0.0, 0.0), |(a, b), (p, n)| (a + p * n, b + p * p));
    let ols = sxy / sxx;
    let step = 1e-4;
    let best = (0..=4000)
        .map(|i| 0.5 + i as f64 * step)
        .map(|a| (a, m.log_likelihood(&t, &[a, 0.1]).unwrap()))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap()
        .0;
    assert!((best - ols).abs() <= step / 2.0 + 1e-12, "{best} vs {ols}");
}

#[test]
fn dynamo_support_violation_is_minus_infinity() {
    let theta = [1.11, 0.15, 0.08];
    let t = trajectory(ModelId::Dynamo, &theta, 200, 5);
    let m = Model::dynamo();
    assert!(m.log_likelihood(&t, &theta).unwrap().is_finite());
    // Raising α by more than the support width pushes every step below it.
    assert_eq!(m.log_likelihood(&t, &[1.4, 0.05, 0.02]).unwrap(), f64::NEG_INFINITY);
}

#[test]
fn prior_moments_and_degenerate_box() {
    let prior = PriorSpec::default_for(ModelId::Nlar1);
    let mut r = rng::seeded(6);
    let draws: Vec<Vec<f64>> = (0..100_000).map(|_| sample_prior(&prior, &mut r)).collect();
    let mean = draws.iter().map(|d| d[0]).sum::<f64>() / 1e5;
    assert!((mean - 5.0).abs() < 3.0 * (1.6 / 12f64.sqrt()) / 1e5f64.sqrt(), "{mean}");
    assert!(draws
        .iter()
        .all(|d| d.iter().zip(prior.lower.iter().zip(&prior.upper)).all(|(v, (l, u))| v > l && v < u)));

    let point = PriorSpec::for_model(ModelId::Dynamo, vec![1.0, 0.1, 0.05], vec![1.0, 0.1, 0.05], 1.0).unwrap();
    assert_eq!(sample_prior(&point, &mut r), vec![1.0, 0.1, 0.05]);
}

#[test]
fn nlar1_bifurcation_regimes() {
    let m = Model::nlar1();
    // Above the unstable point 1/3, so the orbit reaches the nonzero fixed point.
    let p = &bifurcation_sweep(&m, &[4.5], 2000, 100, 0.5, 0.0)[0];
    let d = distinct_values(&p.values, 1e-9);
    assert_eq!(d.len(), 1);
    assert!(d[0] > 0.5);

    let p = &bifurcation_sweep(&m, &[5.5], 5000, 100, 0.5, 0.0)[0];
    assert_eq!(p.distinct(1e-9), 2);

    let p = &bifurcation_sweep(&m, &[4.2], 2000, 100, 0.01, 0.0)[0];
    assert!(p.values.iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn bare_noise_has_its_reference_distribution() {
    let n = 20_000;
    let normal = BareNoise::from_seed(ModelId::Nlar1, n, 7);
    assert!(ks_statistic(normal.data(), phi) < 1.63 / (n as f64).sqrt());
    let uni = BareNoise::from_seed(ModelId::Dynamo, n, 8);
    for ch in 0..2 {
        let v: Vec<f64> = (0..n).map(|i| uni.row(i)[ch]).collect();
        assert!(ks_statistic(&v, |x| x.clamp(0.0, 1.0)) < 1.63 / (n as f64).sqrt());
    }
}

#[test]
fn noise_does_not_depend_on_theta() {
    let prior = PriorSpec::default_for(ModelId::Dynamo);
    let mut r = rng::seeded(9);
    let noise = BareNoise::from_seed(ModelId::Dynamo, 100, 10);
    let snapshot = noise.clone();
    for _ in 0..5 {
        let theta = sample_prior(&prior, &mut r);
        Model::dynamo().simulate(&theta, &noise, 1.0, 100).unwrap();
    }
    assert_eq!(noise, snapshot);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn simulation_is_a_pure_function(seed in any::<u64>(), dynamo in any::<bool>(), u in 0.0f64..1.0) {
        let id = if dynamo { ModelId::Dynamo } else { ModelId::Nlar1 };
        let prior = PriorSpec::default_for(id);
        let theta: Vec<f64> = prior.lower.iter().zip(&prior.upper).map(|(l, h)| l + u * (h - l)).collect();
        let a = trajectory(id, &theta, 100, seed);
        let b = trajectory(id, &theta, 100, seed);
        prop_assert_eq!(a.x.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.x.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn likelihood_at_generating_theta_is_finite(seed in any::<u64>(), dynamo in any::<bool>()) {
        let id = if dynamo { ModelId::Dynamo } else { ModelId::Nlar1 };
        let prior = PriorSpec::default_for(id);
        let theta = sample_prior(&prior, &mut rng::seeded(seed));
        let t = trajectory(id, &theta, 200, seed ^ 1);
        prop_assert!(Model::from_id(id).log_likelihood(&t, &theta).unwrap().is_finite());
    }

    #[test]
    fn trapezoid_density_is_nonnegative(y in -0.5f64..2.0, x in 0.0f64..1.5, a in 0.9f64..1.4, d in 0.0f64..0.25, e in 0.001f64..0.15) {
        let v = transition_density_dynamo(y, x, &[a, d, e], ThresholdMap::default()).unwrap();
        prop_assert!(v >= 0.0 && v.is_finite());
    }

    #[test]
    fn prior_draws_stay_inside(seed in any::<u64>()) {
        let mut r = rng::seeded(seed);
        for id in [ModelId::Nlar1, ModelId::Dynamo] {
            let prior = PriorSpec::default_for(id);
            let t = sample_prior(&prior, &mut r);
            prop_assert!(prior.contains(&t));
        }
    }
}
