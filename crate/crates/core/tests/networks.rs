mod common;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng as _;
use statforge::enca::{self, EncaConfig};
use statforge::encoder::SummaryVector;
use statforge::inca::{self, IncaConfig, IncaModel};
use statforge::models::*;
use statforge::rng;
use statforge::train::window_mean;
use statforge_tensor::ParameterStore;

fn same_weights(a: &ParameterStore, b: &ParameterStore) -> bool {
    a.len() == b.len()
        && a.iter().zip(b.iter()).all(|((na, ta), (nb, tb))| {
            na == nb && ta.shape() == tb.shape() && ta.data().iter().zip(tb.data()).all(|(x, y)| x.to_bits() == y.to_bits())
        })
}

fn enca_smoke_config() -> EncaConfig {
    EncaConfig {
        n: 50,
        minibatch: 32,
        steps: 200,
        seed: 3,
        pilot_runs: 500,
        log_every: 50,
        ..EncaConfig::default_for(ModelId::Nlar1)
    }
}

#[test]
fn enca_smoke_loss_decreases() {
    let cfg = enca_smoke_config();
    let (out, c_x) = enca::train_enca(&Model::nlar1(), &PriorSpec::default_for(ModelId::Nlar1), &cfg, &mut |_| {}).unwrap();
    assert!(c_x > 0.0);
    assert_eq!(out.losses.len(), 200);
    assert_eq!(out.log.len(), 4);
    assert!(window_mean(&out.losses, 150, 200) < window_mean(&out.losses, 0, 50));
}

#[test]
fn enca_zero_steps_and_determinism() {
    let model = Model::nlar1();
    let prior = PriorSpec::default_for(ModelId::Nlar1);
    let mut cfg = EncaConfig {
        steps: 0,
        c_x: Some(0.01),
        ..enca_smoke_config()
    };
    let (out, _) = enca::train_enca(&model, &prior, &cfg, &mut |_| {}).unwrap();
    assert!(same_weights(&out.weights, &enca::init_weights(cfg.q, 1, cfg.seed).unwrap()));

    cfg.steps = 5;
    let (a, _) = enca::train_enca(&model, &prior, &cfg, &mut |_| {}).unwrap();
    let (b, _) = enca::train_enca(&model, &prior, &cfg, &mut |_| {}).unwrap();
    assert!(same_weights(&a.weights, &b.weights));
    assert_eq!(a.losses, b.losses);
    assert!(!same_weights(&a.weights, &out.weights));
}

#[test]
fn enca_loss_matches_direct_evaluation() {
    let mut r = rng::seeded(4);
    for _ in 0..50 {
        let p = r.random_range(1..4);
        let q = p + r.random_range(0..3);
        let n = r.random_range(1..30);
        let s: Vec<f64> = (0..q).map(|_| r.random_range(-2.0..2.0)).collect();
        let theta: Vec<f64> = (0..p).map(|_| r.random_range(0.1..2.0)).collect();
        let x: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        let x_hat: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        let c_x = 0.05;
        let mut reg = 0.0;
        for a in 0..p {
            let e = (s[a] - theta[a]) / theta[a];
            reg += e * e;
        }
        reg /= p as f64;
        let mut rec = 0.0;
        for i in 0..n {
            let d = if x[i].abs() > c_x { x[i].abs() } else { c_x };
            let e = (x_hat[i] - x[i]) / d;
            rec += e * e;
        }
        rec /= n as f64;
        let got = enca::enca_loss(&s, &theta, &x_hat, &x, c_x);
        assert!((got - (reg + rec)).abs() < 1e-12 * (reg + rec).max(1.0));
    }
}

fn summaries(r: &mut rng::Rng, n: usize, q: usize, p: usize) -> Vec<SummaryVector> {
    (0..n)
        .map(|_| SummaryVector {
            values: (0..q).map(|_| r.random_range(-3.0..3.0)).collect(),
            p,
        })
        .collect()
}

#[test]
fn aggregate_and_inca_loss_match_direct_evaluation() {
    let mut r = rng::seeded(5);
    for _ in 0..50 {
        let (n, p) = (r.random_range(1..8), r.random_range(1..4));
        let stats = summaries(&mut r, n, p + 1, p);
        let w: Vec<f64> = (0..n).map(|_| r.random_range(0.01..1.0)).collect();
        let theta: Vec<f64> = (0..p).map(|_| r.random_range(0.5..2.0)).collect();
        let got = inca::aggregate(&stats, &w).unwrap();
        let mut expect = vec![0.0; p];
        for a in 0..p {
            let (mut num, mut den) = (0.0, 0.0);
            for j in 0..n {
                num += w[j] * stats[j].values[a];
                den += w[j];
            }
            expect[a] = num / den;
            assert!((got[a] - expect[a]).abs() < 1e-12);
        }
        let mut loss = 0.0;
        for s in &stats {
            for a in 0..p {
                loss += ((s.values[a] - theta[a]) / theta[a]).powi(2);
            }
        }
        for a in 0..p {
            loss += ((expect[a] - theta[a]) / theta[a]).powi(2);
        }
        assert!((inca::inca_loss(&stats, &expect, &theta) - loss).abs() < 1e-12 * loss.max(1.0));
    }
}

fn inca_smoke_config() -> IncaConfig {
    IncaConfig {
        n: 50,
        replicas: 3,
        thetas_per_step: 16,
        steps: 200,
        seed: 6,
        log_every: 50,
        ..IncaConfig::default_for(ModelId::Nlar1)
    }
}

#[test]
fn inca_smoke_loss_decreases() {
    let cfg = inca_smoke_config();
    let out = inca::train_inca(&Model::nlar1(), &PriorSpec::default_for(ModelId::Nlar1), &cfg, &mut |_| {}).unwrap();
    assert_eq!(out.losses.len(), 200);
    assert!(window_mean(&out.losses, 150, 200) < window_mean(&out.losses, 0, 50));
}

#[test]
fn inca_zero_steps_returns_initialization() {
    let cfg = IncaConfig {
        steps: 0,
        ..inca_smoke_config()
    };
    let out = inca::train_inca(&Model::nlar1(), &PriorSpec::default_for(ModelId::Nlar1), &cfg, &mut |_| {}).unwrap();
    assert!(same_weights(&out.weights, &inca::init_weights(cfg.q, cfg.p, cfg.seed).unwrap()));
}

#[test]
fn inca_estimate_is_permutation_invariant() {
    let w = inca::init_weights(3, 2, 7).unwrap();
    let m = IncaModel::new(&w, 2).unwrap();
    let mut r = rng::seeded(8);
    let mut reps: Vec<Trajectory> = (0..5).map(|i| common::trajectory(ModelId::Nlar1, &[5.3, 0.015], 100, 50 + i)).collect();
    let base = m.estimate(&reps).unwrap().theta_hat;
    for _ in 0..20 {
        reps.shuffle(&mut r);
        let t = m.estimate(&reps).unwrap().theta_hat;
        assert_eq!(t.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), base.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn aggregate_stays_in_convex_hull(seed in any::<u64>(), n in 1usize..10) {
        let mut r = rng::seeded(seed);
        let stats = summaries(&mut r, n, 3, 2);
        let w: Vec<f64> = (0..n).map(|_| r.random_range(1e-6..1.0)).collect();
        let t = inca::aggregate(&stats, &w).unwrap();
        for a in 0..2 {
            let lo = stats.iter().map(|s| s.values[a]).fold(f64::INFINITY, f64::min);
            let hi = stats.iter().map(|s| s.values[a]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(t[a] >= lo && t[a] <= hi);
        }
    }

    #[test]
    fn aggregate_is_homogeneous_in_weights(seed in any::<u64>(), n in 1usize..10, c in 1e-3f64..1e3) {
        let mut r = rng::seeded(seed);
        let stats = summaries(&mut r, n, 3, 2);
        let w: Vec<f64> = (0..n).map(|_| r.random_range(1e-3..1.0)).collect();
        let scaled: Vec<f64> = w.iter().map(|v| v * c).collect();
        let a = inca::aggregate(&stats, &w).unwrap();
        let b = inca::aggregate(&stats, &scaled).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn aggregate_is_permutation_invariant(seed in any::<u64>(), n in 1usize..10) {
        let mut r = rng::seeded(seed);
        let stats = summaries(&mut r, n, 4, 2);
        let w: Vec<f64> = (0..n).map(|_| r.random_range(1e-3..1.0)).collect();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut r);
        let ps: Vec<SummaryVector> = idx.iter().map(|&i| stats[i].clone()).collect();
        let pw: Vec<f64> = idx.iter().map(|&i| w[i]).collect();
        prop_assert_eq!(inca::aggregate(&stats, &w).unwrap(), inca::aggregate(&ps, &pw).unwrap());
        let theta = [1.0, 2.0];
        let th = inca::aggregate(&stats, &w).unwrap();
        prop_assert_eq!(inca::inca_loss(&stats, &th, &theta).to_bits(), inca::inca_loss(&ps, &th, &theta).to_bits());
    }
}
