//! Implicit noise-conditional autoencoder.
//!
//! Each of `n` replicas simulated at the same θ is encoded independently.
//! A small network maps the auxiliary statistics of a replica to a weight
//! `w ∈ (0, 1)`:
//!
//! ```text
//! FC1  3   leakyReLU(0.3)
//! FC2  10  leakyReLU(0.3)
//! FC3  3   leakyReLU(0.3)
//! FC4  1   sigmoid
//! ```
//!
//! and the parameter estimate is the weighted mean of the replica regressors,
//! `θ̂_α = Σ_j w_j s_α^(j) / Σ_j w_j`. With `q = p` there are no auxiliary
//! statistics and every replica gets `w = 0.5`.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use statforge_tensor::{init, Activation, Graph, ParameterStore, Tensor, Var};

use crate::encoder::{self, Bound, Encoder, SummaryVector};
use crate::error::{Error, Result};
use crate::models::{Model, ModelId, PriorSpec, Trajectory};
use crate::rng;
use crate::train::{self, LogEntry, Schedule, StepLoss, TrainOutcome};

pub const WEIGHT_PREFIX: &str = "wfn.";
pub const LEAK: f64 = 0.3;
/// Weight given to every replica when there are no auxiliary statistics.
pub const UNIFORM_WEIGHT: f64 = 0.5;

const FC: [(&str, usize, Activation); 4] = [
    ("fc1", 3, Activation::LeakyRelu(LEAK)),
    ("fc2", 10, Activation::LeakyRelu(LEAK)),
    ("fc3", 3, Activation::LeakyRelu(LEAK)),
    ("fc4", 1, Activation::Sigmoid),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncaConfig {
    pub q: usize,
    pub p: usize,
    pub n: usize,
    /// Replicas per parameter vector.
    pub replicas: usize,
    /// Parameter vectors per optimiser step.
    pub thetas_per_step: usize,
    pub steps: u64,
    pub lr: f64,
    pub seed: u64,
    /// Divide the replica term by `n·p` and the aggregate term by `p`.
    pub normalize: bool,
    pub log_every: u64,
    pub checkpoint_every: u64,
}

impl IncaConfig {
    pub fn default_for(model: ModelId) -> Self {
        Self {
            q: model.n_params() + 1,
            p: model.n_params(),
            n: 200,
            replicas: 5,
            thetas_per_step: 60,
            steps: 20_000,
            lr: 1e-3,
            seed: 0,
            normalize: false,
            log_every: 100,
            checkpoint_every: 10_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p > self.q || self.p == 0 {
            return Err(Error::Config(format!("need 0 < p ≤ q, got p={} q={}", self.p, self.q)));
        }
        if self.replicas == 0 || self.thetas_per_step == 0 || !(self.lr > 0.0) {
            return Err(Error::Config("replicas, thetas_per_step must be ≥ 1 and lr > 0".into()));
        }
        if self.n < encoder::MIN_LEN {
            return Err(Error::Config(format!("trajectory length must be ≥ {}", encoder::MIN_LEN)));
        }
        Ok(())
    }
}

fn names(layer: &str) -> (String, String) {
    (format!("{WEIGHT_PREFIX}{layer}.kernel"), format!("{WEIGHT_PREFIX}{layer}.bias"))
}

/// Fresh encoder plus weighting network (absent when `q = p`).
pub fn init_weights(q: usize, p: usize, seed: u64) -> Result<ParameterStore> {
    let mut rng = rng::stream(seed, rng::domain::INIT, 1, 0);
    let mut store = ParameterStore::new();
    encoder::init_encoder(&mut store, q, &mut rng)?;
    if q > p {
        let mut c_in = q - p;
        for (layer, width, _) in FC {
            let (k, b) = names(layer);
            store.insert(k, init::glorot_uniform(&mut rng, &[c_in, width], c_in, width))?;
            store.insert(b, Tensor::zeros(&[width]))?;
            c_in = width;
        }
    }
    Ok(store)
}

/// Weight network on `aux: [..., q−p]` → `[..., 1]`.
pub(crate) fn weight_graph(
    g: &mut Graph,
    w: &Bound<'_>,
    aux: Var,
    mut trace: Option<&mut Vec<(String, Vec<usize>)>>,
) -> Result<Var> {
    let mut h = aux;
    for (layer, _, act) in FC {
        let (k, b) = names(layer);
        h = g.dense(h, w.get(&k)?, Some(w.get(&b)?), act)?;
        if let Some(t) = trace.as_deref_mut() {
            t.push((layer.to_string(), g.shape(h).to_vec()));
        }
    }
    Ok(h)
}

/// Per-replica weights for statistics `s: [..., n, q]` → `[..., n, 1]`.
fn replica_weights(g: &mut Graph, w: &Bound<'_>, s: Var, p: usize, q: usize) -> Result<Var> {
    if q == p {
        let mut shape = g.shape(s).to_vec();
        *shape.last_mut().unwrap() = 1;
        return Ok(g.constant(Tensor::full(&shape, UNIFORM_WEIGHT)));
    }
    let aux = g.slice_last(s, p, q)?;
    weight_graph(g, w, aux, None)
}

/// Decoder layer shapes for `batch` parameter vectors of `n` replicas.
pub fn decoder_shape_trace(weights: &ParameterStore, p: usize, batch: usize, n: usize) -> Result<Vec<(String, Vec<usize>)>> {
    let q = encoder::output_dim(weights)?;
    let mut g = Graph::new();
    let w = Bound::new(weights, &mut g, false);
    let s = g.constant(Tensor::zeros(&[batch, n, q]));
    let mut trace = Vec::new();
    let wv = if q > p {
        let aux = g.slice_last(s, p, q)?;
        trace.push(("aux".to_string(), g.shape(aux).to_vec()));
        weight_graph(&mut g, &w, aux, Some(&mut trace))?
    } else {
        g.constant(Tensor::full(&[batch, n, 1], UNIFORM_WEIGHT))
    };
    let reg = g.slice_last(s, 0, p)?;
    let theta = g.weighted_average(reg, wv)?;
    trace.push(("aggregate".to_string(), g.shape(theta).to_vec()));
    Ok(trace)
}

/// Inference-time weighting function.
pub fn weight_fn(aux: &[f64], weights: &ParameterStore) -> Result<f64> {
    if aux.is_empty() {
        return Ok(UNIFORM_WEIGHT);
    }
    let mut g = Graph::new();
    let w = Bound::new(weights, &mut g, false);
    let a = g.constant(Tensor::vector(aux.to_vec()));
    let out = weight_graph(&mut g, &w, a, None)?;
    Ok(g.value(out).item())
}

fn key_cmp(a: &(f64, &[f64]), b: &(f64, &[f64])) -> Ordering {
    a.0.total_cmp(&b.0).then_with(|| {
        a.1.iter()
            .zip(b.1)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    })
}

/// `θ̂_α = Σ_j w_j s_α^(j) / Σ_j w_j` over the first `p` statistics.
///
/// Replicas are summed in a canonical order (by weight, then statistics)
/// so the result is bit-identical under any permutation of the input.
pub fn aggregate(stats: &[SummaryVector], w: &[f64]) -> Result<Vec<f64>> {
    if stats.is_empty() || stats.len() != w.len() {
        return Err(Error::InvalidParameter(format!("{} replicas, {} weights", stats.len(), w.len())));
    }
    let p = stats[0].p;
    let mut items: Vec<(f64, &[f64])> = w.iter().zip(stats).map(|(&wj, s)| (wj, s.values.as_slice())).collect();
    items.sort_by(key_cmp);
    let total: f64 = items.iter().map(|(wj, _)| wj).sum();
    if !(total.abs() >= 1e-300) {
        return Err(Error::DegenerateWeights);
    }
    let mut out = vec![0.0; p];
    for (wj, s) in &items {
        for (o, v) in out.iter_mut().zip(&s[..p]) {
            *o += wj * v;
        }
    }
    // Clamped to the replica range so rounding cannot leave the hull.
    Ok(out
        .into_iter()
        .enumerate()
        .map(|(a, v)| {
            let (lo, hi) = items
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), (_, s)| (l.min(s[a]), h.max(s[a])));
            (v / total).clamp(lo, hi)
        })
        .collect())
}

/// `Σ_{j,α} ((s_α^(j) − θ_α)/θ_α)² + Σ_α ((θ̂_α − θ_α)/θ_α)²`, with the
/// replica terms summed in sorted order.
pub fn inca_loss(stats: &[SummaryVector], theta_hat: &[f64], theta: &[f64]) -> f64 {
    let (a, b) = inca_loss_terms(stats, theta_hat, theta);
    a + b
}

pub fn inca_loss_terms(stats: &[SummaryVector], theta_hat: &[f64], theta: &[f64]) -> (f64, f64) {
    let rel = |v: f64, t: f64| ((v - t) / t).powi(2);
    let mut terms: Vec<f64> = stats
        .iter()
        .map(|s| s.values.iter().zip(theta).map(|(&v, &t)| rel(v, t)).sum::<f64>())
        .collect();
    terms.sort_by(f64::total_cmp);
    let replica = terms.iter().sum();
    let agg = theta_hat.iter().zip(theta).map(|(&v, &t)| rel(v, t)).sum();
    (replica, agg)
}

/// Trained INCA: encoder plus weighting network.
#[derive(Clone, Debug)]
pub struct IncaModel {
    encoder: Encoder,
    weights: ParameterStore,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IncaEstimate {
    pub stats: Vec<SummaryVector>,
    pub weights: Vec<f64>,
    pub theta_hat: Vec<f64>,
}

impl IncaModel {
    pub fn new(weights: &ParameterStore, p: usize) -> Result<Self> {
        Ok(Self {
            encoder: Encoder::new(weights, p)?,
            weights: weights.subset(WEIGHT_PREFIX),
        })
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn weight(&self, s: &SummaryVector) -> Result<f64> {
        weight_fn(s.aux(), &self.weights)
    }

    pub fn estimate(&self, replicas: &[Trajectory]) -> Result<IncaEstimate> {
        let stats = self.encoder.encode_many(replicas)?;
        let weights = stats.iter().map(|s| self.weight(s)).collect::<Result<Vec<_>>>()?;
        let theta_hat = aggregate(&stats, &weights)?;
        Ok(IncaEstimate {
            stats,
            weights,
            theta_hat,
        })
    }
}

struct IncaBatch {
    thetas: Vec<f64>,
    xs: Vec<f64>,
}

fn make_batch(model: &Model, prior: &PriorSpec, cfg: &IncaConfig, step: u64) -> IncaBatch {
    let mut thetas = Vec::with_capacity(cfg.thetas_per_step * cfg.p);
    let mut xs = Vec::with_capacity(cfg.thetas_per_step * cfg.replicas * cfg.n);
    for m in 0..cfg.thetas_per_step as u64 {
        let mut r = train::batch_rng(cfg.seed, step, m);
        // All replicas of a θ must be simulable; otherwise draw a new θ.
        'draw: loop {
            let first = train::draw_realization(model, prior, cfg.n, &mut r);
            let mut reps = vec![first.trajectory.x];
            for _ in 1..cfg.replicas {
                match train::realize(model, &first.theta, prior.x0, cfg.n, &mut r) {
                    Some(real) => reps.push(real.trajectory.x),
                    None => continue 'draw,
                }
            }
            thetas.extend_from_slice(&first.theta);
            for x in reps {
                xs.extend(x);
            }
            break;
        }
    }
    IncaBatch { thetas, xs }
}

/// Minibatch loss graph; returns (loss, replica term, aggregate term).
fn batch_loss(g: &mut Graph, w: &Bound<'_>, batch: &IncaBatch, cfg: &IncaConfig) -> Result<(Var, Var, Var)> {
    let (b, n, p) = (batch.thetas.len() / cfg.p, cfg.replicas, cfg.p);
    let x = g.constant(Tensor::new(&[b, n, cfg.n, 1], batch.xs.clone())?);
    let th = g.constant(Tensor::new(&[b, p], batch.thetas.clone())?);
    let mut rep = Vec::with_capacity(b * n * p);
    for t in batch.thetas.chunks(p) {
        for _ in 0..n {
            rep.extend_from_slice(t);
        }
    }
    let th_rep = g.constant(Tensor::new(&[b, n, p], rep)?);

    let s = encoder::forward(g, w, x, None)?;
    let reg = g.slice_last(s, 0, p)?;
    let wv = replica_weights(g, w, s, p, cfg.q)?;
    let theta_hat = g.weighted_average(reg, wv)?;

    let d = g.sub(reg, th_rep)?;
    let r = g.div(d, th_rep)?;
    let r2 = g.square(r)?;
    let t1 = g.sum(r2)?;
    let norm1 = if cfg.normalize { (n * p) as f64 } else { 1.0 };
    let t1 = g.scale(t1, 1.0 / (b as f64 * norm1))?;

    let d = g.sub(theta_hat, th)?;
    let r = g.div(d, th)?;
    let r2 = g.square(r)?;
    let t2 = g.sum(r2)?;
    let norm2 = if cfg.normalize { p as f64 } else { 1.0 };
    let t2 = g.scale(t2, 1.0 / (b as f64 * norm2))?;
    let loss = g.add(t1, t2)?;
    Ok((loss, t1, t2))
}

/// Train encoder and weighting network from scratch. In the log,
/// `regression` is the replica term and `reconstruction` the aggregate term.
pub fn train_inca(
    model: &Model,
    prior: &PriorSpec,
    cfg: &IncaConfig,
    on_log: &mut dyn FnMut(&LogEntry),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let weights = init_weights(cfg.q, cfg.p, cfg.seed)?;
    let schedule = Schedule {
        steps: cfg.steps,
        lr: cfg.lr,
        seed: cfg.seed,
        log_every: cfg.log_every,
        checkpoint_every: cfg.checkpoint_every,
    };
    train::run(
        weights,
        &schedule,
        |step| make_batch(model, prior, cfg, step),
        |store, batch: &IncaBatch| {
            let mut g = Graph::new();
            let w = Bound::new(store, &mut g, true);
            let (loss, t1, t2) = batch_loss(&mut g, &w, batch, cfg)?;
            let parts = StepLoss {
                total: g.value(loss).item(),
                regression: g.value(t1).item(),
                reconstruction: g.value(t2).item(),
            };
            let vars = w.vars.clone();
            let mut grads = g.backward(loss)?;
            Ok((parts, store.collect(&mut grads, &vars)))
        },
        on_log,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sv(values: &[f64], p: usize) -> SummaryVector {
        SummaryVector {
            values: values.to_vec(),
            p,
        }
    }

    #[test]
    fn equal_weights_average() {
        let stats = [sv(&[1.0, 4.0, 9.0], 2), sv(&[3.0, 2.0, 0.0], 2)];
        assert_eq!(aggregate(&stats, &[0.5, 0.5]).unwrap(), vec![2.0, 3.0]);
    }

    #[test]
    fn one_hot_limit() {
        let stats = [sv(&[1.0, 4.0], 2), sv(&[3.0, 2.0], 2), sv(&[7.0, 7.0], 2)];
        let t = aggregate(&stats, &[1e-12, 1.0 - 1e-12, 1e-12]).unwrap();
        assert!((t[0] - 3.0).abs() < 1e-9 && (t[1] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn loss_examples() {
        let theta = [2.0];
        assert_eq!(inca_loss(&[sv(&[4.0], 1)], &[4.0], &theta), 2.0);
        let stats = [sv(&[2.0, 9.0], 1), sv(&[2.0, -1.0], 1)];
        let th = aggregate(&stats, &[0.2, 0.7]).unwrap();
        assert_eq!(inca_loss(&stats, &th, &theta), 0.0);
    }

    #[test]
    fn zero_network_gives_half() {
        let mut w = init_weights(4, 2, 3).unwrap();
        let names: Vec<String> = w
            .iter()
            .filter(|(n, _)| n.starts_with(WEIGHT_PREFIX))
            .map(|(n, _)| n.to_string())
            .collect();
        for n in names {
            w.get_mut(&n).unwrap().data_mut().fill(0.0);
        }
        assert_eq!(weight_fn(&[3.0, -8.0], &w).unwrap(), 0.5);
    }

    #[test]
    fn table_three_shapes() {
        let w = init_weights(3, 2, 1).unwrap();
        let trace = decoder_shape_trace(&w, 2, 7, 5).unwrap();
        let shapes: Vec<Vec<usize>> = trace.into_iter().map(|(_, s)| s).collect();
        assert_eq!(
            shapes,
            vec![vec![7, 5, 1], vec![7, 5, 3], vec![7, 5, 10], vec![7, 5, 3], vec![7, 5, 1], vec![7, 2]]
        );
        let w = init_weights(3, 3, 1).unwrap();
        assert!(w.iter().all(|(n, _)| n.starts_with(encoder::PREFIX)));
    }
}
