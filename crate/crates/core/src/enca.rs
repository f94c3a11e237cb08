//! Explicit noise-conditional autoencoder.
//!
//! The decoder sees the summary vector tiled over time next to the bare
//! noise that generated each step and reconstructs the trajectory:
//!
//! ```text
//! tile(s) ⧺ noise   [N, q + c]
//! Bi-LSTM 16        [N, 32]
//! Bi-LSTM 16        [N, 32]
//! dense 1, linear   [N, 1]
//! ```
//!
//! Output step `i` (target `x_{i+1}`) is fed noise row `i`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statforge_tensor::{init, Activation, Graph, LstmVars, ParameterStore, Tensor, Var};

use crate::encoder::{self, Bound, Encoder};
use crate::error::{Error, Result};
use crate::models::{BareNoise, Model, ModelId, PriorSpec, Trajectory};
use crate::rng;
use crate::train::{self, LogEntry, Realization, Schedule, StepLoss, TrainOutcome};

pub const DECODER_PREFIX: &str = "dec.";
pub const LSTM_UNITS: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncaConfig {
    pub q: usize,
    pub p: usize,
    /// Trajectory length used in training.
    pub n: usize,
    pub minibatch: usize,
    pub steps: u64,
    pub lr: f64,
    pub seed: u64,
    /// Reconstruction denominator floor; estimated from pilot runs when unset.
    pub c_x: Option<f64>,
    pub pilot_runs: usize,
    pub log_every: u64,
    pub checkpoint_every: u64,
}

impl EncaConfig {
    pub fn default_for(model: ModelId) -> Self {
        Self {
            q: model.n_params() + 1,
            p: model.n_params(),
            n: 200,
            minibatch: match model {
                ModelId::Nlar1 => 300,
                ModelId::Dynamo => 100,
            },
            steps: 20_000,
            lr: 1e-3,
            seed: 0,
            c_x: None,
            pilot_runs: 10_000,
            log_every: 100,
            checkpoint_every: 10_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p > self.q || self.p == 0 {
            return Err(Error::Config(format!("need 0 < p ≤ q, got p={} q={}", self.p, self.q)));
        }
        if self.minibatch == 0 || !(self.lr > 0.0) {
            return Err(Error::Config("minibatch must be ≥ 1 and lr > 0".into()));
        }
        if self.n < encoder::MIN_LEN {
            return Err(Error::Config(format!("trajectory length must be ≥ {}", encoder::MIN_LEN)));
        }
        Ok(())
    }
}

fn lstm_names(layer: &str, dir: &str) -> [String; 3] {
    ["w_ih", "w_hh", "bias"].map(|t| format!("{DECODER_PREFIX}{layer}.{dir}.{t}"))
}

fn init_lstm<R: Rng + ?Sized>(store: &mut ParameterStore, layer: &str, c_in: usize, rng: &mut R) -> Result<()> {
    let h = LSTM_UNITS;
    for dir in ["fwd", "bwd"] {
        let [wi, wh, b] = lstm_names(layer, dir);
        store.insert(wi, init::glorot_uniform(rng, &[c_in, 4 * h], c_in, 4 * h))?;
        store.insert(wh, init::glorot_uniform(rng, &[h, 4 * h], h, 4 * h))?;
        store.insert(b, init::lstm_bias(h))?;
    }
    Ok(())
}

/// Fresh encoder and decoder weights.
pub fn init_weights(q: usize, channels: usize, seed: u64) -> Result<ParameterStore> {
    let mut rng = rng::stream(seed, rng::domain::INIT, 0, 0);
    let mut store = ParameterStore::new();
    encoder::init_encoder(&mut store, q, &mut rng)?;
    init_lstm(&mut store, "bilstm1", q + channels, &mut rng)?;
    init_lstm(&mut store, "bilstm2", 2 * LSTM_UNITS, &mut rng)?;
    store.insert(
        format!("{DECODER_PREFIX}dense.kernel"),
        init::glorot_uniform(&mut rng, &[2 * LSTM_UNITS, 1], 2 * LSTM_UNITS, 1),
    )?;
    store.insert(format!("{DECODER_PREFIX}dense.bias"), Tensor::zeros(&[1]))?;
    Ok(store)
}

/// Noise channels expected by the decoder in `weights`.
pub fn decoder_noise_channels(weights: &ParameterStore) -> Result<usize> {
    let [wi, _, _] = lstm_names("bilstm1", "fwd");
    let c_in = weights.require(&wi)?.shape()[0];
    let q = encoder::output_dim(weights)?;
    c_in.checked_sub(q)
        .ok_or_else(|| Error::ModelMismatch(format!("decoder input {c_in} smaller than q={q}")))
}

fn lstm_vars(w: &Bound<'_>, layer: &str, dir: &str) -> Result<LstmVars> {
    let [wi, wh, b] = lstm_names(layer, dir);
    Ok(LstmVars {
        w_ih: w.get(&wi)?,
        w_hh: w.get(&wh)?,
        bias: w.get(&b)?,
    })
}

/// Decoder forward on `s: [..., q]` and `noise: [..., N, c]` → `[..., N, 1]`.
pub(crate) fn decode_graph(
    g: &mut Graph,
    w: &Bound<'_>,
    s: Var,
    noise: Var,
    mut trace: Option<&mut Vec<(String, Vec<usize>)>>,
) -> Result<Var> {
    let ns = g.shape(noise).to_vec();
    if ns.len() < 2 {
        return Err(Error::InvalidParameter(format!("noise shape {ns:?}")));
    }
    let n = ns[ns.len() - 2];
    let mut record = |g: &Graph, name: &str, v: Var| {
        if let Some(t) = trace.as_deref_mut() {
            t.push((name.to_string(), g.shape(v).to_vec()));
        }
    };
    let tiled = g.tile(s, n)?;
    let h = g.concat_last(tiled, noise)?;
    record(g, "concat", h);
    let h = g.bilstm(h, lstm_vars(w, "bilstm1", "fwd")?, lstm_vars(w, "bilstm1", "bwd")?)?;
    record(g, "bilstm1", h);
    let h = g.bilstm(h, lstm_vars(w, "bilstm2", "fwd")?, lstm_vars(w, "bilstm2", "bwd")?)?;
    record(g, "bilstm2", h);
    let out = g.dense(
        h,
        w.get(&format!("{DECODER_PREFIX}dense.kernel"))?,
        Some(w.get(&format!("{DECODER_PREFIX}dense.bias"))?),
        Activation::Linear,
    )?;
    record(g, "dense", out);
    Ok(out)
}

/// Decoder layer shapes for a batch of `batch` series of length `n`.
pub fn decoder_shape_trace(
    weights: &ParameterStore,
    batch: usize,
    n: usize,
    channels: usize,
) -> Result<Vec<(String, Vec<usize>)>> {
    let q = encoder::output_dim(weights)?;
    let mut g = Graph::new();
    let w = Bound::new(weights, &mut g, false);
    let s = g.constant(Tensor::zeros(&[batch, q]));
    let noise = g.constant(Tensor::zeros(&[batch, n, channels]));
    let mut trace = Vec::new();
    decode_graph(&mut g, &w, s, noise, Some(&mut trace))?;
    Ok(trace)
}

fn noise_tensor(noise: &BareNoise) -> Result<Tensor> {
    Ok(Tensor::new(&[noise.len(), noise.channels()], noise.data().to_vec())?)
}

/// Reconstruct a trajectory from statistics `s` and its bare noise.
pub fn enca_decode(s: &[f64], noise: &BareNoise, weights: &ParameterStore) -> Result<Vec<f64>> {
    let q = encoder::output_dim(weights)?;
    if s.len() != q {
        return Err(Error::ModelMismatch(format!("{} statistics for a q={q} decoder", s.len())));
    }
    let mut g = Graph::new();
    let w = Bound::new(weights, &mut g, false);
    let sv = g.constant(Tensor::vector(s.to_vec()));
    let nv = g.constant(noise_tensor(noise)?);
    let out = decode_graph(&mut g, &w, sv, nv, None)?;
    Ok(g.value(out).data().to_vec())
}

/// Encode then decode with the trajectory's own noise.
pub fn reconstruct(x: &Trajectory, noise: &BareNoise, weights: &ParameterStore, p: usize) -> Result<Vec<f64>> {
    let s = Encoder::new(weights, p)?.encode(x)?;
    enca_decode(&s.values, noise, weights)
}

/// `(1/p) Σ ((s_α − θ_α)/θ_α)² + (1/N) Σ ((x̂_i − x_i)/max(|x_i|, c_x))²`.
pub fn enca_loss(s: &[f64], theta: &[f64], x_hat: &[f64], x: &[f64], c_x: f64) -> f64 {
    let (reg, rec) = enca_loss_terms(s, theta, x_hat, x, c_x);
    reg + rec
}

pub fn enca_loss_terms(s: &[f64], theta: &[f64], x_hat: &[f64], x: &[f64], c_x: f64) -> (f64, f64) {
    let p = theta.len();
    let reg = s[..p]
        .iter()
        .zip(theta)
        .map(|(si, ti)| ((si - ti) / ti).powi(2))
        .sum::<f64>()
        / p as f64;
    let rec = x_hat
        .iter()
        .zip(x)
        .map(|(xh, xi)| ((xh - xi) / xi.abs().max(c_x)).powi(2))
        .sum::<f64>()
        / x.len() as f64;
    (reg, rec)
}

/// `0.05 ·` standard deviation of `|x|` over `runs` prior-predictive trajectories.
pub fn reconstruction_floor(model: &Model, prior: &PriorSpec, n: usize, runs: usize, seed: u64) -> f64 {
    let mut count = 0.0;
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for i in 0..runs as u64 {
        let mut r = rng::stream(seed, rng::domain::PILOT, i, 0);
        let real = train::draw_realization(model, prior, n, &mut r);
        for &v in &real.trajectory.x {
            let a = v.abs();
            count += 1.0;
            let d = a - mean;
            mean += d / count;
            m2 += d * (a - mean);
        }
    }
    0.05 * (m2 / (count - 1.0)).sqrt()
}

/// Minibatch of realisations in graph-ready layout.
pub(crate) struct EncaBatch {
    members: Vec<Realization>,
}

fn make_batch(model: &Model, prior: &PriorSpec, cfg: &EncaConfig, step: u64) -> EncaBatch {
    let members = (0..cfg.minibatch as u64)
        .map(|m| train::draw_realization(model, prior, cfg.n, &mut train::batch_rng(cfg.seed, step, m)))
        .collect();
    EncaBatch { members }
}

/// Minibatch loss graph; returns the loss var and its two terms.
pub(crate) fn batch_loss(
    g: &mut Graph,
    w: &Bound<'_>,
    members: &[&Realization],
    p: usize,
    c_x: f64,
) -> Result<(Var, Var, Var)> {
    let b = members.len();
    let n = members[0].trajectory.len();
    let c = members[0].noise.channels();
    let mut xs = Vec::with_capacity(b * n);
    let mut dens = Vec::with_capacity(b * n);
    let mut noise = Vec::with_capacity(b * n * c);
    let mut thetas = Vec::with_capacity(b * p);
    for m in members {
        xs.extend_from_slice(&m.trajectory.x);
        dens.extend(m.trajectory.x.iter().map(|v| v.abs().max(c_x)));
        noise.extend_from_slice(&m.noise.data()[..n * c]);
        thetas.extend_from_slice(&m.theta);
    }
    let x = g.constant(Tensor::new(&[b, n, 1], xs)?);
    let den = g.constant(Tensor::new(&[b, n, 1], dens)?);
    let nv = g.constant(Tensor::new(&[b, n, c], noise)?);
    let th = g.constant(Tensor::new(&[b, p], thetas)?);

    let s = encoder::forward(g, w, x, None)?;
    let reg = g.slice_last(s, 0, p)?;
    let d = g.sub(reg, th)?;
    let r = g.div(d, th)?;
    let r2 = g.square(r)?;
    let reg_term = g.mean(r2)?;

    let x_hat = decode_graph(g, w, s, nv, None)?;
    let e = g.sub(x_hat, x)?;
    let e = g.div(e, den)?;
    let e2 = g.square(e)?;
    let rec_term = g.mean(e2)?;
    let loss = g.add(reg_term, rec_term)?;
    Ok((loss, reg_term, rec_term))
}

/// Train encoder and decoder jointly from scratch.
pub fn train_enca(
    model: &Model,
    prior: &PriorSpec,
    cfg: &EncaConfig,
    on_log: &mut dyn FnMut(&LogEntry),
) -> Result<(TrainOutcome, f64)> {
    cfg.validate()?;
    let c_x = match cfg.c_x {
        Some(c) => c,
        None => reconstruction_floor(model, prior, cfg.n, cfg.pilot_runs, cfg.seed),
    };
    let weights = init_weights(cfg.q, model.id.noise_channels(), cfg.seed)?;
    let outcome = train_enca_from(model, prior, cfg, weights, c_x, on_log)?;
    Ok((outcome, c_x))
}

/// Continue training from given weights.
pub fn train_enca_from(
    model: &Model,
    prior: &PriorSpec,
    cfg: &EncaConfig,
    weights: ParameterStore,
    c_x: f64,
    on_log: &mut dyn FnMut(&LogEntry),
) -> Result<TrainOutcome> {
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
        |store, batch: &EncaBatch| {
            let mut g = Graph::new();
            let w = Bound::new(store, &mut g, true);
            let refs: Vec<&Realization> = batch.members.iter().collect();
            let (loss, reg, rec) = batch_loss(&mut g, &w, &refs, cfg.p, c_x)?;
            let parts = StepLoss {
                total: g.value(loss).item(),
                regression: g.value(reg).item(),
                reconstruction: g.value(rec).item(),
            };
            let vars = w.vars.clone();
            let mut grads = g.backward(loss)?;
            Ok((parts, store.collect(&mut grads, &vars)))
        },
        on_log,
    )
}
