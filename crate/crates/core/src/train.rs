//! Shared training loop: on-the-fly minibatch simulation on a producer
//! thread feeding a single-threaded Adam optimiser.

use std::sync::mpsc;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statforge_tensor::{AdamConfig, ParameterStore, Tensor, TensorError};

use crate::error::{Error, Result};
use crate::models::{sample_prior, BareNoise, Model, PriorSpec, Trajectory};
use crate::rng;

/// Minibatches simulated ahead of the optimiser.
pub const QUEUE_DEPTH: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: u64,
    /// Mean total loss over the steps since the previous entry.
    pub loss: f64,
    pub regression: f64,
    pub reconstruction: f64,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub steps: u64,
    pub lr: f64,
    pub seed: u64,
    pub log_every: u64,
    pub checkpoint_every: u64,
}

/// Loss of one optimiser step split into its two terms.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct StepLoss {
    pub total: f64,
    pub regression: f64,
    pub reconstruction: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub weights: ParameterStore,
    pub log: Vec<LogEntry>,
    /// Loss after every step.
    pub losses: Vec<f64>,
}

/// One realisation with the noise that produced it.
#[derive(Clone, Debug)]
pub struct Realization {
    pub theta: Vec<f64>,
    pub noise: BareNoise,
    pub trajectory: Trajectory,
}

/// Draw θ from the prior and simulate; prior draws whose trajectory
/// escapes are replaced by fresh draws.
pub fn draw_realization<R: Rng + ?Sized>(model: &Model, prior: &PriorSpec, n: usize, rng: &mut R) -> Realization {
    loop {
        let theta = sample_prior(prior, rng);
        if let Some(r) = realize(model, &theta, prior.x0, n, rng) {
            return r;
        }
    }
}

/// Simulate at a fixed θ with fresh noise; `None` if the run diverged.
pub fn realize<R: Rng + ?Sized>(model: &Model, theta: &[f64], x0: f64, n: usize, rng: &mut R) -> Option<Realization> {
    let noise = BareNoise::draw(model.id, n, rng);
    match model.simulate(theta, &noise, x0, n) {
        Ok(trajectory) => Some(Realization {
            theta: theta.to_vec(),
            noise,
            trajectory,
        }),
        Err(_) => None,
    }
}

/// Run `schedule.steps` Adam updates. `make_batch(step)` must be a pure
/// function of the step index so that results do not depend on how far
/// the producer runs ahead. `eval` returns the loss and gradients.
pub(crate) fn run<B, M, E>(
    weights: ParameterStore,
    schedule: &Schedule,
    make_batch: M,
    mut eval: E,
    on_log: &mut dyn FnMut(&LogEntry),
) -> Result<TrainOutcome>
where
    B: Send,
    M: Fn(u64) -> B + Sync,
    E: FnMut(&ParameterStore, &B) -> Result<(StepLoss, Vec<Tensor>)>,
{
    let adam = AdamConfig {
        lr: schedule.lr,
        ..AdamConfig::default()
    };
    let start = Instant::now();
    let mut store = weights;
    let mut checkpoint = store.clone();
    let mut log = Vec::new();
    let mut losses = Vec::with_capacity(schedule.steps as usize);
    let mut window = StepLoss::default();
    let mut window_len = 0u64;

    std::thread::scope(|scope| -> Result<()> {
        let (tx, rx) = mpsc::sync_channel::<B>(QUEUE_DEPTH);
        let make_batch = &make_batch;
        let steps = schedule.steps;
        scope.spawn(move || {
            for step in 0..steps {
                if tx.send(make_batch(step)).is_err() {
                    break;
                }
            }
        });
        for step in 0..schedule.steps {
            let batch = rx
                .recv()
                .map_err(|_| Error::Format("minibatch producer stopped".into()))?;
            let diverged = |source: TensorError, checkpoint: &ParameterStore| Error::TrainingDiverged {
                step,
                source,
                checkpoint: Box::new(checkpoint.clone()),
            };
            let (loss, grads) = match eval(&store, &batch) {
                Ok(v) => v,
                Err(Error::Tensor(e)) => return Err(diverged(e, &checkpoint)),
                Err(e) => return Err(e),
            };
            if !loss.total.is_finite() {
                return Err(diverged(TensorError::NonFinite { op: "loss" }, &checkpoint));
            }
            store.adam_step(&grads, &adam).map_err(|e| diverged(e, &checkpoint))?;
            losses.push(loss.total);
            window.total += loss.total;
            window.regression += loss.regression;
            window.reconstruction += loss.reconstruction;
            window_len += 1;
            let done = step + 1;
            if done % schedule.log_every.max(1) == 0 || done == schedule.steps {
                let k = window_len as f64;
                let entry = LogEntry {
                    step: done,
                    loss: window.total / k,
                    regression: window.regression / k,
                    reconstruction: window.reconstruction / k,
                    wall_seconds: start.elapsed().as_secs_f64(),
                };
                on_log(&entry);
                log.push(entry);
                window = StepLoss::default();
                window_len = 0;
            }
            if schedule.checkpoint_every > 0 && done % schedule.checkpoint_every == 0 {
                checkpoint = store.clone();
            }
        }
        Ok(())
    })?;

    Ok(TrainOutcome {
        weights: store,
        log,
        losses,
    })
}

/// Per-step generator for minibatch member `member` of step `step`.
pub(crate) fn batch_rng(seed: u64, step: u64, member: u64) -> rng::Rng {
    rng::stream(seed, rng::domain::TRAIN, step, member)
}

/// Mean of `v[a..b]`.
pub fn window_mean(v: &[f64], a: usize, b: usize) -> f64 {
    v[a..b].iter().sum::<f64>() / (b - a) as f64
}
