//! Glue shared by the command-line driver and the experiment tests.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use statforge_tensor::ParameterStore;

use crate::config::ModelSection;
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::io;
use crate::models::{BareNoise, ModelId, ThresholdMap, Trajectory};
use crate::rng;
use crate::train::LogEntry;

/// Synthetic observation at the configured parameters.
pub fn observation(m: &ModelSection) -> Result<Trajectory> {
    let model = m.model();
    let noise = BareNoise::draw(m.id, m.n, &mut rng::stream(m.observation_seed, rng::domain::OBS, 0, 0));
    model.simulate(&m.theta, &noise, m.x0, m.n)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Enca,
    Inca,
}

/// Metadata stored in the header of trained weight files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightsMeta {
    pub architecture: Architecture,
    pub model: ModelId,
    pub q: usize,
    pub p: usize,
    /// Training series length.
    pub n: usize,
    pub steps: u64,
    pub seed: u64,
    #[serde(default)]
    pub c_x: Option<f64>,
    /// Weight initialisation scheme.
    #[serde(default)]
    pub init: String,
    /// DYNAMO threshold constants the model was trained with.
    #[serde(default)]
    pub f2: Option<ThresholdMap>,
}

pub const INIT_SPEC: &str = "glorot-uniform conv/dense kernels, zero biases; glorot-uniform LSTM with forget-gate bias 1";

pub fn save_trained(path: &Path, store: &ParameterStore, meta: &WeightsMeta) -> Result<()> {
    io::save_weights(path, store, serde_json::to_value(meta)?)
}

pub fn load_trained(path: &Path) -> Result<(ParameterStore, WeightsMeta)> {
    let (store, header) = io::load_weights(path)?;
    let meta: WeightsMeta = serde_json::from_value(header.meta)
        .map_err(|e| Error::Format(format!("{}: weight metadata: {e}", path.display())))?;
    Ok((store, meta))
}

/// Save only the encoder tensors, for ABC without a decoder.
pub fn save_encoder_only(path: &Path, store: &ParameterStore, meta: &WeightsMeta) -> Result<()> {
    save_trained(path, &store.subset(crate::encoder::PREFIX), meta)
}

/// Encoder of a trained weight file, checked against `model`.
pub fn load_encoder(path: &Path, model: ModelId) -> Result<(Encoder, WeightsMeta)> {
    let (store, meta) = load_trained(path)?;
    if meta.model != model {
        return Err(Error::ModelMismatch(format!(
            "{} was trained on {}, not {model}",
            path.display(),
            meta.model
        )));
    }
    Ok((Encoder::new(&store, meta.p)?, meta))
}

/// Training log as JSON lines.
pub fn write_log<W: Write>(mut w: W, log: &[LogEntry]) -> Result<()> {
    for e in log {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_log<R: BufRead>(r: R) -> Result<Vec<LogEntry>> {
    r.lines()
        .filter(|l| !matches!(l, Ok(s) if s.trim().is_empty()))
        .map(|l| Ok(serde_json::from_str(&l?)?))
        .collect()
}
