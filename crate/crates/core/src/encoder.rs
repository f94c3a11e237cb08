//! Convolutional encoder `s(x)` shared by ENCA and INCA.
//!
//! ```text
//! conv1.1  3 × 16  relu
//! conv1.2  3 × 16  relu
//! maxpool  2
//! conv2.1  3 × 32  relu
//! conv2.2  3 × 32  relu
//! conv3    3 × q   linear (with bias)
//! globpool
//! ```
//!
//! Inputs are raw trajectories `[..., N, 1]`; global pooling makes the
//! weights independent of `N`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statforge_tensor::{init, Activation, Graph, ParameterStore, Tensor, Var};

use crate::error::{Error, Result};
use crate::models::Trajectory;

pub const PREFIX: &str = "enc.";

/// Shortest input that survives the stack: `(N − 4) / 2` must be at least 7.
pub const MIN_LEN: usize = 18;

struct ConvLayer {
    name: &'static str,
    width: usize,
    out: Option<usize>,
    act: Activation,
}

const CONVS: [ConvLayer; 5] = [
    ConvLayer { name: "conv1.1", width: 3, out: Some(16), act: Activation::Relu },
    ConvLayer { name: "conv1.2", width: 3, out: Some(16), act: Activation::Relu },
    ConvLayer { name: "conv2.1", width: 3, out: Some(32), act: Activation::Relu },
    ConvLayer { name: "conv2.2", width: 3, out: Some(32), act: Activation::Relu },
    ConvLayer { name: "conv3", width: 3, out: None, act: Activation::Linear },
];

/// Summary statistics of one trajectory: the first `p` entries regress the
/// parameters, the rest are auxiliary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryVector {
    pub values: Vec<f64>,
    pub p: usize,
}

impl SummaryVector {
    pub fn q(&self) -> usize {
        self.values.len()
    }

    pub fn regressors(&self) -> &[f64] {
        &self.values[..self.p]
    }

    pub fn aux(&self) -> &[f64] {
        &self.values[self.p..]
    }
}

/// Trajectories simulated at one shared parameter vector with independent noise.
#[derive(Clone, Debug)]
pub struct ReplicaSet {
    pub trajectories: Vec<Trajectory>,
    pub theta: Vec<f64>,
}

/// Parameters bound into a graph, addressable by name.
pub(crate) struct Bound<'a> {
    store: &'a ParameterStore,
    pub vars: Vec<Var>,
}

impl<'a> Bound<'a> {
    pub fn new(store: &'a ParameterStore, g: &mut Graph, trainable: bool) -> Self {
        let vars = if trainable { store.bind(g) } else { store.bind_frozen(g) };
        Self { store, vars }
    }

    #[cfg(test)]
    pub fn from_vars(store: &'a ParameterStore, vars: Vec<Var>) -> Self {
        Self { store, vars }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.store
            .index_of(name)
            .map(|i| self.vars[i])
            .ok_or_else(|| Error::ModelMismatch(format!("weights lack `{name}`")))
    }
}

fn kernel_name(layer: &str) -> String {
    format!("{PREFIX}{layer}.kernel")
}

fn bias_name(layer: &str) -> String {
    format!("{PREFIX}{layer}.bias")
}

/// Add freshly initialised encoder weights for `q` statistics.
pub fn init_encoder<R: Rng + ?Sized>(store: &mut ParameterStore, q: usize, rng: &mut R) -> Result<()> {
    let mut c_in = 1;
    for layer in &CONVS {
        let c_out = layer.out.unwrap_or(q);
        let k = init::glorot_uniform(
            rng,
            &[layer.width, c_in, c_out],
            layer.width * c_in,
            layer.width * c_out,
        );
        store.insert(kernel_name(layer.name), k)?;
        store.insert(bias_name(layer.name), Tensor::zeros(&[c_out]))?;
        c_in = c_out;
    }
    Ok(())
}

/// Number of statistics produced by the encoder in `store`.
pub fn output_dim(store: &ParameterStore) -> Result<usize> {
    let k = store.require(&kernel_name("conv3"))?;
    Ok(k.shape()[2])
}

/// Closed-form trainable-scalar count of the encoder for `q` outputs.
pub fn encoder_param_count(q: usize) -> usize {
    let mut c_in = 1;
    let mut total = 0;
    for layer in &CONVS {
        let c_out = layer.out.unwrap_or(q);
        total += layer.width * c_in * c_out + c_out;
        c_in = c_out;
    }
    total
}

/// Exact trainable-scalar count of whatever is stored.
pub fn count_parameters(weights: &ParameterStore) -> usize {
    weights.num_scalars()
}

/// Encoder forward pass on `x: [..., N, 1]`. Each layer output is reported
/// to `trace` when given.
pub(crate) fn forward(
    g: &mut Graph,
    w: &Bound<'_>,
    x: Var,
    mut trace: Option<&mut Vec<(String, Vec<usize>)>>,
) -> Result<Var> {
    let len = g.shape(x).get(g.shape(x).len().wrapping_sub(2)).copied().unwrap_or(0);
    if len < MIN_LEN {
        return Err(Error::Tensor(statforge_tensor::TensorError::Shape {
            op: "encode",
            detail: format!("trajectory length {len} below {MIN_LEN}"),
        }));
    }
    let mut h = x;
    let mut record = |g: &Graph, name: &str, v: Var| {
        if let Some(t) = trace.as_deref_mut() {
            t.push((name.to_string(), g.shape(v).to_vec()));
        }
    };
    for (i, layer) in CONVS.iter().enumerate() {
        let z = g.conv1d_valid(h, w.get(&kernel_name(layer.name))?, Some(w.get(&bias_name(layer.name))?))?;
        h = g.activation(z, layer.act)?;
        record(g, layer.name, h);
        if i == 1 {
            h = g.maxpool1d(h, 2)?;
            record(g, "maxpool", h);
        }
    }
    let s = g.global_avg_pool(h)?;
    record(g, "globpool", s);
    Ok(s)
}

/// Layer-by-layer output shapes for a batch of `batch` trajectories of length `n`.
pub fn shape_trace(weights: &ParameterStore, batch: usize, n: usize) -> Result<Vec<(String, Vec<usize>)>> {
    let mut g = Graph::new();
    let w = Bound::new(weights, &mut g, false);
    let x = g.constant(Tensor::zeros(&[batch, n, 1]));
    let mut trace = vec![("input".to_string(), vec![batch, n, 1])];
    forward(&mut g, &w, x, Some(&mut trace))?;
    Ok(trace)
}

/// Inference-only encoder holding a copy of its weights.
#[derive(Clone, Debug)]
pub struct Encoder {
    weights: ParameterStore,
    q: usize,
    p: usize,
}

impl Encoder {
    /// Keep only the encoder tensors of `weights` (which may contain a decoder).
    pub fn new(weights: &ParameterStore, p: usize) -> Result<Self> {
        let weights = weights.subset(PREFIX);
        let q = output_dim(&weights)?;
        if p > q {
            return Err(Error::ModelMismatch(format!("{p} regressors but only {q} statistics")));
        }
        Ok(Self { weights, q, p })
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn weights(&self) -> &ParameterStore {
        &self.weights
    }

    pub fn encode(&self, x: &Trajectory) -> Result<SummaryVector> {
        let values = self.encode_raw(&[&x.x])?.pop().unwrap_or_default();
        Ok(SummaryVector { values, p: self.p })
    }

    /// Encode equal-length series in one pass; rows keep input order.
    pub fn encode_raw(&self, xs: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        if xs.is_empty() {
            return Ok(Vec::new());
        }
        let n = xs[0].len();
        if xs.iter().any(|x| x.len() != n) {
            return Err(Error::InvalidParameter("trajectories differ in length".into()));
        }
        let mut data = Vec::with_capacity(xs.len() * n);
        for x in xs {
            data.extend_from_slice(x);
        }
        let mut g = Graph::new();
        let w = Bound::new(&self.weights, &mut g, false);
        let input = g.constant(Tensor::new(&[xs.len(), n, 1], data)?);
        let s = forward(&mut g, &w, input, None)?;
        Ok(g.value(s).data().chunks(self.q).map(<[f64]>::to_vec).collect())
    }

    /// Encode many trajectories in parallel chunks; output order matches input.
    pub fn encode_many(&self, xs: &[Trajectory]) -> Result<Vec<SummaryVector>> {
        let chunks: Vec<Result<Vec<Vec<f64>>>> = xs
            .par_chunks(32)
            .map(|c| {
                let refs: Vec<&[f64]> = c.iter().map(|t| t.x.as_slice()).collect();
                self.encode_raw(&refs)
            })
            .collect();
        let mut out = Vec::with_capacity(xs.len());
        for c in chunks {
            out.extend(c?.into_iter().map(|values| SummaryVector { values, p: self.p }));
        }
        Ok(out)
    }

    /// Encode every replica independently, preserving order.
    pub fn encode_replicas(&self, rs: &ReplicaSet) -> Result<Vec<SummaryVector>> {
        rs.trajectories.iter().map(|t| self.encode(t)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn weights(q: usize) -> ParameterStore {
        let mut s = ParameterStore::new();
        init_encoder(&mut s, q, &mut rng::seeded(3)).unwrap();
        s
    }

    #[test]
    fn table_shapes_at_200() {
        let trace = shape_trace(&weights(3), 7, 200).unwrap();
        let shapes: Vec<Vec<usize>> = trace.into_iter().map(|(_, s)| s).collect();
        assert_eq!(
            shapes,
            vec![
                vec![7, 200, 1],
                vec![7, 198, 16],
                vec![7, 196, 16],
                vec![7, 98, 16],
                vec![7, 96, 32],
                vec![7, 94, 32],
                vec![7, 92, 3],
                vec![7, 3],
            ]
        );
    }

    #[test]
    fn zero_weights_give_zero_statistics() {
        let mut w = weights(4);
        let names: Vec<String> = w.iter().map(|(n, _)| n.to_string()).collect();
        for n in names {
            w.get_mut(&n).unwrap().data_mut().fill(0.0);
        }
        let enc = Encoder::new(&w, 2).unwrap();
        let s = enc.encode(&Trajectory::new(vec![0.3; 50], 0.25)).unwrap();
        assert_eq!(s.values, vec![0.0; 4]);
    }

    #[test]
    fn counts() {
        let w = weights(3);
        assert_eq!(count_parameters(&w), encoder_param_count(3));
        assert_eq!(encoder_param_count(4) - encoder_param_count(3), 3 * 32 + 1);
    }

    #[test]
    fn short_input_rejected() {
        let enc = Encoder::new(&weights(3), 2).unwrap();
        assert!(enc.encode(&Trajectory::new(vec![0.1; 17], 0.0)).is_err());
        assert!(enc.encode(&Trajectory::new(vec![0.1; 18], 0.0)).is_ok());
    }

    #[test]
    fn batch_matches_single() {
        let enc = Encoder::new(&weights(3), 2).unwrap();
        let a: Vec<f64> = (0..40).map(|i| (i as f64 * 0.3).sin()).collect();
        let b: Vec<f64> = (0..40).map(|i| (i as f64 * 0.7).cos()).collect();
        let both = enc.encode_raw(&[&a, &b]).unwrap();
        assert_eq!(both[1], enc.encode_raw(&[&b]).unwrap()[0]);
        assert_eq!(both[0], enc.encode_raw(&[&a]).unwrap()[0]);
    }
}
