//! Weight initializers.

use rand::Rng;

use crate::tensor::Tensor;

/// Uniform on `[-limit, limit]`.
pub fn uniform<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], limit: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-limit..=limit)).collect();
    Tensor::from_parts(shape.to_vec(), data)
}

/// Glorot/Xavier uniform: limit `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(rng, shape, limit)
}

/// LSTM bias: zeros except the forget-gate block, which is 1.
pub fn lstm_bias(hidden: usize) -> Tensor {
    let mut data = vec![0.0; 4 * hidden];
    data[hidden..2 * hidden].fill(1.0);
    Tensor::from_parts(vec![4 * hidden], data)
}

pub const INIT_SPEC: &str =
    "conv/dense/lstm kernels: glorot-uniform sqrt(6/(fan_in+fan_out)); biases 0; lstm forget-gate bias 1";
