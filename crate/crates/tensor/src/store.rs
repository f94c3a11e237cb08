//! Named trainable tensors with Adam state.

use crate::error::{shape_err, Result, TensorError};
use crate::graph::{Gradients, Graph, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Entry {
    name: String,
    value: Tensor,
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Ordered collection of named parameters. Insertion order is the
/// serialization order and the order of [`ParameterStore::bind`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterStore {
    entries: Vec<Entry>,
    step: u64,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.index_of(&name).is_some() {
            return Err(TensorError::Graph(format!("duplicate parameter `{name}`")));
        }
        let n = value.len();
        self.entries.push(Entry {
            name,
            value,
            m: vec![0.0; n],
            v: vec![0.0; n],
        });
        Ok(())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|e| e.name == name).map(|e| &e.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.iter_mut().find(|e| e.name == name).map(|e| &mut e.value)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name).ok_or_else(|| TensorError::UnknownParameter(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|e| (e.name.as_str(), &e.value))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of trainable scalars.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// Number of Adam updates applied so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    /// Copy of the parameters restricted to names with the given prefix.
    pub fn subset(&self, prefix: &str) -> ParameterStore {
        ParameterStore {
            entries: self
                .entries
                .iter()
                .filter(|e| e.name.starts_with(prefix))
                .cloned()
                .collect(),
            step: self.step,
        }
    }

    /// Register every parameter as a differentiable leaf, in store order.
    pub fn bind(&self, graph: &mut Graph) -> Vec<Var> {
        self.entries.iter().map(|e| graph.parameter(e.value.clone())).collect()
    }

    /// Register every parameter as a constant leaf (inference only).
    pub fn bind_frozen(&self, graph: &mut Graph) -> Vec<Var> {
        self.entries.iter().map(|e| graph.constant(e.value.clone())).collect()
    }

    /// Pull the gradient for each bound parameter; missing ones are zero.
    pub fn collect(&self, grads: &mut Gradients, vars: &[Var]) -> Vec<Tensor> {
        self.entries
            .iter()
            .zip(vars)
            .map(|(e, &v)| grads.take(v).unwrap_or_else(|| Tensor::zeros(e.value.shape())))
            .collect()
    }

    pub fn zero_grads(&self) -> Vec<Tensor> {
        self.entries.iter().map(|e| Tensor::zeros(e.value.shape())).collect()
    }

    /// One bias-corrected Adam update.
    pub fn adam_step(&mut self, grads: &[Tensor], cfg: &AdamConfig) -> Result<()> {
        if grads.len() != self.entries.len() {
            return Err(shape_err(
                "adam_step",
                format!("{} gradients for {} parameters", grads.len(), self.entries.len()),
            ));
        }
        for (e, g) in self.entries.iter().zip(grads) {
            if e.value.shape() != g.shape() {
                return Err(shape_err(
                    "adam_step",
                    format!("`{}`: {:?} vs {:?}", e.name, e.value.shape(), g.shape()),
                ));
            }
            if !g.is_finite() {
                return Err(TensorError::TrainingDiverged { name: e.name.clone() });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for (e, g) in self.entries.iter_mut().zip(grads) {
            let w = e.value.data_mut();
            for i in 0..w.len() {
                let gi = g.data()[i];
                e.m[i] = cfg.beta1 * e.m[i] + (1.0 - cfg.beta1) * gi;
                e.v[i] = cfg.beta2 * e.v[i] + (1.0 - cfg.beta2) * gi * gi;
                let m_hat = e.m[i] / c1;
                let v_hat = e.v[i] / c2;
                w[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }
}
