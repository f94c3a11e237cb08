//! Posterior sample sets shared by the samplers and diagnostics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::ModelId;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub names: Vec<String>,
    /// Row-major draws, one parameter vector per row.
    pub draws: Vec<Vec<f64>>,
    pub method: String,
}

impl SampleSet {
    pub fn new(names: Vec<String>, draws: Vec<Vec<f64>>, method: impl Into<String>) -> Result<Self> {
        if draws.is_empty() {
            return Err(Error::EmptySample);
        }
        if draws.iter().any(|d| d.len() != names.len()) {
            return Err(Error::Format(format!("draws must have {} components", names.len())));
        }
        Ok(Self {
            names,
            draws,
            method: method.into(),
        })
    }

    pub fn for_model(model: ModelId, draws: Vec<Vec<f64>>, method: impl Into<String>) -> Result<Self> {
        let names = model.param_names().iter().map(|s| s.to_string()).collect();
        Self::new(names, draws, method)
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.draws.iter().map(|d| d[j]).collect()
    }

    pub fn mean(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|j| self.draws.iter().map(|d| d[j]).sum::<f64>() / self.len() as f64)
            .collect()
    }

    /// Sample standard deviation per component.
    pub fn sd(&self) -> Vec<f64> {
        let m = self.mean();
        let n = self.len() as f64;
        (0..self.dim())
            .map(|j| {
                let ss: f64 = self.draws.iter().map(|d| (d[j] - m[j]).powi(2)).sum();
                (ss / (n - 1.0).max(1.0)).sqrt()
            })
            .collect()
    }
}
