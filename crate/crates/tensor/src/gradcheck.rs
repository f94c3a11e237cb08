//! Central finite-difference gradient checking.
//!
//! Numerical derivatives are obtained from forward evaluations only, so the
//! check is independent of the reverse sweep it validates.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Largest error over all checked entries (relative, or absolute for
    /// entries whose magnitude is below the floor).
    pub max_error: f64,
    /// `(input index, flat entry index)` of the worst entry.
    pub worst: (usize, usize),
    pub checked: usize,
}

/// Compare reverse-mode gradients of the scalar built by `f` against central
/// differences with step `h`. Entries where both derivatives are below
/// `floor` in magnitude are compared absolutely.
pub fn check_gradients<F>(inputs: &[Tensor], h: f64, floor: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.parameter(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    let mut grads = g.backward(loss)?;
    let analytic: Vec<Tensor> = inputs
        .iter()
        .zip(&vars)
        .map(|(t, &v)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut report = GradCheckReport {
        max_error: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for i in 0..inputs.len() {
        for k in 0..inputs[i].len() {
            let orig = inputs[i].data()[k];
            work[i].data_mut()[k] = orig + h;
            let up = eval(&work)?;
            work[i].data_mut()[k] = orig - h;
            let down = eval(&work)?;
            work[i].data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[i].data()[k];
            let scale = a.abs().max(numeric.abs());
            let err = if scale < floor {
                (a - numeric).abs()
            } else {
                (a - numeric).abs() / scale
            };
            if err > report.max_error {
                report.max_error = err;
                report.worst = (i, k);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
