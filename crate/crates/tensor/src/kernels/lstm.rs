//! Single-direction LSTM over a batch of sequences with zero initial state.
//!
//! Gate blocks inside the `4·hidden` axis are ordered input, forget,
//! candidate, output. Sequences are `[batch, len, channels]` row-major; each
//! time step advances the whole batch with one matrix product.

use super::activation::sigmoid;
use super::{gemm, View};

pub struct LstmWeights<'a> {
    pub w_ih: &'a [f64],
    pub w_hh: &'a [f64],
    pub bias: &'a [f64],
    pub c_in: usize,
    pub hidden: usize,
}

/// Activated gates `[batch, len, 4H]` and cell states `[batch, len, H]`.
#[derive(Clone, Debug, Default)]
pub struct LstmCache {
    pub gates: Vec<f64>,
    pub cells: Vec<f64>,
}

fn order(len: usize, reverse: bool) -> impl DoubleEndedIterator<Item = usize> + Clone {
    (0..len).map(move |i| if reverse { len - 1 - i } else { i })
}

pub fn lstm_forward(
    x: &[f64],
    batch: usize,
    len: usize,
    w: &LstmWeights<'_>,
    reverse: bool,
    h_out: &mut [f64],
) -> LstmCache {
    let h = w.hidden;
    let g4 = 4 * h;
    let rows = batch * len;
    let mut gates = vec![0.0; rows * g4];
    let mut cells = vec![0.0; rows * h];
    for r in 0..rows {
        gates[r * g4..(r + 1) * g4].copy_from_slice(w.bias);
    }
    gemm(rows, w.c_in, g4, x, View::rows(w.c_in), w.w_ih, View::rows(g4), 1.0, &mut gates, View::rows(g4));

    let mut prev: Option<usize> = None;
    for t in order(len, reverse) {
        if let Some(p) = prev {
            gemm(
                batch,
                h,
                g4,
                h_out,
                View { off: p * h, rs: len * h, cs: 1 },
                w.w_hh,
                View::rows(g4),
                1.0,
                &mut gates,
                View { off: t * g4, rs: len * g4, cs: 1 },
            );
        }
        for b in 0..batch {
            let r = b * len + t;
            let z = &mut gates[r * g4..(r + 1) * g4];
            for k in 0..h {
                let i = sigmoid(z[k]);
                let f = sigmoid(z[h + k]);
                let g = z[2 * h + k].tanh();
                let o = sigmoid(z[3 * h + k]);
                let c_prev = prev.map_or(0.0, |p| cells[(b * len + p) * h + k]);
                let c = f * c_prev + i * g;
                z[k] = i;
                z[h + k] = f;
                z[2 * h + k] = g;
                z[3 * h + k] = o;
                cells[r * h + k] = c;
                h_out[r * h + k] = o * c.tanh();
            }
        }
        prev = Some(t);
    }
    LstmCache { gates, cells }
}

pub struct LstmGrads<'a> {
    pub dx: Option<&'a mut [f64]>,
    pub dw_ih: Option<&'a mut [f64]>,
    pub dw_hh: Option<&'a mut [f64]>,
    pub dbias: Option<&'a mut [f64]>,
}

/// Backpropagation through time for [`lstm_forward`]; accumulates into `grads`.
#[allow(clippy::too_many_arguments)]
pub fn lstm_backward(
    x: &[f64],
    batch: usize,
    len: usize,
    w: &LstmWeights<'_>,
    reverse: bool,
    h_out: &[f64],
    cache: &LstmCache,
    dout: &[f64],
    grads: &mut LstmGrads<'_>,
) {
    let h = w.hidden;
    let g4 = 4 * h;
    let rows = batch * len;
    let mut dz = vec![0.0; rows * g4];
    let mut dh_next = vec![0.0; batch * h];
    let mut dc_next = vec![0.0; batch * h];
    let steps: Vec<usize> = order(len, reverse).collect();
    for (pos, &t) in steps.iter().enumerate().rev() {
        let prev = if pos == 0 { None } else { Some(steps[pos - 1]) };
        for b in 0..batch {
            let r = b * len + t;
            let gates = &cache.gates[r * g4..(r + 1) * g4];
            let d = &mut dz[r * g4..(r + 1) * g4];
            for k in 0..h {
                let (i, f, g, o) = (gates[k], gates[h + k], gates[2 * h + k], gates[3 * h + k]);
                let c = cache.cells[r * h + k];
                let c_prev = prev.map_or(0.0, |p| cache.cells[(b * len + p) * h + k]);
                let tc = c.tanh();
                let dh = dout[r * h + k] + dh_next[b * h + k];
                let dc = dc_next[b * h + k] + dh * o * (1.0 - tc * tc);
                d[k] = dc * g * i * (1.0 - i);
                d[h + k] = dc * c_prev * f * (1.0 - f);
                d[2 * h + k] = dc * i * (1.0 - g * g);
                d[3 * h + k] = dh * tc * o * (1.0 - o);
                dc_next[b * h + k] = dc * f;
            }
        }
        let Some(p) = prev else { break };
        let dz_t = View { off: t * g4, rs: len * g4, cs: 1 };
        gemm(batch, g4, h, &dz, dz_t, w.w_hh, View::cols(g4), 0.0, &mut dh_next, View::rows(h));
        if let Some(dw) = grads.dw_hh.as_deref_mut() {
            let h_prev_t = View { off: p * h, rs: 1, cs: len * h };
            gemm(h, batch, g4, h_out, h_prev_t, &dz, dz_t, 1.0, dw, View::rows(g4));
        }
    }
    if let Some(db) = grads.dbias.as_deref_mut() {
        for row in dz.chunks_exact(g4) {
            for (d, v) in db.iter_mut().zip(row) {
                *d += v;
            }
        }
    }
    if let Some(dw) = grads.dw_ih.as_deref_mut() {
        gemm(w.c_in, rows, g4, x, View::cols(w.c_in), &dz, View::rows(g4), 1.0, dw, View::rows(g4));
    }
    if let Some(dx) = grads.dx.as_deref_mut() {
        gemm(rows, g4, w.c_in, &dz, View::rows(g4), w.w_ih, View::cols(g4), 1.0, dx, View::rows(w.c_in));
    }
}
