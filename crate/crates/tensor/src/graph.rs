//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation as a node holding its forward value.
//! Nodes only ever reference earlier nodes, so the tape order is a valid
//! topological order and [`Graph::backward`] is a single reverse sweep.

use crate::error::{shape_err, Result, TensorError};
use crate::kernels::activation::Activation;
use crate::kernels::conv::{conv1d_backward, conv1d_forward};
use crate::kernels::lstm::{lstm_backward, lstm_forward, LstmCache, LstmGrads, LstmWeights};
use crate::kernels::pool::{global_avg_forward, maxpool_forward};
use crate::kernels::{matmul_acc, matmul_backward};
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Handles for one direction of an LSTM layer.
#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub w_ih: Var,
    pub w_hh: Var,
    pub bias: Var,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv1d {
        x: Var,
        kernel: Var,
        bias: Option<Var>,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    GlobalAvgPool {
        x: Var,
    },
    Affine {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Activate {
        x: Var,
        act: Activation,
    },
    Lstm {
        x: Var,
        vars: LstmVars,
        reverse: bool,
        cache: LstmCache,
    },
    ConcatLast {
        a: Var,
        b: Var,
    },
    Tile {
        x: Var,
        times: usize,
    },
    SliceLast {
        x: Var,
        start: usize,
        end: usize,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Square(Var),
    Scale {
        x: Var,
        factor: f64,
    },
    Sum(Var),
    Mean(Var),
    WeightedAverage {
        values: Var,
        weights: Var,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
    is_param: bool,
}

/// Recording of one forward computation.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to every parameter leaf.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for a parameter leaf; `None` for constants and
    /// parameters the loss does not depend on.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn leading(shape: &[usize], trailing: usize) -> usize {
    shape[..shape.len() - trailing].iter().product()
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push_raw(t, Op::Leaf, false, false)
    }

    /// Leaf that receives a gradient in [`Graph::backward`].
    pub fn parameter(&mut self, t: Tensor) -> Var {
        self.push_raw(t, Op::Leaf, true, true)
    }

    fn push_raw(&mut self, value: Tensor, op: Op, needs_grad: bool, is_param: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            is_param,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, parents: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        Ok(self.push_raw(value, op, needs_grad, false))
    }

    /// Valid 1-D cross-correlation over `[..., L, C_in]` with a
    /// `[k, C_in, C_out]` kernel; output `[..., L-k+1, C_out]`.
    pub fn conv1d_valid(&mut self, x: Var, kernel: Var, bias: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ks = self.shape(kernel).to_vec();
        if xs.len() < 2 || ks.len() != 3 {
            return Err(shape_err("conv1d", format!("input {xs:?}, kernel {ks:?}")));
        }
        let (len, c_in) = (xs[xs.len() - 2], xs[xs.len() - 1]);
        let (width, k_in, c_out) = (ks[0], ks[1], ks[2]);
        if k_in != c_in {
            return Err(shape_err(
                "conv1d",
                format!("kernel expects {k_in} input channels, input has {c_in}"),
            ));
        }
        if len < width {
            return Err(shape_err(
                "conv1d",
                format!("sequence length {len} shorter than kernel width {width}"),
            ));
        }
        if let Some(b) = bias {
            if self.shape(b) != [c_out] {
                return Err(shape_err("conv1d", format!("bias shape {:?}", self.shape(b))));
            }
        }
        let batch = leading(&xs, 2);
        let out_len = len + 1 - width;
        let mut out = vec![0.0; batch * out_len * c_out];
        {
            let xv = self.value(x).data();
            let kv = self.value(kernel).data();
            let bv = bias.map(|b| self.value(b).data());
            for bi in 0..batch {
                conv1d_forward(
                    &xv[bi * len * c_in..(bi + 1) * len * c_in],
                    len,
                    c_in,
                    kv,
                    width,
                    c_out,
                    bv,
                    &mut out[bi * out_len * c_out..(bi + 1) * out_len * c_out],
                );
            }
        }
        let mut shape = xs[..xs.len() - 2].to_vec();
        shape.extend([out_len, c_out]);
        let mut parents = vec![x, kernel];
        parents.extend(bias);
        self.push(
            "conv1d",
            Tensor::from_parts(shape, out),
            Op::Conv1d { x, kernel, bias },
            &parents,
        )
    }

    /// Max pooling over the time axis of `[..., L, C]` with stride equal to
    /// the window. An odd trailing element is dropped.
    pub fn maxpool1d(&mut self, x: Var, window: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 || window == 0 {
            return Err(shape_err("maxpool1d", format!("input {xs:?}, window {window}")));
        }
        let (len, ch) = (xs[xs.len() - 2], xs[xs.len() - 1]);
        let out_len = len / window;
        if out_len == 0 {
            return Err(shape_err("maxpool1d", format!("length {len} < window {window}")));
        }
        let batch = leading(&xs, 2);
        let mut out = vec![0.0; batch * out_len * ch];
        let mut argmax = Vec::with_capacity(out.len());
        let xv = self.value(x).data();
        for bi in 0..batch {
            let local = maxpool_forward(
                &xv[bi * len * ch..(bi + 1) * len * ch],
                len,
                ch,
                window,
                &mut out[bi * out_len * ch..(bi + 1) * out_len * ch],
            );
            argmax.extend(local.into_iter().map(|i| i + bi * len * ch));
        }
        let mut shape = xs[..xs.len() - 2].to_vec();
        shape.extend([out_len, ch]);
        self.push(
            "maxpool1d",
            Tensor::from_parts(shape, out),
            Op::MaxPool { x, argmax },
            &[x],
        )
    }

    /// Mean over the time axis: `[..., L, C] -> [..., C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 || xs[xs.len() - 2] == 0 {
            return Err(shape_err("global_avg_pool", format!("input {xs:?}")));
        }
        let (len, ch) = (xs[xs.len() - 2], xs[xs.len() - 1]);
        let batch = leading(&xs, 2);
        let mut out = vec![0.0; batch * ch];
        let xv = self.value(x).data();
        for bi in 0..batch {
            global_avg_forward(
                &xv[bi * len * ch..(bi + 1) * len * ch],
                len,
                ch,
                &mut out[bi * ch..(bi + 1) * ch],
            );
        }
        let mut shape = xs[..xs.len() - 2].to_vec();
        shape.push(ch);
        self.push(
            "global_avg_pool",
            Tensor::from_parts(shape, out),
            Op::GlobalAvgPool { x },
            &[x],
        )
    }

    /// `x · w + b` over the last axis; `w` is `[C_in, C_out]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let c_in = *xs.last().unwrap_or(&1);
        if ws.len() != 2 || ws[0] != c_in || xs.is_empty() {
            return Err(shape_err("dense", format!("input {xs:?}, weights {ws:?}")));
        }
        let c_out = ws[1];
        if let Some(b) = b {
            if self.shape(b) != [c_out] {
                return Err(shape_err("dense", format!("bias shape {:?}", self.shape(b))));
            }
        }
        let rows = leading(&xs, 1);
        let mut out = vec![0.0; rows * c_out];
        if let Some(b) = b {
            let bv = self.value(b).data();
            for r in 0..rows {
                out[r * c_out..(r + 1) * c_out].copy_from_slice(bv);
            }
        }
        matmul_acc(
            self.value(x).data(),
            rows,
            c_in,
            self.value(w).data(),
            c_out,
            &mut out,
        );
        let mut shape = xs[..xs.len() - 1].to_vec();
        shape.push(c_out);
        let mut parents = vec![x, w];
        parents.extend(b);
        self.push("dense", Tensor::from_parts(shape, out), Op::Affine { x, w, b }, &parents)
    }

    pub fn activation(&mut self, x: Var, act: Activation) -> Result<Var> {
        if act == Activation::Linear {
            return Ok(x);
        }
        let t = self.value(x);
        let data = t.data().iter().map(|&v| act.apply(v)).collect();
        let shape = t.shape().to_vec();
        self.push(
            "activation",
            Tensor::from_parts(shape, data),
            Op::Activate { x, act },
            &[x],
        )
    }

    /// Fully connected layer followed by an activation.
    pub fn dense(&mut self, x: Var, w: Var, b: Option<Var>, act: Activation) -> Result<Var> {
        let z = self.affine(x, w, b)?;
        self.activation(z, act)
    }

    /// One-direction LSTM over `[..., L, C]` with zero initial state;
    /// output `[..., L, H]`. With `reverse` the sequence is consumed from
    /// the end, but outputs stay aligned with input time steps.
    pub fn lstm(&mut self, x: Var, vars: LstmVars, reverse: bool) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 || xs[xs.len() - 2] == 0 {
            return Err(shape_err("lstm", format!("input {xs:?}")));
        }
        let (len, c_in) = (xs[xs.len() - 2], xs[xs.len() - 1]);
        let (wi, wh, bs) = (
            self.shape(vars.w_ih).to_vec(),
            self.shape(vars.w_hh).to_vec(),
            self.shape(vars.bias).to_vec(),
        );
        if wh.len() != 2 || wh[1] != 4 * wh[0] {
            return Err(shape_err("lstm", format!("recurrent weights {wh:?}")));
        }
        let hidden = wh[0];
        if wi != [c_in, 4 * hidden] || bs != [4 * hidden] {
            return Err(shape_err(
                "lstm",
                format!("input weights {wi:?} / bias {bs:?} for {c_in} inputs, {hidden} units"),
            ));
        }
        let batch = leading(&xs, 2);
        let mut out = vec![0.0; batch * len * hidden];
        let cache = {
            let w = LstmWeights {
                w_ih: self.value(vars.w_ih).data(),
                w_hh: self.value(vars.w_hh).data(),
                bias: self.value(vars.bias).data(),
                c_in,
                hidden,
            };
            lstm_forward(self.value(x).data(), batch, len, &w, reverse, &mut out)
        };
        let mut shape = xs[..xs.len() - 2].to_vec();
        shape.extend([len, hidden]);
        self.push(
            "lstm",
            Tensor::from_parts(shape, out),
            Op::Lstm {
                x,
                vars,
                reverse,
                cache,
            },
            &[x, vars.w_ih, vars.w_hh, vars.bias],
        )
    }

    /// Bidirectional LSTM: forward and reverse passes with independent
    /// weights, concatenated per time step (`[..., L, 2H]`).
    pub fn bilstm(&mut self, x: Var, forward: LstmVars, backward: LstmVars) -> Result<Var> {
        let f = self.lstm(x, forward, false)?;
        let b = self.lstm(x, backward, true)?;
        self.concat_last(f, b)
    }

    /// Concatenate along the last axis; leading axes must agree.
    pub fn concat_last(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.is_empty() || sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(shape_err("concat", format!("{sa:?} vs {sb:?}")));
        }
        let (ca, cb) = (sa[sa.len() - 1], sb[sb.len() - 1]);
        let rows = leading(&sa, 1);
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(rows * (ca + cb));
        for r in 0..rows {
            out.extend_from_slice(&av[r * ca..(r + 1) * ca]);
            out.extend_from_slice(&bv[r * cb..(r + 1) * cb]);
        }
        let mut shape = sa[..sa.len() - 1].to_vec();
        shape.push(ca + cb);
        self.push("concat", Tensor::from_parts(shape, out), Op::ConcatLast { a, b }, &[a, b])
    }

    /// Broadcast `[..., C]` along a new axis: `[..., times, C]`.
    pub fn tile(&mut self, x: Var, times: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.is_empty() || times == 0 {
            return Err(shape_err("tile", format!("input {xs:?}, times {times}")));
        }
        let c = xs[xs.len() - 1];
        let rows = leading(&xs, 1);
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(rows * times * c);
        for r in 0..rows {
            for _ in 0..times {
                out.extend_from_slice(&xv[r * c..(r + 1) * c]);
            }
        }
        let mut shape = xs[..xs.len() - 1].to_vec();
        shape.extend([times, c]);
        self.push("tile", Tensor::from_parts(shape, out), Op::Tile { x, times }, &[x])
    }

    /// Columns `start..end` of the last axis.
    pub fn slice_last(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let c = *xs.last().unwrap_or(&0);
        if xs.is_empty() || start >= end || end > c {
            return Err(shape_err("slice", format!("{start}..{end} of {xs:?}")));
        }
        let rows = leading(&xs, 1);
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            out.extend_from_slice(&xv[r * c + start..r * c + end]);
        }
        let mut shape = xs[..xs.len() - 1].to_vec();
        shape.push(end - start);
        self.push(
            "slice",
            Tensor::from_parts(shape, out),
            Op::SliceLast { x, start, end },
            &[x],
        )
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(name, format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok(Tensor::from_parts(ta.shape().to_vec(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("add", a, b, |x, y| x + y)?;
        self.push("add", t, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("sub", a, b, |x, y| x - y)?;
        self.push("sub", t, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("mul", a, b, |x, y| x * y)?;
        self.push("mul", t, Op::Mul(a, b), &[a, b])
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("div", a, b, |x, y| x / y)?;
        self.push("div", t, Op::Div(a, b), &[a, b])
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let data = t.data().iter().map(|v| v * v).collect();
        let t = Tensor::from_parts(t.shape().to_vec(), data);
        self.push("square", t, Op::Square(x), &[x])
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let t = self.value(x);
        let data = t.data().iter().map(|v| v * factor).collect();
        let t = Tensor::from_parts(t.shape().to_vec(), data);
        self.push("scale", t, Op::Scale { x, factor }, &[x])
    }

    /// Sum of all entries (scalar).
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// Mean of all entries (scalar).
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.is_empty() {
            return Err(shape_err("mean", "empty tensor"));
        }
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push("mean", Tensor::scalar(s), Op::Mean(x), &[x])
    }

    /// Ratio-form weighted average over the replica axis:
    /// `values [..., n, p]`, `weights [..., n, 1]` → `[..., p]` with
    /// `out = Σ_j w_j v_j / Σ_j w_j`. Sums run in replica-index order.
    pub fn weighted_average(&mut self, values: Var, weights: Var) -> Result<Var> {
        let (vs, ws) = (self.shape(values).to_vec(), self.shape(weights).to_vec());
        if vs.len() < 2 || ws.len() != vs.len() || ws[ws.len() - 1] != 1 || vs[..vs.len() - 1] != ws[..ws.len() - 1] {
            return Err(shape_err("weighted_average", format!("values {vs:?}, weights {ws:?}")));
        }
        let (n, p) = (vs[vs.len() - 2], vs[vs.len() - 1]);
        let batch = leading(&vs, 2);
        let (vv, wv) = (self.value(values).data(), self.value(weights).data());
        let mut out = vec![0.0; batch * p];
        for bi in 0..batch {
            let w = &wv[bi * n..(bi + 1) * n];
            let total: f64 = w.iter().sum();
            if total.abs() < 1e-300 {
                return Err(TensorError::NonFinite { op: "weighted_average" });
            }
            let o = &mut out[bi * p..(bi + 1) * p];
            for j in 0..n {
                crate::kernels::axpy(w[j], &vv[(bi * n + j) * p..(bi * n + j + 1) * p], o);
            }
            for v in o.iter_mut() {
                *v /= total;
            }
        }
        let mut shape = vs[..vs.len() - 2].to_vec();
        shape.push(p);
        self.push(
            "weighted_average",
            Tensor::from_parts(shape, out),
            Op::WeightedAverage { values, weights },
            &[values, weights],
        )
    }

    /// Reverse sweep from a scalar `loss`. Consumes the graph.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let n = self.nodes.len();
        if loss.0 >= n {
            return Err(TensorError::Graph(format!("loss node {} out of range", loss.0)));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(shape_err(
                "backward",
                format!("loss must be scalar, got {:?}", self.nodes[loss.0].value.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.nodes[loss.0].value.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads)?;
        }

        for (i, node) in self.nodes.iter().enumerate() {
            if !node.is_param {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], child: usize, v: Var, delta: Vec<f64>) -> Result<()> {
        if v.0 >= child {
            return Err(TensorError::Graph(format!(
                "node {child} references later node {}; tape is not acyclic",
                v.0
            )));
        }
        match &mut grads[v.0] {
            Some(t) => {
                for (a, d) in t.data_mut().iter_mut().zip(delta) {
                    *a += d;
                }
            }
            slot @ None => {
                *slot = Some(Tensor::from_parts(self.nodes[v.0].value.shape().to_vec(), delta));
            }
        }
        Ok(())
    }

    fn zeros_like(&self, v: Var) -> Vec<f64> {
        vec![0.0; self.nodes[v.0].value.len()]
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[idx];
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Conv1d { x, kernel, bias } => {
                let xs = self.shape(*x);
                let (len, c_in) = (xs[xs.len() - 2], xs[xs.len() - 1]);
                let ks = self.shape(*kernel);
                let (width, c_out) = (ks[0], ks[2]);
                let out_len = len + 1 - width;
                let batch = leading(xs, 2);
                let mut dx = self.wants(*x).then(|| self.zeros_like(*x));
                let mut dk = self.wants(*kernel).then(|| self.zeros_like(*kernel));
                let mut db = bias.filter(|b| self.wants(*b)).map(|b| self.zeros_like(b));
                let xv = self.value(*x).data();
                let kv = self.value(*kernel).data();
                for bi in 0..batch {
                    let xr = bi * len * c_in..(bi + 1) * len * c_in;
                    conv1d_backward(
                        &xv[xr.clone()],
                        len,
                        c_in,
                        kv,
                        width,
                        c_out,
                        &gd[bi * out_len * c_out..(bi + 1) * out_len * c_out],
                        dx.as_deref_mut().map(|d| &mut d[xr]),
                        dk.as_deref_mut(),
                        db.as_deref_mut(),
                    );
                }
                if let Some(d) = dx {
                    self.accumulate(grads, idx, *x, d)?;
                }
                if let Some(d) = dk {
                    self.accumulate(grads, idx, *kernel, d)?;
                }
                if let (Some(b), Some(d)) = (bias, db) {
                    self.accumulate(grads, idx, *b, d)?;
                }
            }
            Op::MaxPool { x, argmax } => {
                let mut dx = self.zeros_like(*x);
                for (&src, &gv) in argmax.iter().zip(gd) {
                    dx[src] += gv;
                }
                self.accumulate(grads, idx, *x, dx)?;
            }
            Op::GlobalAvgPool { x } => {
                let xs = self.shape(*x);
                let (len, ch) = (xs[xs.len() - 2], xs[xs.len() - 1]);
                let batch = leading(xs, 2);
                let inv = 1.0 / len as f64;
                let mut dx = self.zeros_like(*x);
                for bi in 0..batch {
                    for t in 0..len {
                        for c in 0..ch {
                            dx[(bi * len + t) * ch + c] = gd[bi * ch + c] * inv;
                        }
                    }
                }
                self.accumulate(grads, idx, *x, dx)?;
            }
            Op::Affine { x, w, b } => {
                let xs = self.shape(*x);
                let c_in = xs[xs.len() - 1];
                let c_out = self.shape(*w)[1];
                let rows = leading(xs, 1);
                let mut dx = self.wants(*x).then(|| self.zeros_like(*x));
                let mut dw = self.wants(*w).then(|| self.zeros_like(*w));
                matmul_backward(
                    self.value(*x).data(),
                    rows,
                    c_in,
                    self.value(*w).data(),
                    c_out,
                    gd,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                );
                if let Some(d) = dx {
                    self.accumulate(grads, idx, *x, d)?;
                }
                if let Some(d) = dw {
                    self.accumulate(grads, idx, *w, d)?;
                }
                if let Some(b) = b.filter(|b| self.wants(*b)) {
                    let mut db = vec![0.0; c_out];
                    for r in 0..rows {
                        for (d, v) in db.iter_mut().zip(&gd[r * c_out..(r + 1) * c_out]) {
                            *d += v;
                        }
                    }
                    self.accumulate(grads, idx, b, db)?;
                }
            }
            Op::Activate { x, act } => {
                let y = node.value.data();
                let dx = y
                    .iter()
                    .zip(gd)
                    .map(|(&yv, &gv)| gv * act.derivative_from_output(yv))
                    .collect();
                self.accumulate(grads, idx, *x, dx)?;
            }
            Op::Lstm {
                x,
                vars,
                reverse,
                cache,
            } => {
                let xs = self.shape(*x);
                let (len, c_in) = (xs[xs.len() - 2], xs[xs.len() - 1]);
                let hidden = self.shape(vars.w_hh)[0];
                let batch = leading(xs, 2);
                let w = LstmWeights {
                    w_ih: self.value(vars.w_ih).data(),
                    w_hh: self.value(vars.w_hh).data(),
                    bias: self.value(vars.bias).data(),
                    c_in,
                    hidden,
                };
                let mut dx = self.wants(*x).then(|| self.zeros_like(*x));
                let mut dwi = self.wants(vars.w_ih).then(|| self.zeros_like(vars.w_ih));
                let mut dwh = self.wants(vars.w_hh).then(|| self.zeros_like(vars.w_hh));
                let mut db = self.wants(vars.bias).then(|| self.zeros_like(vars.bias));
                let mut lg = LstmGrads {
                    dx: dx.as_deref_mut(),
                    dw_ih: dwi.as_deref_mut(),
                    dw_hh: dwh.as_deref_mut(),
                    dbias: db.as_deref_mut(),
                };
                lstm_backward(
                    self.value(*x).data(),
                    batch,
                    len,
                    &w,
                    *reverse,
                    node.value.data(),
                    cache,
                    gd,
                    &mut lg,
                );
                if let Some(d) = dx {
                    self.accumulate(grads, idx, *x, d)?;
                }
                if let Some(d) = dwi {
                    self.accumulate(grads, idx, vars.w_ih, d)?;
                }
                if let Some(d) = dwh {
                    self.accumulate(grads, idx, vars.w_hh, d)?;
                }
                if let Some(d) = db {
                    self.accumulate(grads, idx, vars.bias, d)?;
                }
            }
            Op::ConcatLast { a, b } => {
                let (ca, cb) = (self.value(*a).last_dim(), self.value(*b).last_dim());
                let rows = leading(self.shape(*a), 1);
                let mut da = Vec::with_capacity(rows * ca);
                let mut db = Vec::with_capacity(rows * cb);
                for r in 0..rows {
                    let row = &gd[r * (ca + cb)..(r + 1) * (ca + cb)];
                    da.extend_from_slice(&row[..ca]);
                    db.extend_from_slice(&row[ca..]);
                }
                if self.wants(*a) {
                    self.accumulate(grads, idx, *a, da)?;
                }
                if self.wants(*b) {
                    self.accumulate(grads, idx, *b, db)?;
                }
            }
            Op::Tile { x, times } => {
                let c = self.value(*x).last_dim();
                let rows = leading(self.shape(*x), 1);
                let mut dx = vec![0.0; rows * c];
                for r in 0..rows {
                    for t in 0..*times {
                        let src = &gd[(r * times + t) * c..(r * times + t + 1) * c];
                        for (d, v) in dx[r * c..(r + 1) * c].iter_mut().zip(src) {
                            *d += v;
                        }
                    }
                }
                self.accumulate(grads, idx, *x, dx)?;
            }
            Op::SliceLast { x, start, end } => {
                let c = self.value(*x).last_dim();
                let rows = leading(self.shape(*x), 1);
                let w = end - start;
                let mut dx = self.zeros_like(*x);
                for r in 0..rows {
                    dx[r * c + start..r * c + end].copy_from_slice(&gd[r * w..(r + 1) * w]);
                }
                self.accumulate(grads, idx, *x, dx)?;
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if self.wants(*a) {
                    self.accumulate(grads, idx, *a, gd.to_vec())?;
                }
                if self.wants(*b) {
                    self.accumulate(grads, idx, *b, gd.iter().map(|v| sign * v).collect())?;
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    let d = gd.iter().zip(bv).map(|(g, y)| g * y).collect();
                    self.accumulate(grads, idx, *a, d)?;
                }
                if self.wants(*b) {
                    let d = gd.iter().zip(av).map(|(g, x)| g * x).collect();
                    self.accumulate(grads, idx, *b, d)?;
                }
            }
            Op::Div(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    let d = gd.iter().zip(bv).map(|(g, y)| g / y).collect();
                    self.accumulate(grads, idx, *a, d)?;
                }
                if self.wants(*b) {
                    let d = gd
                        .iter()
                        .zip(av.iter().zip(bv))
                        .map(|(g, (x, y))| -g * x / (y * y))
                        .collect();
                    self.accumulate(grads, idx, *b, d)?;
                }
            }
            Op::Square(x) => {
                let d = gd
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(g, v)| 2.0 * g * v)
                    .collect();
                self.accumulate(grads, idx, *x, d)?;
            }
            Op::Scale { x, factor } => {
                let d = gd.iter().map(|g| g * factor).collect();
                self.accumulate(grads, idx, *x, d)?;
            }
            Op::Sum(x) => {
                let d = vec![gd[0]; self.value(*x).len()];
                self.accumulate(grads, idx, *x, d)?;
            }
            Op::Mean(x) => {
                let len = self.value(*x).len();
                let d = vec![gd[0] / len as f64; len];
                self.accumulate(grads, idx, *x, d)?;
            }
            Op::WeightedAverage { values, weights } => {
                let vs = self.shape(*values);
                let (n, p) = (vs[vs.len() - 2], vs[vs.len() - 1]);
                let batch = leading(vs, 2);
                let (vv, wv) = (self.value(*values).data(), self.value(*weights).data());
                let out = node.value.data();
                let mut dv = vec![0.0; vv.len()];
                let mut dw = vec![0.0; wv.len()];
                for bi in 0..batch {
                    let total: f64 = wv[bi * n..(bi + 1) * n].iter().sum();
                    let go = &gd[bi * p..(bi + 1) * p];
                    let o = &out[bi * p..(bi + 1) * p];
                    for j in 0..n {
                        let row = (bi * n + j) * p;
                        let wj = wv[bi * n + j];
                        let mut acc = 0.0;
                        for a in 0..p {
                            dv[row + a] = go[a] * wj / total;
                            acc += go[a] * (vv[row + a] - o[a]);
                        }
                        dw[bi * n + j] = acc / total;
                    }
                }
                if self.wants(*values) {
                    self.accumulate(grads, idx, *values, dv)?;
                }
                if self.wants(*weights) {
                    self.accumulate(grads, idx, *weights, dw)?;
                }
            }
        }
        Ok(())
    }
}
