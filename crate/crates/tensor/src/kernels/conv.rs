use super::{gemm, View};

/// Valid cross-correlation, stride 1: `out[t, o] = b[o] + Σ_{d,c} x[t+d, c] k[d, c, o]`.
///
/// The receptive field `x[t..t+width, :]` is contiguous and lines up with
/// the kernel's `[width, c_in]` leading axes, so the im2col matrix is the
/// input itself read with row stride `c_in`.
#[allow(clippy::too_many_arguments)]
pub fn conv1d_forward(
    x: &[f64],
    len: usize,
    c_in: usize,
    kernel: &[f64],
    width: usize,
    c_out: usize,
    bias: Option<&[f64]>,
    out: &mut [f64],
) {
    let out_len = len + 1 - width;
    for t in 0..out_len {
        let row = &mut out[t * c_out..(t + 1) * c_out];
        match bias {
            Some(b) => row.copy_from_slice(b),
            None => row.fill(0.0),
        }
    }
    let window = View { off: 0, rs: c_in, cs: 1 };
    gemm(out_len, width * c_in, c_out, x, window, kernel, View::rows(c_out), 1.0, out, View::rows(c_out));
}

/// Accumulates gradients of [`conv1d_forward`].
#[allow(clippy::too_many_arguments)]
pub fn conv1d_backward(
    x: &[f64],
    len: usize,
    c_in: usize,
    kernel: &[f64],
    width: usize,
    c_out: usize,
    dout: &[f64],
    dx: Option<&mut [f64]>,
    dkernel: Option<&mut [f64]>,
    dbias: Option<&mut [f64]>,
) {
    let out_len = len + 1 - width;
    if let Some(db) = dbias {
        for g in dout[..out_len * c_out].chunks_exact(c_out) {
            for (d, gi) in db.iter_mut().zip(g) {
                *d += gi;
            }
        }
    }
    if let Some(dk) = dkernel {
        let window_t = View { off: 0, rs: 1, cs: c_in };
        gemm(width * c_in, out_len, c_out, x, window_t, dout, View::rows(c_out), 1.0, dk, View::rows(c_out));
    }
    if let Some(dx) = dx {
        // One product per kernel tap keeps the written rows disjoint.
        for d in 0..width {
            let k_t = View { off: d * c_in * c_out, rs: 1, cs: c_out };
            let dst = View { off: d * c_in, rs: c_in, cs: 1 };
            gemm(out_len, c_out, c_in, dout, View::rows(c_out), kernel, k_t, 1.0, dx, dst);
        }
    }
}
