//! Per-sample forward and backward kernels on raw slices.
//!
//! Layout convention throughout: sequences are `[len, channels]` row-major,
//! weight matrices are `[fan_in, fan_out]` row-major.

pub mod activation;
pub mod conv;
pub mod lstm;
pub mod pool;

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Strided matrix view: element `(i, j)` lives at `off + i·rs + j·cs`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct View {
    pub off: usize,
    pub rs: usize,
    pub cs: usize,
}

impl View {
    pub const fn rows(cols: usize) -> Self {
        Self { off: 0, rs: cols, cs: 1 }
    }

    pub const fn cols(rows: usize) -> Self {
        Self { off: 0, rs: 1, cs: rows }
    }

    fn span(self, r: usize, c: usize) -> usize {
        if r == 0 || c == 0 {
            return 0;
        }
        self.off + (r - 1) * self.rs + (c - 1) * self.cs + 1
    }
}

/// `C ← A·B + beta·C` for `A: [m, k]`, `B: [k, n]`, `C: [m, n]` given as
/// strided views. `C` must not overlap itself; `A` may (im2col windows).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f64], va: View, b: &[f64], vb: View, beta: f64, c: &mut [f64], vc: View) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(va.span(m, k) <= a.len() && vb.span(k, n) <= b.len() && vc.span(m, n) <= c.len());
    assert!(vc.cs >= 1 && vc.rs >= 1 && (vc.cs == 1 && vc.rs >= n || vc.rs == 1 && vc.cs >= m));
    // SAFETY: the assertions keep every addressed element inside its slice
    // and the output view is injective.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr().add(va.off),
            va.rs as isize,
            va.cs as isize,
            b.as_ptr().add(vb.off),
            vb.rs as isize,
            vb.cs as isize,
            beta,
            c.as_mut_ptr().add(vc.off),
            vc.rs as isize,
            vc.cs as isize,
        );
    }
}

/// `out[r, :] += x[r, :] · w` for every row `r`.
pub(crate) fn matmul_acc(x: &[f64], rows: usize, fan_in: usize, w: &[f64], fan_out: usize, out: &mut [f64]) {
    gemm(rows, fan_in, fan_out, x, View::rows(fan_in), w, View::rows(fan_out), 1.0, out, View::rows(fan_out));
}

/// Backward of `out = x · w`: accumulates `dx += dout · wᵀ` and `dw += xᵀ · dout`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn matmul_backward(
    x: &[f64],
    rows: usize,
    fan_in: usize,
    w: &[f64],
    fan_out: usize,
    dout: &[f64],
    dx: Option<&mut [f64]>,
    dw: Option<&mut [f64]>,
) {
    if let Some(dx) = dx {
        gemm(rows, fan_out, fan_in, dout, View::rows(fan_out), w, View::cols(fan_out), 1.0, dx, View::rows(fan_in));
    }
    if let Some(dw) = dw {
        gemm(fan_in, rows, fan_out, x, View::cols(fan_in), dout, View::rows(fan_out), 1.0, dw, View::rows(fan_out));
    }
}
