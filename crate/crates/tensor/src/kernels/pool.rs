/// Non-overlapping max pooling along the time axis. A trailing partial
/// window is dropped. Ties resolve to the first maximal index.
///
/// Returns, for each output cell, the flat input index it was taken from.
pub fn maxpool_forward(
    x: &[f64],
    len: usize,
    channels: usize,
    window: usize,
    out: &mut [f64],
) -> Vec<usize> {
    let out_len = len / window;
    let mut argmax = vec![0usize; out_len * channels];
    for t in 0..out_len {
        for c in 0..channels {
            let mut best_idx = (t * window) * channels + c;
            let mut best = x[best_idx];
            for w in 1..window {
                let idx = (t * window + w) * channels + c;
                if x[idx] > best {
                    best = x[idx];
                    best_idx = idx;
                }
            }
            out[t * channels + c] = best;
            argmax[t * channels + c] = best_idx;
        }
    }
    argmax
}

pub fn global_avg_forward(x: &[f64], len: usize, channels: usize, out: &mut [f64]) {
    out.fill(0.0);
    for t in 0..len {
        for (o, v) in out.iter_mut().zip(&x[t * channels..(t + 1) * channels]) {
            *o += v;
        }
    }
    let inv = 1.0 / len as f64;
    for o in out.iter_mut() {
        *o *= inv;
    }
}
