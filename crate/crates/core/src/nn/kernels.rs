//! Inner loops shared by the forward and backward passes. Written over
//! slices with independent accumulators so the compiler can vectorize.

#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (y, x) in y.iter_mut().zip(x) {
        *y += a * x;
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `out[o] += sum_i w[o * cin + i] * x[i]` over rows of length `l`, for one
/// batch element. `x` holds `cin` rows and `out` holds `cout` rows.
pub fn matmul_rows(w: &[f64], cin: usize, x: &[f64], out: &mut [f64], l: usize) {
    let cout = w.len() / cin;
    for o in 0..cout {
        let dst = &mut out[o * l..(o + 1) * l];
        let wr = &w[o * cin..(o + 1) * cin];
        let mut i = 0;
        while i + 4 <= cin {
            let (w0, w1, w2, w3) = (wr[i], wr[i + 1], wr[i + 2], wr[i + 3]);
            let x0 = &x[i * l..(i + 1) * l];
            let x1 = &x[(i + 1) * l..(i + 2) * l];
            let x2 = &x[(i + 2) * l..(i + 3) * l];
            let x3 = &x[(i + 3) * l..(i + 4) * l];
            for ((((d, a), b), c), e) in dst.iter_mut().zip(x0).zip(x1).zip(x2).zip(x3) {
                *d += w0 * a + w1 * b + w2 * c + w3 * e;
            }
            i += 4;
        }
        while i < cin {
            axpy(wr[i], &x[i * l..(i + 1) * l], dst);
            i += 1;
        }
    }
}

/// True when no value is NaN or infinite.
#[allow(clippy::eq_op)]
pub fn all_finite(v: &[f64]) -> bool {
    // x - x is NaN exactly for non-finite x, and NaN survives the sums
    let mut acc = [0.0f64; 4];
    let chunks = v.chunks_exact(4);
    let tail: f64 = chunks.remainder().iter().map(|x| x - x).sum();
    for c in chunks {
        acc[0] += c[0] - c[0];
        acc[1] += c[1] - c[1];
        acc[2] += c[2] - c[2];
        acc[3] += c[3] - c[3];
    }
    (acc[0] + acc[1] + acc[2] + acc[3] + tail) == 0.0
}

pub fn transpose(w: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; w.len()];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = w[r * cols + c];
        }
    }
    t
}

/// Valid output range `[lo, hi)` and source offset for tap `j` of a
/// same-padded kernel: `dst[lo..hi]` pairs with `src[s0..s0 + hi - lo]`.
#[inline]
pub fn tap_range(j: usize, pad: usize, l: usize) -> Option<(usize, usize, usize)> {
    let lo = pad.saturating_sub(j);
    let hi = (l + pad).saturating_sub(j).min(l);
    (lo < hi).then(|| (lo, hi, lo + j - pad))
}
