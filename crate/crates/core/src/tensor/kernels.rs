//! Plain slice kernels shared by the graph ops.
//!
//! Every output row of `affine` depends only on the matching input row and
//! accumulates over the inner dimension in a fixed order, so a row computed
//! inside a batch of 1 is bitwise equal to the same row inside a batch of
//! 10 000. Rollout log-probs and recomputed log-probs rely on this.

/// `out[r, j] = bias[j] + Σ_k x[r, k] · w[k, j]`.
///
/// Zero inputs are skipped; one-hot observation encodings are mostly zeros.
pub(crate) fn affine(x: &[f64], w: &[f64], bias: &[f64], rows: usize, inner: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        let xr = &x[r * inner..(r + 1) * inner];
        let or = &mut out[r * cols..(r + 1) * cols];
        for (k, &xv) in xr.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let wk = &w[k * cols..(k + 1) * cols];
            for (o, &wv) in or.iter_mut().zip(wk) {
                *o += xv * wv;
            }
        }
        for (o, &b) in or.iter_mut().zip(bias) {
            *o += b;
        }
    }
    out
}

/// `dx[r, k] = Σ_j dy[r, j] · w[k, j]`.
pub(crate) fn affine_grad_input(dy: &[f64], w: &[f64], rows: usize, inner: usize, cols: usize) -> Vec<f64> {
    let mut dx = vec![0.0; rows * inner];
    for r in 0..rows {
        let dyr = &dy[r * cols..(r + 1) * cols];
        for k in 0..inner {
            let wk = &w[k * cols..(k + 1) * cols];
            dx[r * inner + k] = dyr.iter().zip(wk).map(|(a, b)| a * b).sum();
        }
    }
    dx
}

/// `dw[k, j] += Σ_r x[r, k] · dy[r, j]`.
pub(crate) fn affine_grad_weight(x: &[f64], dy: &[f64], dw: &mut [f64], rows: usize, inner: usize, cols: usize) {
    for r in 0..rows {
        let xr = &x[r * inner..(r + 1) * inner];
        let dyr = &dy[r * cols..(r + 1) * cols];
        for (k, &xv) in xr.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let dwk = &mut dw[k * cols..(k + 1) * cols];
            for (d, &g) in dwk.iter_mut().zip(dyr) {
                *d += xv * g;
            }
        }
    }
}

/// Max-shifted log-softmax over the middle axis of an `(outer, len, inner)` view.
pub(crate) fn log_softmax(x: &[f64], outer: usize, len: usize, inner: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |a: usize| (o * len + a) * inner + i;
            let max = (0..len).map(|a| x[idx(a)]).fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = (0..len).map(|a| (x[idx(a)] - max).exp()).sum();
            let log_sum = sum.ln();
            for a in 0..len {
                out[idx(a)] = (x[idx(a)] - max) - log_sum;
            }
        }
    }
    out
}

/// Gradient of log-softmax: `dx = dy − softmax · Σ dy` along the axis.
pub(crate) fn log_softmax_grad(y: &[f64], dy: &[f64], outer: usize, len: usize, inner: usize) -> Vec<f64> {
    let mut dx = vec![0.0; y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |a: usize| (o * len + a) * inner + i;
            let s: f64 = (0..len).map(|a| dy[idx(a)]).sum();
            for a in 0..len {
                dx[idx(a)] = dy[idx(a)] - y[idx(a)].exp() * s;
            }
        }
    }
    dx
}

/// Numerically stable `ln σ(x)`.
pub(crate) fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Logistic sigmoid without overflow for large `|x|`.
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
