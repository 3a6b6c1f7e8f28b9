//! Deterministic numeric kernels.
//!
//! Parameters are stored in `f32`; every reduction accumulates in `f64`
//! with a fixed association order (four independent lanes assigned by
//! position, combined as `(l0+l1)+(l2+l3)`). Rayon parallelism only ever
//! splits work across *output* elements, never across a reduction, so
//! results are bit-identical for any thread count.

use rayon::prelude::*;

/// Work threshold (in multiply-adds) below which kernels stay serial.
const PAR_THRESHOLD: usize = 16_384;

/// Dot product of an `f32` slice against an `f64` slice, fixed lane order.
#[inline]
pub fn dot_f32_f64(w: &[f32], x: &[f64]) -> f64 {
    debug_assert_eq!(w.len(), x.len());
    let mut acc = [0.0f64; 4];
    let wc = w.chunks_exact(4);
    let xc = x.chunks_exact(4);
    let wr = wc.remainder();
    let xr = xc.remainder();
    for (w4, x4) in wc.zip(xc) {
        acc[0] += w4[0] as f64 * x4[0];
        acc[1] += w4[1] as f64 * x4[1];
        acc[2] += w4[2] as f64 * x4[2];
        acc[3] += w4[3] as f64 * x4[3];
    }
    for (k, (&w1, &x1)) in wr.iter().zip(xr.iter()).enumerate() {
        acc[k] += w1 as f64 * x1;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3])
}

/// Dot product of two `f64` slices, same lane order as [`dot_f32_f64`].
#[inline]
pub fn dot_f64(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ac = a.chunks_exact(4);
    let bc = b.chunks_exact(4);
    let ar = ac.remainder();
    let br = bc.remainder();
    for (a4, b4) in ac.zip(bc) {
        acc[0] += a4[0] * b4[0];
        acc[1] += a4[1] * b4[1];
        acc[2] += a4[2] * b4[2];
        acc[3] += a4[3] * b4[3];
    }
    for (k, (&a1, &b1)) in ar.iter().zip(br.iter()).enumerate() {
        acc[k] += a1 * b1;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3])
}

/// `z = x · Wᵀ + b` over a batch.
///
/// `x` is `rows × in_dim` row-major `f64`, `w` is `out_dim × in_dim`
/// row-major `f32`, `z` is `rows × out_dim`. Parallel over batch rows.
pub fn affine_forward(
    x: &[f64],
    rows: usize,
    in_dim: usize,
    w: &[f32],
    bias: &[f32],
    out_dim: usize,
    z: &mut [f64],
) {
    debug_assert_eq!(x.len(), rows * in_dim);
    debug_assert_eq!(w.len(), out_dim * in_dim);
    debug_assert_eq!(bias.len(), out_dim);
    debug_assert_eq!(z.len(), rows * out_dim);

    let row_job = |(zrow, xrow): (&mut [f64], &[f64])| {
        for (o, zo) in zrow.iter_mut().enumerate() {
            *zo = bias[o] as f64 + dot_f32_f64(&w[o * in_dim..(o + 1) * in_dim], xrow);
        }
    };

    if rows * out_dim * in_dim >= PAR_THRESHOLD {
        z.par_chunks_mut(out_dim)
            .zip(x.par_chunks(in_dim))
            .for_each(row_job);
    } else {
        z.chunks_mut(out_dim)
            .zip(x.chunks(in_dim))
            .for_each(row_job);
    }
}

/// Weight gradient `dW = deltaᵀ · a` (sum over batch rows, fixed order).
///
/// `delta` is `rows × out_dim`, `a` is `rows × in_dim`, `dw` is
/// `out_dim × in_dim`. Parallel over output units.
pub fn grad_weights(
    delta: &[f64],
    a: &[f64],
    rows: usize,
    in_dim: usize,
    out_dim: usize,
    dw: &mut [f32],
) {
    debug_assert_eq!(delta.len(), rows * out_dim);
    debug_assert_eq!(a.len(), rows * in_dim);
    debug_assert_eq!(dw.len(), out_dim * in_dim);

    let unit_job = |(o, dw_row): (usize, &mut [f32])| {
        let mut acc = vec![0.0f64; in_dim];
        for b in 0..rows {
            let d = delta[b * out_dim + o];
            if d == 0.0 {
                continue;
            }
            let arow = &a[b * in_dim..(b + 1) * in_dim];
            for (acc_i, &a_i) in acc.iter_mut().zip(arow.iter()) {
                *acc_i += d * a_i;
            }
        }
        for (out, &v) in dw_row.iter_mut().zip(acc.iter()) {
            *out = v as f32;
        }
    };

    if rows * out_dim * in_dim >= PAR_THRESHOLD {
        dw.par_chunks_mut(in_dim).enumerate().for_each(unit_job);
    } else {
        dw.chunks_mut(in_dim).enumerate().for_each(unit_job);
    }
}

/// Bias gradient `db[o] = Σ_b delta[b, o]` (fixed batch order).
pub fn grad_bias(delta: &[f64], rows: usize, out_dim: usize, db: &mut [f32]) {
    debug_assert_eq!(delta.len(), rows * out_dim);
    debug_assert_eq!(db.len(), out_dim);
    for (o, db_o) in db.iter_mut().enumerate() {
        let mut acc = 0.0f64;
        for b in 0..rows {
            acc += delta[b * out_dim + o];
        }
        *db_o = acc as f32;
    }
}

/// Input gradient `dx = delta · W`.
///
/// `delta` is `rows × out_dim`, `w` is `out_dim × in_dim`, `dx` is
/// `rows × in_dim`. Parallel over batch rows; per row the accumulation
/// order over output units is fixed.
pub fn grad_input(
    delta: &[f64],
    rows: usize,
    in_dim: usize,
    w: &[f32],
    out_dim: usize,
    dx: &mut [f64],
) {
    debug_assert_eq!(delta.len(), rows * out_dim);
    debug_assert_eq!(w.len(), out_dim * in_dim);
    debug_assert_eq!(dx.len(), rows * in_dim);

    let row_job = |(dxrow, drow): (&mut [f64], &[f64])| {
        dxrow.fill(0.0);
        for (o, &d) in drow.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let wrow = &w[o * in_dim..(o + 1) * in_dim];
            for (dx_i, &w_i) in dxrow.iter_mut().zip(wrow.iter()) {
                *dx_i += d * w_i as f64;
            }
        }
    };

    if rows * out_dim * in_dim >= PAR_THRESHOLD {
        dx.par_chunks_mut(in_dim)
            .zip(delta.par_chunks(out_dim))
            .for_each(row_job);
    } else {
        dx.chunks_mut(in_dim)
            .zip(delta.chunks(out_dim))
            .for_each(row_job);
    }
}

/// In-place rectifier.
pub fn relu_inplace(z: &mut [f64]) {
    for v in z.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Backprop through the rectifier: zero `delta` where the pre-activation
/// was not strictly positive.
pub fn relu_backward(z_pre: &[f64], delta: &mut [f64]) {
    debug_assert_eq!(z_pre.len(), delta.len());
    for (d, &z) in delta.iter_mut().zip(z_pre.iter()) {
        if z <= 0.0 {
            *d = 0.0;
        }
    }
}

/// Argmax with ties broken toward the lowest index.
#[inline]
pub fn argmax_lowest(row: &[f64]) -> usize {
    let mut best = 0;
    let mut best_v = row[0];
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

/// Softmax cross-entropy over a batch of logits.
///
/// Returns the per-batch loss *sum* (nats), the number of argmax-correct
/// rows, and optionally writes `∂(loss_sum)/∂logits` into `dlogits`
/// (the caller divides by the batch size it wants to average over).
pub fn softmax_xent(
    logits: &[f64],
    rows: usize,
    classes: usize,
    labels: &[u32],
    mut dlogits: Option<&mut [f64]>,
) -> (f64, usize) {
    debug_assert_eq!(logits.len(), rows * classes);
    debug_assert_eq!(labels.len(), rows);
    if let Some(d) = dlogits.as_deref() {
        debug_assert_eq!(d.len(), rows * classes);
    }

    let mut loss_sum = 0.0f64;
    let mut correct = 0usize;
    for b in 0..rows {
        let zrow = &logits[b * classes..(b + 1) * classes];
        let y = labels[b] as usize;
        debug_assert!(y < classes);

        let m = zrow.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sumexp = 0.0f64;
        for &z in zrow {
            sumexp += (z - m).exp();
        }
        let log_z = m + sumexp.ln();
        loss_sum += log_z - zrow[y];
        if argmax_lowest(zrow) == y {
            correct += 1;
        }

        if let Some(d) = dlogits.as_deref_mut() {
            let drow = &mut d[b * classes..(b + 1) * classes];
            for (k, (dk, &z)) in drow.iter_mut().zip(zrow.iter()).enumerate() {
                let p = (z - log_z).exp();
                *dk = if k == y { p - 1.0 } else { p };
            }
        }
    }
    (loss_sum, correct)
}
