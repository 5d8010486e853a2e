//! GRU and LSTM recurrences with hand-written backpropagation through time.
//!
//! GRU (reset applied before the recurrent product):
//!   z = hs(W_z x + U_z h + b_z),  r = hs(W_r x + U_r h + b_r)
//!   h̃ = tanh(W_h x + U_h (r∘h) + b_h),  h' = z∘h + (1−z)∘h̃
//!
//! LSTM:
//!   i, f, o = hs(·),  c̃ = tanh(·),  c' = f∘c + i∘c̃,  h' = o∘tanh(c')

use super::{hard_sigmoid, hard_sigmoid_grad, CellKind, ModelConfig, Weights};

#[inline]
pub(crate) fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

const BLOCK: usize = 16;

#[inline(always)]
fn gemv_block<const B: usize>(out: &mut [f64], v: &[f64], m: &[f64], stride: usize, j: usize) {
    let mut acc: [f64; B] = out[j..j + B].try_into().unwrap();
    for (row, &vk) in m.chunks(stride).zip(v) {
        let r: &[f64; B] = row[j..j + B].try_into().unwrap();
        for l in 0..B {
            acc[l] += vk * r[l];
        }
    }
    out[j..j + B].copy_from_slice(&acc);
}

/// `out[j] += Σ_k v[k] · m[k·stride + j]`, summed in `k` order.
#[inline]
pub(crate) fn gemv_acc(out: &mut [f64], v: &[f64], m: &[f64], stride: usize) {
    let width = out.len();
    let mut j = 0;
    while j + BLOCK <= width {
        gemv_block::<BLOCK>(out, v, m, stride, j);
        j += BLOCK;
    }
    if j + BLOCK / 2 <= width {
        gemv_block::<{ BLOCK / 2 }>(out, v, m, stride, j);
        j += BLOCK / 2;
    }
    if j < width {
        for (row, &vk) in m.chunks(stride).zip(v) {
            for (o, r) in out[j..].iter_mut().zip(&row[j..width]) {
                *o += vk * r;
            }
        }
    }
}

/// Row-major transpose of a `rows × cols` matrix.
pub(crate) fn transpose(m: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; rows * cols];
    for (r, row) in m.chunks_exact(cols).enumerate() {
        for (c, &v) in row.iter().enumerate() {
            t[c * rows + r] = v;
        }
    }
    t
}

const OUTER_BLOCK: usize = 8;

/// `out[k·stride + j] += Σ_t a[t·a_stride + k] · b[t·b_stride + j]` for
/// `k < rows`, `j < cols`: the summed outer products of a step history.
#[allow(clippy::too_many_arguments)]
fn outer_acc(
    out: &mut [f64],
    stride: usize,
    rows: usize,
    cols: usize,
    a: &[f64],
    a_stride: usize,
    b: &[f64],
    b_stride: usize,
    steps: usize,
) {
    const B: usize = OUTER_BLOCK;
    assert!(steps == 0 || ((steps - 1) * a_stride + rows <= a.len() && (steps - 1) * b_stride + cols <= b.len()));
    let mut j = 0;
    while j < cols {
        let len = (cols - j).min(B);
        let mut k = 0;
        while k < rows {
            let pair = k + 1 < rows;
            let (mut acc0, mut acc1) = ([0.0; B], [0.0; B]);
            if len == B {
                for t in 0..steps {
                    let br: &[f64; B] = b[t * b_stride + j..t * b_stride + j + B].try_into().unwrap();
                    let a0 = a[t * a_stride + k];
                    let a1 = if pair { a[t * a_stride + k + 1] } else { 0.0 };
                    for l in 0..B {
                        acc0[l] += a0 * br[l];
                        acc1[l] += a1 * br[l];
                    }
                }
            } else {
                for t in 0..steps {
                    let br = &b[t * b_stride + j..t * b_stride + j + len];
                    let a0 = a[t * a_stride + k];
                    let a1 = if pair { a[t * a_stride + k + 1] } else { 0.0 };
                    for (l, &y) in br.iter().enumerate() {
                        acc0[l] += a0 * y;
                        acc1[l] += a1 * y;
                    }
                }
            }
            for (o, x) in out[k * stride + j..k * stride + j + len].iter_mut().zip(&acc0) {
                *o += x;
            }
            if pair {
                for (o, x) in out[(k + 1) * stride + j..(k + 1) * stride + j + len].iter_mut().zip(&acc1) {
                    *o += x;
                }
            }
            k += 2;
        }
        j += len;
    }
}

/// Recurrent state: `h` for GRU, `h` and `c` for LSTM.
#[derive(Debug, Clone, PartialEq)]
pub struct CellState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl CellState {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let c = if cfg.cell == CellKind::Lstm { cfg.hidden } else { 0 };
        Self { h: vec![0.0; cfg.hidden], c: vec![0.0; c] }
    }
}

/// Activations kept for the backward pass, one row per time step.
/// GRU rows: `[h_prev, z, r, h̃]`; LSTM rows: `[h_prev, c_prev, i, f, c̃, o, tanh c']`.
pub(crate) struct Trace {
    pub rows: Vec<f64>,
    pub width: usize,
}

impl Trace {
    pub fn new(cfg: &ModelConfig, steps: usize) -> Self {
        let width = match cfg.cell {
            CellKind::Gru => 4,
            CellKind::Lstm => 7,
        } * cfg.hidden;
        Self { rows: Vec::with_capacity(width * steps), width }
    }

    fn row(&self, t: usize) -> &[f64] {
        &self.rows[t * self.width..(t + 1) * self.width]
    }
}

/// Scratch buffers reused across steps.
pub(crate) struct Scratch {
    a: Vec<f64>,
    b: Vec<f64>,
}

impl Scratch {
    pub fn new(cfg: &ModelConfig) -> Self {
        let gn = cfg.cell.gates() * cfg.hidden;
        Self { a: vec![0.0; gn], b: vec![0.0; gn] }
    }
}

/// Input-side pre-activations `b + W x` into `out`.
#[inline]
fn input_preact(w: &Weights, x: &[f64], gn: usize, out: &mut [f64]) {
    out.copy_from_slice(&w.bias);
    for (i, &xi) in x.iter().enumerate() {
        axpy(out, xi, &w.kernel[i * gn..(i + 1) * gn]);
    }
}

/// One recurrence step, updating `state` in place.
pub(crate) fn step(
    cfg: &ModelConfig,
    w: &Weights,
    x: &[f64],
    state: &mut CellState,
    scratch: &mut Scratch,
    trace: Option<&mut Trace>,
) {
    match cfg.cell {
        CellKind::Gru => gru_step(cfg.hidden, w, x, state, scratch, trace),
        CellKind::Lstm => lstm_step(cfg.hidden, w, x, state, scratch, trace),
    }
}

fn gru_step(n: usize, w: &Weights, x: &[f64], state: &mut CellState, s: &mut Scratch, trace: Option<&mut Trace>) {
    let gn = 3 * n;
    let a = &mut s.a;
    input_preact(w, x, gn, a);
    let h = &mut state.h;
    gemv_acc(&mut a[..2 * n], h, &w.recurrent, gn);
    let (zr, cand) = a.split_at_mut(2 * n);
    for v in zr.iter_mut() {
        *v = hard_sigmoid(*v);
    }
    let (z, r) = zr.split_at(n);
    // r∘h, then U_h (r∘h)
    let rh = &mut s.b[..n];
    for j in 0..n {
        rh[j] = r[j] * h[j];
    }
    gemv_acc(cand, rh, &w.recurrent[2 * n..], gn);
    for v in cand.iter_mut() {
        *v = v.tanh();
    }
    if let Some(tr) = trace {
        tr.rows.extend_from_slice(h);
        tr.rows.extend_from_slice(z);
        tr.rows.extend_from_slice(r);
        tr.rows.extend_from_slice(cand);
    }
    for j in 0..n {
        h[j] = z[j] * h[j] + (1.0 - z[j]) * cand[j];
    }
}

fn lstm_step(n: usize, w: &Weights, x: &[f64], state: &mut CellState, s: &mut Scratch, mut trace: Option<&mut Trace>) {
    let gn = 4 * n;
    let a = &mut s.a;
    input_preact(w, x, gn, a);
    gemv_acc(a, &state.h, &w.recurrent, gn);
    for (gate, chunk) in a.chunks_exact_mut(n).enumerate() {
        if gate == 2 {
            chunk.iter_mut().for_each(|v| *v = v.tanh());
        } else {
            chunk.iter_mut().for_each(|v| *v = hard_sigmoid(*v));
        }
    }
    let (i, rest) = a.split_at(n);
    let (f, rest) = rest.split_at(n);
    let (g, o) = rest.split_at(n);
    if let Some(tr) = trace.as_deref_mut() {
        tr.rows.extend_from_slice(&state.h);
        tr.rows.extend_from_slice(&state.c);
        tr.rows.extend_from_slice(a);
    }
    let tc = &mut s.b[..n];
    for j in 0..n {
        let c = f[j] * state.c[j] + i[j] * g[j];
        state.c[j] = c;
        tc[j] = c.tanh();
        state.h[j] = o[j] * tc[j];
    }
    if let Some(tr) = trace {
        tr.rows.extend_from_slice(tc);
    }
}

/// Backpropagates `dh_last` (gradient w.r.t. the final hidden state) through
/// every recorded step, accumulating parameter gradients into `grads`.
/// `xs` holds the `T × input` inputs the trace was recorded on.
/// `ut` is the transposed recurrent kernel, `(gates·hidden) × hidden`.
pub(crate) fn backward(cfg: &ModelConfig, ut: &[f64], xs: &[f64], trace: &Trace, dh_last: &[f64], grads: &mut Weights) {
    let n = cfg.hidden;
    let gn = cfg.cell.gates() * n;
    let inputs = cfg.input_channels;
    let steps = trace.rows.len() / trace.width;
    let mut dh = dh_last.to_vec();
    let mut dc = vec![0.0; n];
    let mut dprev = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    // per-step pre-activation gradients, and for GRU the r∘h_prev products
    let mut das = vec![0.0; steps * gn];
    let mut rhs = if cfg.cell == CellKind::Gru { vec![0.0; steps * n] } else { Vec::new() };

    for t in (0..steps).rev() {
        let row = trace.row(t);
        let da = &mut das[t * gn..(t + 1) * gn];
        match cfg.cell {
            CellKind::Gru => {
                let (h_prev, rest) = row.split_at(n);
                let (z, rest) = rest.split_at(n);
                let (r, cand) = rest.split_at(n);
                let (da_zr, da_h) = da.split_at_mut(2 * n);
                for j in 0..n {
                    dprev[j] = dh[j] * z[j];
                    // z gate, before the hard-sigmoid derivative
                    da_zr[j] = dh[j] * (h_prev[j] - cand[j]);
                    da_h[j] = dh[j] * (1.0 - z[j]) * (1.0 - cand[j] * cand[j]);
                }
                // gradient w.r.t. r∘h_prev through U_h
                tmp.fill(0.0);
                gemv_acc(&mut tmp, da_h, &ut[2 * n * n..], n);
                let rh = &mut rhs[t * n..(t + 1) * n];
                for j in 0..n {
                    rh[j] = r[j] * h_prev[j];
                    dprev[j] += tmp[j] * r[j];
                    da_zr[n + j] = tmp[j] * h_prev[j] * hard_sigmoid_grad(r[j]);
                    da_zr[j] *= hard_sigmoid_grad(z[j]);
                }
                gemv_acc(&mut dprev, da_zr, ut, n);
            }
            CellKind::Lstm => {
                let (_h_prev, rest) = row.split_at(n);
                let (c_prev, rest) = rest.split_at(n);
                let (i, rest) = rest.split_at(n);
                let (f, rest) = rest.split_at(n);
                let (g, rest) = rest.split_at(n);
                let (o, tc) = rest.split_at(n);
                for j in 0..n {
                    let dcj = dc[j] + dh[j] * o[j] * (1.0 - tc[j] * tc[j]);
                    da[j] = dcj * g[j] * hard_sigmoid_grad(i[j]);
                    da[n + j] = dcj * c_prev[j] * hard_sigmoid_grad(f[j]);
                    da[2 * n + j] = dcj * i[j] * (1.0 - g[j] * g[j]);
                    da[3 * n + j] = dh[j] * tc[j] * hard_sigmoid_grad(o[j]);
                    dc[j] = dcj * f[j];
                }
                dprev.fill(0.0);
                gemv_acc(&mut dprev, da, ut, n);
            }
        }
        std::mem::swap(&mut dh, &mut dprev);
    }

    for da in das.chunks_exact(gn) {
        for (gb, d) in grads.bias.iter_mut().zip(da) {
            *gb += d;
        }
    }
    outer_acc(&mut grads.kernel, gn, inputs, gn, xs, inputs, &das, gn, steps);
    match cfg.cell {
        CellKind::Gru => {
            outer_acc(&mut grads.recurrent, gn, n, 2 * n, &trace.rows, trace.width, &das, gn, steps);
            outer_acc(&mut grads.recurrent[2 * n..], gn, n, n, &rhs, n, &das[2 * n..], gn, steps);
        }
        CellKind::Lstm => outer_acc(&mut grads.recurrent, gn, n, gn, &trace.rows, trace.width, &das, gn, steps),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blocked_kernels_match_naive() {
        let (rows, stride, off, width) = (5, 41, 3, 37);
        let m: Vec<f64> = (0..rows * stride).map(|i| ((i * 7919) % 97) as f64 / 97.0 - 0.5).collect();
        let v: Vec<f64> = (0..rows).map(|i| i as f64 * 0.3 - 0.7).collect();
        let mut out: Vec<f64> = (0..width).map(|j| j as f64 * 0.01).collect();
        let expect: Vec<f64> =
            (0..width).map(|j| out[j] + (0..rows).map(|k| v[k] * m[k * stride + off + j]).sum::<f64>()).collect();
        gemv_acc(&mut out, &v, &m[off..], stride);
        assert!(out.iter().zip(&expect).all(|(a, b)| (a - b).abs() < 1e-12));

        let t = transpose(&m, rows, stride);
        assert!((0..rows).all(|r| (0..stride).all(|c| t[c * rows + r] == m[r * stride + c])));

        let (steps, a_stride, b_stride, cols) = (7, 4, 19, 11);
        let a: Vec<f64> = (0..steps * a_stride).map(|i| (i as f64).cos()).collect();
        let b: Vec<f64> = (0..steps * b_stride).map(|i| (i as f64 * 0.3).sin()).collect();
        let mut got = vec![0.5; 3 * cols];
        outer_acc(&mut got, cols, 3, cols, &a, a_stride, &b, b_stride, steps);
        for k in 0..3 {
            for j in 0..cols {
                let naive: f64 = 0.5 + (0..steps).map(|t| a[t * a_stride + k] * b[t * b_stride + j]).sum::<f64>();
                assert!((got[k * cols + j] - naive).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f64> = (0..11).map(|i| i as f64 * 0.5 - 2.0).collect();
        let b: Vec<f64> = (0..11).map(|i| (i * i) as f64 * 0.1).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }
}
