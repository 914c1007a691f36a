//! Forward and adjoint kernels for the primitive [`OpKind`]s.

use super::graph::{Attrs, OpKind};
use super::{Result, Tensor, TensorError};

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

fn arity(kind: OpKind, inputs: &[&Tensor], expected: usize) -> Result<()> {
    if inputs.len() != expected {
        return Err(TensorError::Arity {
            kind: kind.name(),
            expected,
            got: inputs.len(),
        });
    }
    Ok(())
}

fn shape_err(kind: OpKind, detail: String) -> TensorError {
    TensorError::Shape {
        kind: kind.name(),
        detail,
    }
}

fn tensor(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
    Tensor::new(shape, data).expect("kernel produced consistent shape")
}

/// Split `shape` around `axis` into (outer, axis length, inner) extents.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

// ---------------------------------------------------------------------------
// broadcasting

enum Bcast {
    Same,
    /// `b` is a scalar or matches the trailing extent of `a`.
    RhsCycle(usize),
    /// `a` is a scalar or matches the trailing extent of `b`.
    LhsCycle(usize),
    General {
        out: Vec<usize>,
        sa: Vec<usize>,
        sb: Vec<usize>,
    },
}

fn broadcast_plan(kind: OpKind, a: &[usize], b: &[usize]) -> Result<(Vec<usize>, Bcast)> {
    if a == b {
        return Ok((a.to_vec(), Bcast::Same));
    }
    let rank = a.len().max(b.len());
    let pad = |s: &[usize]| {
        let mut v = vec![1; rank - s.len()];
        v.extend_from_slice(s);
        v
    };
    let (pa, pb) = (pad(a), pad(b));
    let mut out = Vec::with_capacity(rank);
    for (i, (&x, &y)) in pa.iter().zip(&pb).enumerate() {
        out.push(match (x, y) {
            _ if x == y => x,
            (1, _) => y,
            (_, 1) => x,
            _ => {
                return Err(shape_err(
                    kind,
                    format!("cannot broadcast {a:?} with {b:?} (axis {i}: {x} vs {y})"),
                ))
            }
        });
    }
    let nb: usize = b.iter().product();
    let na: usize = a.iter().product();
    let is_suffix = |small: &[usize], n: usize| {
        n == 1 || {
            let s: Vec<usize> = small.iter().copied().skip_while(|&d| d == 1).collect();
            out.ends_with(&s) && s.iter().product::<usize>() == n
        }
    };
    if out == pa && is_suffix(b, nb) {
        return Ok((out, Bcast::RhsCycle(nb)));
    }
    if out == pb && is_suffix(a, na) {
        return Ok((out, Bcast::LhsCycle(na)));
    }
    let strides = |p: &[usize]| {
        let mut s = vec![0; rank];
        let mut acc = 1;
        for i in (0..rank).rev() {
            s[i] = if p[i] == 1 { 0 } else { acc };
            acc *= p[i];
        }
        s
    };
    let (sa, sb) = (strides(&pa), strides(&pb));
    Ok((out.clone(), Bcast::General { out, sa, sb }))
}

/// Visit `(out_index, a_index, b_index)` for every output element.
fn for_each_pair(plan: &Bcast, n_out: usize, mut f: impl FnMut(usize, usize, usize)) {
    match plan {
        Bcast::Same => (0..n_out).for_each(|i| f(i, i, i)),
        Bcast::RhsCycle(nb) => (0..n_out).for_each(|i| f(i, i, i % nb)),
        Bcast::LhsCycle(na) => (0..n_out).for_each(|i| f(i, i % na, i)),
        Bcast::General { out, sa, sb } => {
            let rank = out.len();
            let mut idx = vec![0usize; rank];
            let (mut ia, mut ib) = (0usize, 0usize);
            for i in 0..n_out {
                f(i, ia, ib);
                for d in (0..rank).rev() {
                    idx[d] += 1;
                    ia += sa[d];
                    ib += sb[d];
                    if idx[d] < out[d] {
                        break;
                    }
                    ia -= sa[d] * out[d];
                    ib -= sb[d] * out[d];
                    idx[d] = 0;
                }
            }
        }
    }
}

fn binary_forward(kind: OpKind, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    let (out_shape, plan) = broadcast_plan(kind, a.shape(), b.shape())?;
    let n: usize = out_shape.iter().product();
    let mut out = vec![0.0; n];
    let (ad, bd) = (a.data(), b.data());
    for_each_pair(&plan, n, |i, ia, ib| out[i] = f(ad[ia], bd[ib]));
    Ok(tensor(out_shape, out))
}

/// Accumulate `g * da` and `g * db` reduced onto the input shapes.
fn binary_backward(
    kind: OpKind,
    a: &Tensor,
    b: &Tensor,
    g: &[f64],
    needs: &[bool],
    partials: impl Fn(f64, f64) -> (f64, f64),
) -> Vec<Option<Vec<f64>>> {
    let (_, plan) = broadcast_plan(kind, a.shape(), b.shape()).expect("validated in forward");
    let mut da = needs[0].then(|| vec![0.0; a.len()]);
    let mut db = needs[1].then(|| vec![0.0; b.len()]);
    let (ad, bd) = (a.data(), b.data());
    for_each_pair(&plan, g.len(), |i, ia, ib| {
        let (pa, pb) = partials(ad[ia], bd[ib]);
        if let Some(da) = da.as_mut() {
            da[ia] += g[i] * pa;
        }
        if let Some(db) = db.as_mut() {
            db[ib] += g[i] * pb;
        }
    });
    vec![da, db]
}

// ---------------------------------------------------------------------------
// dense helpers

/// `c[m,n] += a[m,k] * b[k,n]`
pub(crate) fn gemm_nn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &aip) in arow.iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cj, &bj) in crow.iter_mut().zip(brow) {
                *cj += aip * bj;
            }
        }
    }
}

/// `c[m,k] += a[m,n] * b[k,n]^T`
pub(crate) fn gemm_nt(m: usize, n: usize, k: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let dot: f64 = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
            c[i * k + p] += dot;
        }
    }
}

/// `c[k,n] += a[m,k]^T * b[m,n]`
pub(crate) fn gemm_tn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (p, &aip) in arow.iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for (cj, &bj) in crow.iter_mut().zip(brow) {
                *cj += aip * bj;
            }
        }
    }
}

fn softmax_rows(x: &[f64], cols: usize, log: bool) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    if cols == 0 {
        return out;
    }
    for (xr, yr) in x.chunks_exact(cols).zip(out.chunks_exact_mut(cols)) {
        let max = xr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (y, &v) in yr.iter_mut().zip(xr) {
            *y = (v - max).exp();
            z += *y;
        }
        if log {
            let lz = z.ln() + max;
            for (y, &v) in yr.iter_mut().zip(xr) {
                *y = v - lz;
            }
        } else {
            yr.iter_mut().for_each(|y| *y /= z);
        }
    }
    out
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_K * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * GELU_K * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn resolve_axis(kind: OpKind, attrs: &Attrs, rank: usize) -> Result<usize> {
    let axis = attrs.axis.ok_or_else(|| TensorError::Attr {
        kind: kind.name(),
        detail: "missing axis".into(),
    })?;
    if axis >= rank {
        return Err(TensorError::Attr {
            kind: kind.name(),
            detail: format!("axis {axis} out of range for rank {rank}"),
        });
    }
    Ok(axis)
}

fn reduced_shape(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s: Vec<usize> = shape.to_vec();
    s.remove(axis);
    if s.is_empty() {
        s.push(1);
    }
    s
}

// ---------------------------------------------------------------------------
// forward

pub(crate) fn forward(kind: OpKind, inputs: &[&Tensor], attrs: &Attrs) -> Result<(Tensor, Vec<f64>)> {
    use OpKind::*;
    let none = Vec::new();
    match kind {
        MatMul => {
            arity(kind, inputs, 2)?;
            let (a, b) = (inputs[0], inputs[1]);
            if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
                return Err(shape_err(
                    kind,
                    format!("cannot multiply {:?} by {:?}", a.shape(), b.shape()),
                ));
            }
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            let mut c = vec![0.0; m * n];
            gemm_nn(m, k, n, a.data(), b.data(), &mut c);
            Ok((tensor(vec![m, n], c), none))
        }
        Add | Sub | Mul | Div => {
            arity(kind, inputs, 2)?;
            let f: fn(f64, f64) -> f64 = match kind {
                Add => |x, y| x + y,
                Sub => |x, y| x - y,
                Mul => |x, y| x * y,
                _ => |x, y| x / y,
            };
            Ok((binary_forward(kind, inputs[0], inputs[1], f)?, none))
        }
        Scale => {
            arity(kind, inputs, 1)?;
            let c = attrs.value;
            Ok((inputs[0].map(|x| x * c), none))
        }
        Transpose => {
            arity(kind, inputs, 1)?;
            let a = inputs[0];
            if a.rank() != 2 {
                return Err(shape_err(kind, format!("expected rank 2, got {:?}", a.shape())));
            }
            let (m, n) = (a.shape()[0], a.shape()[1]);
            let mut out = vec![0.0; m * n];
            let d = a.data();
            for i in 0..m {
                for j in 0..n {
                    out[j * m + i] = d[i * n + j];
                }
            }
            Ok((tensor(vec![n, m], out), none))
        }
        Reshape => {
            arity(kind, inputs, 1)?;
            let a = inputs[0];
            let out = a.reshaped(attrs.shape.clone()).map_err(|_| {
                shape_err(
                    kind,
                    format!("cannot reshape {:?} into {:?}", a.shape(), attrs.shape),
                )
            })?;
            Ok((out, none))
        }
        Concat => {
            if inputs.is_empty() {
                return Err(TensorError::Arity {
                    kind: kind.name(),
                    expected: 1,
                    got: 0,
                });
            }
            let first = inputs[0].shape();
            let axis = resolve_axis(kind, attrs, first.len())?;
            let mut total = 0;
            for (i, t) in inputs.iter().enumerate() {
                let s = t.shape();
                let ok = s.len() == first.len()
                    && s.iter().zip(first).enumerate().all(|(d, (x, y))| d == axis || x == y);
                if !ok {
                    return Err(shape_err(
                        kind,
                        format!("input {i} has shape {s:?}, incompatible with {first:?} on axis {axis}"),
                    ));
                }
                total += s[axis];
            }
            let mut out_shape = first.to_vec();
            out_shape[axis] = total;
            let (outer, _, inner) = split_axis(first, axis);
            let mut out = Vec::with_capacity(out_shape.iter().product());
            for o in 0..outer {
                for t in inputs {
                    let chunk = t.shape()[axis] * inner;
                    out.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
                }
            }
            Ok((tensor(out_shape, out), none))
        }
        Slice => {
            arity(kind, inputs, 1)?;
            let a = inputs[0];
            let axis = resolve_axis(kind, attrs, a.rank())?;
            let (start, end) = (attrs.start, attrs.end);
            if start > end || end > a.shape()[axis] {
                return Err(shape_err(
                    kind,
                    format!(
                        "range {start}..{end} out of bounds for axis {axis} of {:?}",
                        a.shape()
                    ),
                ));
            }
            let (outer, len, inner) = split_axis(a.shape(), axis);
            let mut out = Vec::with_capacity(outer * (end - start) * inner);
            for o in 0..outer {
                let base = o * len * inner;
                out.extend_from_slice(&a.data()[base + start * inner..base + end * inner]);
            }
            let mut shape = a.shape().to_vec();
            shape[axis] = end - start;
            Ok((tensor(shape, out), none))
        }
        Softmax | LogSoftmax => {
            arity(kind, inputs, 1)?;
            let a = inputs[0];
            let out = softmax_rows(a.data(), a.cols(), kind == LogSoftmax);
            Ok((tensor(a.shape().to_vec(), out), none))
        }
        Sigmoid | Gelu | Relu | Tanh | Abs | Exp | Log => {
            arity(kind, inputs, 1)?;
            let f: fn(f64) -> f64 = match kind {
                Sigmoid => sigmoid,
                Gelu => gelu,
                Relu => |x| x.max(0.0),
                Tanh => f64::tanh,
                Abs => f64::abs,
                Exp => f64::exp,
                _ => f64::ln,
            };
            Ok((inputs[0].map(f), none))
        }
        LayerNorm => {
            if inputs.len() != 1 && inputs.len() != 3 {
                return Err(TensorError::Arity {
                    kind: kind.name(),
                    expected: 3,
                    got: inputs.len(),
                });
            }
            let x = inputs[0];
            let n = x.cols();
            if inputs.len() == 3 && (inputs[1].len() != n || inputs[2].len() != n) {
                return Err(shape_err(
                    kind,
                    format!(
                        "gain {:?} / bias {:?} must match last axis {n}",
                        inputs[1].shape(),
                        inputs[2].shape()
                    ),
                ));
            }
            let eps = if attrs.eps > 0.0 { attrs.eps } else { 1e-5 };
            let rows = x.rows();
            let mut out = vec![0.0; x.len()];
            let mut saved = Vec::with_capacity(2 * rows);
            for r in 0..rows {
                let xr = &x.data()[r * n..(r + 1) * n];
                let mean = xr.iter().sum::<f64>() / n as f64;
                let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                let rstd = 1.0 / (var + eps).sqrt();
                saved.push(mean);
                saved.push(rstd);
                for j in 0..n {
                    let xhat = (xr[j] - mean) * rstd;
                    out[r * n + j] = if inputs.len() == 3 {
                        xhat * inputs[1].data()[j] + inputs[2].data()[j]
                    } else {
                        xhat
                    };
                }
            }
            Ok((tensor(x.shape().to_vec(), out), saved))
        }
        Conv1d => {
            arity(kind, inputs, 2)?;
            let (x, w) = (inputs[0], inputs[1]);
            if x.rank() != 2 || w.rank() != 3 || w.shape()[1] != x.shape()[1] {
                return Err(shape_err(
                    kind,
                    format!(
                        "expected input [T, c_in] and weight [k, c_in, c_out], got {:?} and {:?}",
                        x.shape(),
                        w.shape()
                    ),
                ));
            }
            let stride = attrs.stride.max(1);
            let (t_in, c_in) = (x.shape()[0], x.shape()[1]);
            let (k, c_out) = (w.shape()[0], w.shape()[2]);
            let t_out = t_in.div_ceil(stride);
            let pad = k / 2;
            let mut out = vec![0.0; t_out * c_out];
            for t in 0..t_out {
                for j in 0..k {
                    let src = (t * stride + j) as isize - pad as isize;
                    if src < 0 || src as usize >= t_in {
                        continue;
                    }
                    let xr = &x.data()[src as usize * c_in..(src as usize + 1) * c_in];
                    let wj = &w.data()[j * c_in * c_out..(j + 1) * c_in * c_out];
                    gemm_nn(1, c_in, c_out, xr, wj, &mut out[t * c_out..(t + 1) * c_out]);
                }
            }
            Ok((tensor(vec![t_out, c_out], out), none))
        }
        MaskedFill => {
            arity(kind, inputs, 1)?;
            let a = inputs[0];
            let mask = attrs.mask.as_ref().ok_or_else(|| TensorError::Attr {
                kind: kind.name(),
                detail: "missing mask".into(),
            })?;
            if mask.len() != a.len() {
                return Err(shape_err(
                    kind,
                    format!("mask has {} entries, input {:?} has {}", mask.len(), a.shape(), a.len()),
                ));
            }
            let v = attrs.value;
            let out = a
                .data()
                .iter()
                .zip(mask.iter())
                .map(|(&x, &m)| if m { v } else { x })
                .collect();
            Ok((tensor(a.shape().to_vec(), out), none))
        }
        Sum | Mean => {
            arity(kind, inputs, 1)?;
            let a = inputs[0];
            match attrs.axis {
                None => {
                    let s: f64 = a.data().iter().sum();
                    let v = if kind == Mean { s / a.len().max(1) as f64 } else { s };
                    Ok((Tensor::scalar(v), none))
                }
                Some(_) => {
                    let axis = resolve_axis(kind, attrs, a.rank())?;
                    let (outer, len, inner) = split_axis(a.shape(), axis);
                    let mut out = vec![0.0; outer * inner];
                    for o in 0..outer {
                        for l in 0..len {
                            let src = &a.data()[(o * len + l) * inner..(o * len + l + 1) * inner];
                            for (d, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    }
                    if kind == Mean && len > 0 {
                        out.iter_mut().for_each(|v| *v /= len as f64);
                    }
                    Ok((tensor(reduced_shape(a.shape(), axis), out), none))
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// backward

pub(crate) fn backward(
    kind: OpKind,
    attrs: &Attrs,
    inputs: &[&Tensor],
    output: &Tensor,
    saved: &[f64],
    g: &[f64],
    needs: &[bool],
) -> Vec<Option<Vec<f64>>> {
    use OpKind::*;
    match kind {
        MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            let da = needs[0].then(|| {
                let mut da = vec![0.0; m * k];
                gemm_nt(m, n, k, g, b.data(), &mut da);
                da
            });
            let db = needs[1].then(|| {
                let mut db = vec![0.0; k * n];
                gemm_tn(m, k, n, a.data(), g, &mut db);
                db
            });
            vec![da, db]
        }
        Add => binary_backward(kind, inputs[0], inputs[1], g, needs, |_, _| (1.0, 1.0)),
        Sub => binary_backward(kind, inputs[0], inputs[1], g, needs, |_, _| (1.0, -1.0)),
        Mul => binary_backward(kind, inputs[0], inputs[1], g, needs, |x, y| (y, x)),
        Div => binary_backward(kind, inputs[0], inputs[1], g, needs, |x, y| {
            (1.0 / y, -x / (y * y))
        }),
        Scale => {
            let c = attrs.value;
            vec![Some(g.iter().map(|v| v * c).collect())]
        }
        Transpose => {
            let (m, n) = (inputs[0].shape()[0], inputs[0].shape()[1]);
            let mut da = vec![0.0; m * n];
            for i in 0..m {
                for j in 0..n {
                    da[i * n + j] = g[j * m + i];
                }
            }
            vec![Some(da)]
        }
        Reshape => vec![Some(g.to_vec())],
        Concat => {
            let axis = attrs.axis.expect("validated");
            let (outer, _, inner) = split_axis(inputs[0].shape(), axis);
            let total = output.shape()[axis];
            let mut grads: Vec<Option<Vec<f64>>> = inputs
                .iter()
                .zip(needs)
                .map(|(t, &need)| need.then(|| Vec::with_capacity(t.len())))
                .collect();
            for o in 0..outer {
                let mut offset = o * total * inner;
                for (t, grad) in inputs.iter().zip(grads.iter_mut()) {
                    let chunk = t.shape()[axis] * inner;
                    if let Some(grad) = grad {
                        grad.extend_from_slice(&g[offset..offset + chunk]);
                    }
                    offset += chunk;
                }
            }
            grads
        }
        Slice => {
            let a = inputs[0];
            let axis = attrs.axis.expect("validated");
            let (outer, len, inner) = split_axis(a.shape(), axis);
            let width = (attrs.end - attrs.start) * inner;
            let mut da = vec![0.0; a.len()];
            for o in 0..outer {
                let base = o * len * inner + attrs.start * inner;
                da[base..base + width].copy_from_slice(&g[o * width..(o + 1) * width]);
            }
            vec![Some(da)]
        }
        Softmax => {
            let cols = output.cols();
            let y = output.data();
            let mut da = vec![0.0; y.len()];
            for r in 0..output.rows() {
                let (yr, gr) = (&y[r * cols..(r + 1) * cols], &g[r * cols..(r + 1) * cols]);
                let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for j in 0..cols {
                    da[r * cols + j] = yr[j] * (gr[j] - dot);
                }
            }
            vec![Some(da)]
        }
        LogSoftmax => {
            let cols = output.cols();
            let y = output.data();
            let mut da = vec![0.0; y.len()];
            for r in 0..output.rows() {
                let (yr, gr) = (&y[r * cols..(r + 1) * cols], &g[r * cols..(r + 1) * cols]);
                let total: f64 = gr.iter().sum();
                for j in 0..cols {
                    da[r * cols + j] = gr[j] - yr[j].exp() * total;
                }
            }
            vec![Some(da)]
        }
        Sigmoid => {
            let y = output.data();
            vec![Some(g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect())]
        }
        Tanh => {
            let y = output.data();
            vec![Some(g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect())]
        }
        Exp => {
            let y = output.data();
            vec![Some(g.iter().zip(y).map(|(g, y)| g * y).collect())]
        }
        Gelu | Relu | Abs | Log => {
            let x = inputs[0].data();
            let d: fn(f64) -> f64 = match kind {
                Gelu => gelu_grad,
                Relu => |x| if x > 0.0 { 1.0 } else { 0.0 },
                Abs => |x| {
                    if x > 0.0 {
                        1.0
                    } else if x < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                },
                _ => |x| 1.0 / x,
            };
            vec![Some(g.iter().zip(x).map(|(g, &x)| g * d(x)).collect())]
        }
        LayerNorm => {
            let x = inputs[0];
            let n = x.cols();
            let affine = inputs.len() == 3;
            let mut dx = vec![0.0; x.len()];
            let mut dgain = vec![0.0; n];
            let mut dbias = vec![0.0; n];
            let mut dxhat = vec![0.0; n];
            let mut xhat = vec![0.0; n];
            for r in 0..x.rows() {
                let (mean, rstd) = (saved[2 * r], saved[2 * r + 1]);
                let xr = &x.data()[r * n..(r + 1) * n];
                let gr = &g[r * n..(r + 1) * n];
                for j in 0..n {
                    xhat[j] = (xr[j] - mean) * rstd;
                    let gamma = if affine { inputs[1].data()[j] } else { 1.0 };
                    dxhat[j] = gr[j] * gamma;
                    dgain[j] += gr[j] * xhat[j];
                    dbias[j] += gr[j];
                }
                let m1 = dxhat.iter().sum::<f64>() / n as f64;
                let m2 = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                for j in 0..n {
                    dx[r * n + j] = rstd * (dxhat[j] - m1 - xhat[j] * m2);
                }
            }
            if affine {
                vec![Some(dx), Some(dgain), Some(dbias)]
            } else {
                vec![Some(dx)]
            }
        }
        Conv1d => {
            let (x, w) = (inputs[0], inputs[1]);
            let stride = attrs.stride.max(1);
            let (t_in, c_in) = (x.shape()[0], x.shape()[1]);
            let (k, c_out) = (w.shape()[0], w.shape()[2]);
            let t_out = output.shape()[0];
            let pad = k / 2;
            let mut dx = needs[0].then(|| vec![0.0; x.len()]);
            let mut dw = needs[1].then(|| vec![0.0; w.len()]);
            for t in 0..t_out {
                let gr = &g[t * c_out..(t + 1) * c_out];
                for j in 0..k {
                    let src = (t * stride + j) as isize - pad as isize;
                    if src < 0 || src as usize >= t_in {
                        continue;
                    }
                    let src = src as usize;
                    let wj = &w.data()[j * c_in * c_out..(j + 1) * c_in * c_out];
                    if let Some(dx) = dx.as_mut() {
                        gemm_nt(1, c_out, c_in, gr, wj, &mut dx[src * c_in..(src + 1) * c_in]);
                    }
                    if let Some(dw) = dw.as_mut() {
                        let xr = &x.data()[src * c_in..(src + 1) * c_in];
                        gemm_tn(
                            1,
                            c_in,
                            c_out,
                            xr,
                            gr,
                            &mut dw[j * c_in * c_out..(j + 1) * c_in * c_out],
                        );
                    }
                }
            }
            vec![dx, dw]
        }
        MaskedFill => {
            let mask = attrs.mask.as_ref().expect("validated");
            vec![Some(
                g.iter()
                    .zip(mask.iter())
                    .map(|(&g, &m)| if m { 0.0 } else { g })
                    .collect(),
            )]
        }
        Sum | Mean => {
            let a = inputs[0];
            match attrs.axis {
                None => {
                    let scale = if kind == Mean { 1.0 / a.len().max(1) as f64 } else { 1.0 };
                    vec![Some(vec![g[0] * scale; a.len()])]
                }
                Some(axis) => {
                    let (outer, len, inner) = split_axis(a.shape(), axis);
                    let scale = if kind == Mean && len > 0 { 1.0 / len as f64 } else { 1.0 };
                    let mut da = vec![0.0; a.len()];
                    for o in 0..outer {
                        for l in 0..len {
                            let dst = &mut da[(o * len + l) * inner..(o * len + l + 1) * inner];
                            for (d, s) in dst.iter_mut().zip(&g[o * inner..(o + 1) * inner]) {
                                *d = s * scale;
                            }
                        }
                    }
                    vec![Some(da)]
                }
            }
        }
    }
}
