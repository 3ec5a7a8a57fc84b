//! Forward kernels and the raw backward helpers the tape uses.
//!
//! Every kernel computes each output element with a fixed reduction order, so
//! splitting work across threads by output row never changes a result bit.

use std::sync::atomic::{AtomicBool, Ordering};

use rayon::prelude::*;

use crate::numerics::{NumericsError, Result, Tensor};
use crate::scalar::Scalar;

static PARALLEL: AtomicBool = AtomicBool::new(true);

/// Enables or disables intra-op threading. Disabled means strictly
/// single-threaded execution.
pub fn set_parallel(enabled: bool) {
    PARALLEL.store(enabled, Ordering::SeqCst);
}

pub fn parallel_enabled() -> bool {
    PARALLEL.load(Ordering::SeqCst)
}

const PAR_THRESHOLD: usize = 1 << 15;

fn use_threads(work: usize) -> bool {
    work >= PAR_THRESHOLD && parallel_enabled()
}

/// `c[m,n] = op(a)[m,k] · op(b)[k,n]`, where `op` optionally transposes the
/// stored matrix. With `a_t`, `a` is stored as `[k,m]`; with `b_t`, `b` is
/// stored as `[n,k]`.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Scalar>(
    a: &[T],
    a_t: bool,
    b: &[T],
    b_t: bool,
    m: usize,
    k: usize,
    n: usize,
    c: &mut [T],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let row = |i: usize, out: &mut [T]| {
        out.iter_mut().for_each(|v| *v = T::zero());
        match (a_t, b_t) {
            (false, false) => {
                let ar = &a[i * k..(i + 1) * k];
                for (p, &aip) in ar.iter().enumerate() {
                    if aip == T::zero() {
                        continue;
                    }
                    let br = &b[p * n..(p + 1) * n];
                    for (o, &bv) in out.iter_mut().zip(br) {
                        *o += aip * bv;
                    }
                }
            }
            (false, true) => {
                let ar = &a[i * k..(i + 1) * k];
                for (j, o) in out.iter_mut().enumerate() {
                    let br = &b[j * k..(j + 1) * k];
                    let mut acc = T::zero();
                    for (&x, &y) in ar.iter().zip(br) {
                        acc += x * y;
                    }
                    *o = acc;
                }
            }
            (true, false) => {
                for p in 0..k {
                    let aip = a[p * m + i];
                    if aip == T::zero() {
                        continue;
                    }
                    let br = &b[p * n..(p + 1) * n];
                    for (o, &bv) in out.iter_mut().zip(br) {
                        *o += aip * bv;
                    }
                }
            }
            (true, true) => {
                for (j, o) in out.iter_mut().enumerate() {
                    let mut acc = T::zero();
                    for p in 0..k {
                        acc += a[p * m + i] * b[j * k + p];
                    }
                    *o = acc;
                }
            }
        }
    };
    if use_threads(m * n * k) && m > 1 {
        c.par_chunks_mut(n).enumerate().for_each(|(i, out)| row(i, out));
    } else {
        c.chunks_mut(n).enumerate().for_each(|(i, out)| row(i, out));
    }
}

/// Batched [`gemm`] over `groups` independent matrix pairs.
#[allow(clippy::too_many_arguments)]
pub fn gemm_batched<T: Scalar>(
    a: &[T],
    a_t: bool,
    b: &[T],
    b_t: bool,
    groups: usize,
    m: usize,
    k: usize,
    n: usize,
    c: &mut [T],
) {
    let (sa, sb, sc) = (m * k, k * n, m * n);
    let one = |g: usize, out: &mut [T]| {
        gemm(&a[g * sa..(g + 1) * sa], a_t, &b[g * sb..(g + 1) * sb], b_t, m, k, n, out);
    };
    if use_threads(groups * m * n * k) && groups > 1 {
        c.par_chunks_mut(sc).enumerate().for_each(|(g, out)| one(g, out));
    } else {
        c.chunks_mut(sc).enumerate().for_each(|(g, out)| one(g, out));
    }
}

fn axis_strides(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let len = shape[axis];
    let inner = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

/// Shift-stable softmax along `axis`.
pub fn softmax<T: Scalar>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    if axis >= x.rank() {
        return Err(NumericsError::InvalidAxis { axis, rank: x.rank() });
    }
    let (outer, len, inner) = axis_strides(x.shape(), axis);
    let src = x.data();
    let mut out = vec![T::zero(); src.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut max = T::neg_infinity();
            for a in 0..len {
                max = max.max(src[base + a * inner]);
            }
            let mut total = T::zero();
            for a in 0..len {
                let e = (src[base + a * inner] - max).exp();
                out[base + a * inner] = e;
                total += e;
            }
            for a in 0..len {
                out[base + a * inner] /= total;
            }
        }
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

/// Softmax over the last axis of `[groups, queries, keys]` scores where keys
/// with `keep[g * keys + j] == false` get exactly zero weight. A row whose
/// keys are all masked comes out all-zero.
pub fn masked_softmax_rows<T: Scalar>(
    scores: &[T],
    keep: &[bool],
    groups: usize,
    queries: usize,
    keys: usize,
) -> Vec<T> {
    let mut out = vec![T::zero(); scores.len()];
    for g in 0..groups {
        let kmask = &keep[g * keys..(g + 1) * keys];
        for q in 0..queries {
            let off = (g * queries + q) * keys;
            let row = &scores[off..off + keys];
            let dst = &mut out[off..off + keys];
            let mut max = T::neg_infinity();
            for (&s, &k) in row.iter().zip(kmask) {
                if k {
                    max = max.max(s);
                }
            }
            if max == T::neg_infinity() {
                continue;
            }
            let mut total = T::zero();
            for ((d, &s), &k) in dst.iter_mut().zip(row).zip(kmask) {
                if k {
                    *d = (s - max).exp();
                    total += *d;
                }
            }
            for d in dst.iter_mut() {
                *d /= total;
            }
        }
    }
    out
}

/// Per-vector statistics of a layer normalization over the last axis.
pub struct LayerNormParts<T> {
    pub output: Tensor<T>,
    /// Normalized input before the affine map.
    pub normalized: Vec<T>,
    /// `1 / sqrt(var + eps)` per vector.
    pub rstd: Vec<T>,
}

pub fn layer_norm_parts<T: Scalar>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    bias: &Tensor<T>,
    eps: T,
) -> Result<LayerNormParts<T>> {
    let width = x.last_dim();
    if gain.len() != width || bias.len() != width {
        return Err(NumericsError::ShapeMismatch {
            op: "layer_norm",
            detail: format!("last axis {width}, gain {}, bias {}", gain.len(), bias.len()),
        });
    }
    let n = T::lit(width as f64);
    let rows = x.len() / width;
    let mut normalized = vec![T::zero(); x.len()];
    let mut out = vec![T::zero(); x.len()];
    let mut rstd = Vec::with_capacity(rows);
    for r in 0..rows {
        let v = &x.data()[r * width..(r + 1) * width];
        let mean = v.iter().copied().sum::<T>() / n;
        let var = v.iter().map(|&a| (a - mean) * (a - mean)).sum::<T>() / n;
        let rs = T::one() / (var + eps).sqrt();
        rstd.push(rs);
        for j in 0..width {
            let h = (v[j] - mean) * rs;
            normalized[r * width + j] = h;
            out[r * width + j] = h * gain.data()[j] + bias.data()[j];
        }
    }
    Ok(LayerNormParts { output: Tensor::from_parts(x.shape().to_vec(), out), normalized, rstd })
}

/// `(x - mean) / sqrt(var + eps) * gain + bias` over the last axis, with the
/// population variance.
pub fn layer_norm<T: Scalar>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    bias: &Tensor<T>,
    eps: T,
) -> Result<Tensor<T>> {
    Ok(layer_norm_parts(x, gain, bias, eps)?.output)
}

fn gelu_consts<T: Scalar>() -> (T, T) {
    (T::lit((2.0 / std::f64::consts::PI).sqrt()), T::lit(0.044715))
}

/// GELU, tanh approximation.
#[inline]
pub fn gelu<T: Scalar>(x: T) -> T {
    let (c, a) = gelu_consts::<T>();
    let half = T::lit(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

#[inline]
pub fn gelu_derivative<T: Scalar>(x: T) -> T {
    let (c, a) = gelu_consts::<T>();
    let half = T::lit(0.5);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::lit(3.0) * a * x * x)
}

/// Padding before/after for a kernel extent under "same" convolution.
pub fn same_padding(extent: usize) -> (usize, usize) {
    let before = (extent - 1) / 2;
    (before, extent - 1 - before)
}

/// Geometry of a batched 2-D convolution with stride 1 and "same" padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub rows: usize,
    pub cols: usize,
    pub kh: usize,
    pub kw: usize,
}

impl ConvGeometry {
    fn tap_range(&self, offset: usize, pad_before: usize, extent: usize) -> (usize, usize) {
        // output positions p with 0 <= p + offset - pad_before < extent
        let lo = pad_before.saturating_sub(offset);
        let hi = (extent + pad_before).saturating_sub(offset).min(extent);
        (lo, hi.max(lo))
    }
}

/// Batched same-padded convolution: input `[batch, in_ch, rows, cols]`,
/// filters `[out_ch, in_ch, kh, kw]`, bias `[out_ch]`.
pub fn conv2d_forward<T: Scalar>(
    input: &[T],
    filters: &[T],
    bias: &[T],
    g: ConvGeometry,
) -> Vec<T> {
    let plane = g.rows * g.cols;
    let (pt, _) = same_padding(g.kh);
    let (pl, _) = same_padding(g.kw);
    let mut out = vec![T::zero(); g.batch * g.out_ch * plane];
    let compute = |idx: usize, dst: &mut [T]| {
        let (n, o) = (idx / g.out_ch, idx % g.out_ch);
        dst.iter_mut().for_each(|v| *v = bias[o]);
        for c in 0..g.in_ch {
            let src = &input[(n * g.in_ch + c) * plane..(n * g.in_ch + c + 1) * plane];
            for i in 0..g.kh {
                let (r_lo, r_hi) = g.tap_range(i, pt, g.rows);
                for j in 0..g.kw {
                    let w = filters[((o * g.in_ch + c) * g.kh + i) * g.kw + j];
                    if w == T::zero() {
                        continue;
                    }
                    let (c_lo, c_hi) = g.tap_range(j, pl, g.cols);
                    for r in r_lo..r_hi {
                        let sr = r + i - pt;
                        let d = &mut dst[r * g.cols + c_lo..r * g.cols + c_hi];
                        let s = &src[sr * g.cols + c_lo + j - pl..sr * g.cols + c_hi + j - pl];
                        for (dv, &sv) in d.iter_mut().zip(s) {
                            *dv += w * sv;
                        }
                    }
                }
            }
        }
    };
    let work = g.batch * g.out_ch * g.in_ch * plane * g.kh * g.kw;
    if use_threads(work) {
        out.par_chunks_mut(plane).enumerate().for_each(|(idx, d)| compute(idx, d));
    } else {
        out.chunks_mut(plane).enumerate().for_each(|(idx, d)| compute(idx, d));
    }
    out
}

/// Gradients of [`conv2d_forward`] with respect to input, filters and bias.
pub fn conv2d_backward<T: Scalar>(
    input: &[T],
    filters: &[T],
    grad_out: &[T],
    g: ConvGeometry,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let plane = g.rows * g.cols;
    let (pt, _) = same_padding(g.kh);
    let (pl, _) = same_padding(g.kw);

    // input gradient, one (n, c) plane per task
    let mut d_input = vec![T::zero(); input.len()];
    let in_task = |idx: usize, dst: &mut [T]| {
        let (n, c) = (idx / g.in_ch, idx % g.in_ch);
        for o in 0..g.out_ch {
            let go = &grad_out[(n * g.out_ch + o) * plane..(n * g.out_ch + o + 1) * plane];
            for i in 0..g.kh {
                let (r_lo, r_hi) = g.tap_range(i, pt, g.rows);
                for j in 0..g.kw {
                    let w = filters[((o * g.in_ch + c) * g.kh + i) * g.kw + j];
                    if w == T::zero() {
                        continue;
                    }
                    let (c_lo, c_hi) = g.tap_range(j, pl, g.cols);
                    for r in r_lo..r_hi {
                        let sr = r + i - pt;
                        let s = &go[r * g.cols + c_lo..r * g.cols + c_hi];
                        let d = &mut dst[sr * g.cols + c_lo + j - pl..sr * g.cols + c_hi + j - pl];
                        for (dv, &gv) in d.iter_mut().zip(s) {
                            *dv += w * gv;
                        }
                    }
                }
            }
        }
    };
    let work = g.batch * g.out_ch * g.in_ch * plane * g.kh * g.kw;
    if use_threads(work) {
        d_input.par_chunks_mut(plane).enumerate().for_each(|(idx, d)| in_task(idx, d));
    } else {
        d_input.chunks_mut(plane).enumerate().for_each(|(idx, d)| in_task(idx, d));
    }

    // filter gradient, one (o, c) kernel per task; batch summed in order
    let ksize = g.kh * g.kw;
    let mut d_filters = vec![T::zero(); filters.len()];
    let f_task = |idx: usize, dst: &mut [T]| {
        let (o, c) = (idx / g.in_ch, idx % g.in_ch);
        for n in 0..g.batch {
            let go = &grad_out[(n * g.out_ch + o) * plane..(n * g.out_ch + o + 1) * plane];
            let src = &input[(n * g.in_ch + c) * plane..(n * g.in_ch + c + 1) * plane];
            for i in 0..g.kh {
                let (r_lo, r_hi) = g.tap_range(i, pt, g.rows);
                for j in 0..g.kw {
                    let (c_lo, c_hi) = g.tap_range(j, pl, g.cols);
                    let mut acc = T::zero();
                    for r in r_lo..r_hi {
                        let sr = r + i - pt;
                        let a = &go[r * g.cols + c_lo..r * g.cols + c_hi];
                        let b = &src[sr * g.cols + c_lo + j - pl..sr * g.cols + c_hi + j - pl];
                        for (&x, &y) in a.iter().zip(b) {
                            acc += x * y;
                        }
                    }
                    dst[i * g.kw + j] += acc;
                }
            }
        }
    };
    if use_threads(work) {
        d_filters.par_chunks_mut(ksize).enumerate().for_each(|(idx, d)| f_task(idx, d));
    } else {
        d_filters.chunks_mut(ksize).enumerate().for_each(|(idx, d)| f_task(idx, d));
    }

    let mut d_bias = vec![T::zero(); g.out_ch];
    for n in 0..g.batch {
        for (o, db) in d_bias.iter_mut().enumerate() {
            let go = &grad_out[(n * g.out_ch + o) * plane..(n * g.out_ch + o + 1) * plane];
            *db += go.iter().copied().sum::<T>();
        }
    }
    (d_input, d_filters, d_bias)
}

/// Single-example same-padded convolution: `[channels, rows, cols]` input,
/// `[out_ch, in_ch, kh, kw]` filters, `[out_ch]` bias.
pub fn conv2d_same<T: Scalar>(
    input: &Tensor<T>,
    filters: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    if input.rank() != 3 || filters.rank() != 4 {
        return Err(NumericsError::ShapeMismatch {
            op: "conv2d_same",
            detail: format!("input {:?}, filters {:?}", input.shape(), filters.shape()),
        });
    }
    let g = conv_geometry(1, input.shape(), filters.shape(), bias.len())?;
    let out = conv2d_forward(input.data(), filters.data(), bias.data(), g);
    Tensor::new(vec![g.out_ch, g.rows, g.cols], out)
}

pub(crate) fn conv_geometry(
    batch: usize,
    spatial: &[usize],
    filters: &[usize],
    bias_len: usize,
) -> Result<ConvGeometry> {
    let (in_ch, rows, cols) = (spatial[0], spatial[1], spatial[2]);
    let (out_ch, f_in, kh, kw) = (filters[0], filters[1], filters[2], filters[3]);
    if f_in != in_ch || bias_len != out_ch {
        return Err(NumericsError::ShapeMismatch {
            op: "conv2d",
            detail: format!(
                "input channels {in_ch}, filter channels {f_in}, out channels {out_ch}, bias {bias_len}"
            ),
        });
    }
    Ok(ConvGeometry { batch, in_ch, out_ch, rows, cols, kh, kw })
}

/// Mean masked cross-entropy and its row-wise softmax, which the backward pass
/// reuses.
pub struct CrossEntropyParts<T> {
    pub loss: T,
    /// Rows that carried a target.
    pub active: usize,
    pub probs: Vec<T>,
}

/// Mean of `-log softmax(logits)[target]` over rows whose target is `Some`.
/// With no active rows the loss is zero and `active == 0`.
pub fn masked_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    targets: &[Option<u32>],
) -> Result<CrossEntropyParts<T>> {
    if logits.rank() != 2 || logits.shape()[0] != targets.len() {
        return Err(NumericsError::ShapeMismatch {
            op: "masked_cross_entropy",
            detail: format!("logits {:?}, {} targets", logits.shape(), targets.len()),
        });
    }
    let classes = logits.shape()[1];
    let mut probs = vec![T::zero(); logits.len()];
    let mut total = T::zero();
    let mut active = 0usize;
    for (r, target) in targets.iter().enumerate() {
        let Some(t) = *target else { continue };
        let t = t as usize;
        if t >= classes {
            return Err(NumericsError::TargetOutOfRange { target: t, classes });
        }
        let row = &logits.data()[r * classes..(r + 1) * classes];
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let dst = &mut probs[r * classes..(r + 1) * classes];
        let mut z = T::zero();
        for (d, &v) in dst.iter_mut().zip(row) {
            *d = (v - max).exp();
            z += *d;
        }
        for d in dst.iter_mut() {
            *d /= z;
        }
        total += z.ln() + max - row[t];
        active += 1;
    }
    let loss = if active == 0 { T::zero() } else { total / T::lit(active as f64) };
    Ok(CrossEntropyParts { loss, active, probs })
}

/// Permutes the axes of `x`; `axes[i]` is the source axis of output axis `i`.
pub fn permute<T: Scalar>(x: &Tensor<T>, axes: &[usize]) -> Result<Tensor<T>> {
    let rank = x.rank();
    let mut seen = vec![false; rank];
    if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true))
    {
        return Err(NumericsError::ShapeMismatch {
            op: "permute",
            detail: format!("axes {axes:?} for rank {rank}"),
        });
    }
    let shape = x.shape();
    let mut src_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        src_strides[i] = src_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| src_strides[a]).collect();
    let mut out = Vec::with_capacity(x.len());
    let mut idx = vec![0usize; rank];
    let src = x.data();
    for _ in 0..x.len() {
        let off: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
        out.push(src[off]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    Ok(Tensor::from_parts(out_shape, out))
}

pub fn inverse_axes(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}
