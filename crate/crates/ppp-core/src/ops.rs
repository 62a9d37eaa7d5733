//! Forward/backward primitives: convolution, pooling, batchnorm, ReLU,
//! global average pooling, linear, softmax cross-entropy.
//!
//! Conventions shared by every op:
//! - Convolution and pooling are always VALID. Padding is a separate,
//!   explicit op applied beforehand (see `padding`).
//! - Storage is the tensor element type; every reduction accumulates in
//!   `f64` with a fixed sequential order.
//! - Parallel loops split over independent output slices only, so each
//!   element is produced by exactly one task with a deterministic inner
//!   order. Results are bit-identical for any thread count.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, TensorBase};
use rayon::prelude::*;

/// Valid 2-D convolution. `kernel` is (out_ch, in_ch, kh, kw), `bias` one
/// value per output channel, `stride` is (sy, sx).
pub fn conv2d<T: Scalar>(
    input: &TensorBase<T>,
    kernel: &TensorBase<T>,
    bias: &[T],
    stride: (usize, usize),
) -> Result<TensorBase<T>> {
    let is = input.shape();
    let ks = kernel.shape();
    let (sy, sx) = stride;
    if sy == 0 || sx == 0 {
        return Err(Error::ShapeMismatch { op: "conv2d", detail: "zero stride".into() });
    }
    if ks.c != is.c {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            detail: format!("kernel in_ch {} != input channels {}", ks.c, is.c),
        });
    }
    if bias.len() != ks.n {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            detail: format!("bias len {} != out_ch {}", bias.len(), ks.n),
        });
    }
    if is.h < ks.h || is.w < ks.w {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            detail: format!("input {}x{} smaller than kernel {}x{}", is.h, is.w, ks.h, ks.w),
        });
    }
    input.check_finite("conv2d input")?;

    let oh = (is.h - ks.h) / sy + 1;
    let ow = (is.w - ks.w) / sx + 1;
    let mut out = TensorBase::zeros(Shape::new(is.n, ks.n, oh, ow));

    // One task per (sample, out channel) plane; accumulation runs in the
    // element type over a fixed (ci, ky, ox, kx) order, so results are
    // independent of thread count.
    out.data_mut()
        .par_chunks_mut(oh * ow)
        .enumerate()
        .for_each(|(plane_idx, out_plane)| {
            let n = plane_idx / ks.n;
            let co = plane_idx % ks.n;
            let b = bias[co];
            for v in out_plane.iter_mut() {
                *v = b;
            }
            for ci in 0..is.c {
                let ip = input.plane(n, ci);
                for ky in 0..ks.h {
                    let krow_base = ((co * ks.c + ci) * ks.h + ky) * ks.w;
                    let kd = &kernel.data()[krow_base..krow_base + ks.w];
                    for oy in 0..oh {
                        let irow = (oy * sy + ky) * is.w;
                        let orow = oy * ow;
                        for (kx, &kv) in kd.iter().enumerate() {
                            let src = &ip[irow + kx..];
                            if sx == 1 {
                                for (o, s) in out_plane[orow..orow + ow].iter_mut().zip(src) {
                                    *o = *o + *s * kv;
                                }
                            } else {
                                for ox in 0..ow {
                                    out_plane[orow + ox] =
                                        out_plane[orow + ox] + src[ox * sx] * kv;
                                }
                            }
                        }
                    }
                }
            }
        });
    out.check_finite("conv2d")?;
    Ok(out)
}

/// Gradients of `conv2d` w.r.t. input, kernel and bias.
pub fn conv2d_backward<T: Scalar>(
    input: &TensorBase<T>,
    kernel: &TensorBase<T>,
    stride: (usize, usize),
    grad_out: &TensorBase<T>,
) -> (TensorBase<T>, TensorBase<T>, Vec<T>) {
    let is = input.shape();
    let ks = kernel.shape();
    let os = grad_out.shape();
    let (sy, sx) = stride;

    // grad wrt input: one task per (sample, in channel) plane; scatter into
    // the task-owned plane in a fixed order.
    let mut grad_in = TensorBase::zeros(is);
    grad_in
        .data_mut()
        .par_chunks_mut(is.h * is.w)
        .enumerate()
        .for_each(|(plane_idx, gi_plane)| {
            let n = plane_idx / is.c;
            let ci = plane_idx % is.c;
            for co in 0..ks.n {
                let gp = grad_out.plane(n, co);
                for ky in 0..ks.h {
                    let krow = ((co * ks.c + ci) * ks.h + ky) * ks.w;
                    let kd = &kernel.data()[krow..krow + ks.w];
                    for oy in 0..os.h {
                        let irow = (oy * sy + ky) * is.w;
                        let grow = &gp[oy * os.w..(oy + 1) * os.w];
                        // Fixed kernel tap: a contiguous (or strided) axpy.
                        for (kx, &kv) in kd.iter().enumerate() {
                            if sx == 1 {
                                let dst = &mut gi_plane[irow + kx..irow + kx + os.w];
                                for (d, &g) in dst.iter_mut().zip(grow) {
                                    *d = *d + kv * g;
                                }
                            } else {
                                for (ox, &g) in grow.iter().enumerate() {
                                    let i = irow + ox * sx + kx;
                                    gi_plane[i] = gi_plane[i] + kv * g;
                                }
                            }
                        }
                    }
                }
            }
        });

    // grad wrt kernel: one task per (out channel, in channel) pair.
    let mut grad_k = TensorBase::zeros(ks);
    grad_k
        .data_mut()
        .par_chunks_mut(ks.h * ks.w)
        .enumerate()
        .for_each(|(pair_idx, gk)| {
            let co = pair_idx / ks.c;
            let ci = pair_idx % ks.c;
            for n in 0..is.n {
                let ip = input.plane(n, ci);
                let gp = grad_out.plane(n, co);
                for ky in 0..ks.h {
                    for oy in 0..os.h {
                        let irow = (oy * sy + ky) * is.w;
                        let grow = oy * os.w;
                        for kx in 0..ks.w {
                            let mut acc = T::zero();
                            let src = &ip[irow + kx..];
                            if sx == 1 {
                                for (g, s) in gp[grow..grow + os.w].iter().zip(src) {
                                    acc = acc + *g * *s;
                                }
                            } else {
                                for ox in 0..os.w {
                                    acc = acc + gp[grow + ox] * src[ox * sx];
                                }
                            }
                            gk[ky * ks.w + kx] = gk[ky * ks.w + kx] + acc;
                        }
                    }
                }
            }
        });

    // grad wrt bias.
    let grad_b: Vec<T> = (0..ks.n)
        .into_par_iter()
        .map(|co| {
            let mut acc = 0.0f64;
            for n in 0..is.n {
                for &g in grad_out.plane(n, co) {
                    acc += g.to_f64();
                }
            }
            T::from_f64(acc)
        })
        .collect();

    (grad_in, grad_k, grad_b)
}

/// Valid max pooling; also returns per-window argmax (plane-linear input
/// index) for the backward pass. Ties resolve to the first element in scan
/// order.
pub fn maxpool2d<T: Scalar>(
    input: &TensorBase<T>,
    k: usize,
    stride: usize,
) -> Result<(TensorBase<T>, Vec<u32>)> {
    let is = input.shape();
    if k == 0 || stride == 0 || is.h < k || is.w < k {
        return Err(Error::ShapeMismatch {
            op: "maxpool2d",
            detail: format!("window {k} stride {stride} on {}x{}", is.h, is.w),
        });
    }
    let oh = (is.h - k) / stride + 1;
    let ow = (is.w - k) / stride + 1;
    let mut out = TensorBase::zeros(Shape::new(is.n, is.c, oh, ow));
    let mut argmax = vec![0u32; is.n * is.c * oh * ow];

    out.data_mut()
        .par_chunks_mut(oh * ow)
        .zip(argmax.par_chunks_mut(oh * ow))
        .enumerate()
        .for_each(|(plane_idx, (op, ap))| {
            let n = plane_idx / is.c;
            let c = plane_idx % is.c;
            let ip = input.plane(n, c);
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = ip[oy * stride * is.w + ox * stride];
                    let mut best_idx = (oy * stride * is.w + ox * stride) as u32;
                    for ky in 0..k {
                        let row = (oy * stride + ky) * is.w + ox * stride;
                        for kx in 0..k {
                            let v = ip[row + kx];
                            if v > best {
                                best = v;
                                best_idx = (row + kx) as u32;
                            }
                        }
                    }
                    op[oy * ow + ox] = best;
                    ap[oy * ow + ox] = best_idx;
                }
            }
        });
    Ok((out, argmax))
}

pub fn maxpool2d_backward<T: Scalar>(
    input_shape: Shape,
    out_shape: Shape,
    argmax: &[u32],
    grad_out: &TensorBase<T>,
) -> TensorBase<T> {
    let mut grad_in = TensorBase::zeros(input_shape);
    let ohw = out_shape.h * out_shape.w;
    grad_in
        .data_mut()
        .par_chunks_mut(input_shape.h * input_shape.w)
        .enumerate()
        .for_each(|(plane_idx, gi)| {
            let mut buf = vec![0.0f64; gi.len()];
            let gp = &grad_out.data()[plane_idx * ohw..(plane_idx + 1) * ohw];
            let ap = &argmax[plane_idx * ohw..(plane_idx + 1) * ohw];
            for (g, &idx) in gp.iter().zip(ap) {
                buf[idx as usize] += g.to_f64();
            }
            for (dst, v) in gi.iter_mut().zip(buf) {
                *dst = T::from_f64(v);
            }
        });
    grad_in
}

pub fn relu<T: Scalar>(input: &TensorBase<T>) -> TensorBase<T> {
    let mut out = input.clone();
    for v in out.data_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
    out
}

pub fn relu_backward<T: Scalar>(input: &TensorBase<T>, grad_out: &TensorBase<T>) -> TensorBase<T> {
    let mut grad_in = grad_out.clone();
    for (g, &x) in grad_in.data_mut().iter_mut().zip(input.data()) {
        if x <= T::zero() {
            *g = T::zero();
        }
    }
    grad_in
}

/// Per-channel statistics cached by the batchnorm forward pass.
#[derive(Debug, Clone)]
pub struct BnCache {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Batchnorm in training mode: normalizes with batch statistics and updates
/// the running buffers in place.
pub fn batchnorm_train<T: Scalar>(
    input: &TensorBase<T>,
    gamma: &[T],
    beta: &[T],
    running_mean: &mut [T],
    running_var: &mut [T],
) -> Result<(TensorBase<T>, BnCache)> {
    let s = input.shape();
    let count = (s.n * s.h * s.w) as f64;
    if count < 1.0 {
        return Err(Error::ShapeMismatch { op: "batchnorm", detail: "empty batch".into() });
    }
    let hw = s.h * s.w;

    let stats: Vec<(f64, f64)> = (0..s.c)
        .into_par_iter()
        .map(|c| {
            let mut sum = 0.0f64;
            for n in 0..s.n {
                for &v in input.plane(n, c) {
                    sum += v.to_f64();
                }
            }
            let mean = sum / count;
            let mut sq = 0.0f64;
            for n in 0..s.n {
                for &v in input.plane(n, c) {
                    let d = v.to_f64() - mean;
                    sq += d * d;
                }
            }
            (mean, sq / count)
        })
        .collect();

    for c in 0..s.c {
        let (m, v) = stats[c];
        running_mean[c] =
            T::from_f64((1.0 - BN_MOMENTUM) * running_mean[c].to_f64() + BN_MOMENTUM * m);
        running_var[c] =
            T::from_f64((1.0 - BN_MOMENTUM) * running_var[c].to_f64() + BN_MOMENTUM * v);
    }

    let mut out = TensorBase::zeros(s);
    out.data_mut()
        .par_chunks_mut(hw)
        .enumerate()
        .for_each(|(plane_idx, op)| {
            let n = plane_idx / s.c;
            let c = plane_idx % s.c;
            let (mean, var) = stats[c];
            let inv = 1.0 / (var + BN_EPS).sqrt();
            let g = gamma[c].to_f64();
            let b = beta[c].to_f64();
            for (dst, &v) in op.iter_mut().zip(input.plane(n, c)) {
                *dst = T::from_f64((v.to_f64() - mean) * inv * g + b);
            }
        });
    out.check_finite("batchnorm")?;
    let (mean, var) = stats.into_iter().unzip();
    Ok((out, BnCache { mean, var }))
}

/// Batchnorm in inference mode: normalizes with the running buffers.
pub fn batchnorm_eval<T: Scalar>(
    input: &TensorBase<T>,
    gamma: &[T],
    beta: &[T],
    running_mean: &[T],
    running_var: &[T],
) -> Result<TensorBase<T>> {
    let s = input.shape();
    let hw = s.h * s.w;
    let mut out = TensorBase::zeros(s);
    out.data_mut()
        .par_chunks_mut(hw)
        .enumerate()
        .for_each(|(plane_idx, op)| {
            let n = plane_idx / s.c;
            let c = plane_idx % s.c;
            let inv = 1.0 / (running_var[c].to_f64() + BN_EPS).sqrt();
            let g = gamma[c].to_f64();
            let b = beta[c].to_f64();
            let m = running_mean[c].to_f64();
            for (dst, &v) in op.iter_mut().zip(input.plane(n, c)) {
                *dst = T::from_f64((v.to_f64() - m) * inv * g + b);
            }
        });
    out.check_finite("batchnorm")?;
    Ok(out)
}

/// Backward for training-mode batchnorm. Returns (grad_input, grad_gamma,
/// grad_beta).
pub fn batchnorm_backward<T: Scalar>(
    input: &TensorBase<T>,
    gamma: &[T],
    cache: &BnCache,
    grad_out: &TensorBase<T>,
) -> (TensorBase<T>, Vec<T>, Vec<T>) {
    let s = input.shape();
    let count = (s.n * s.h * s.w) as f64;

    // Per-channel reductions, each computed sequentially over samples.
    let sums: Vec<(f64, f64)> = (0..s.c)
        .into_par_iter()
        .map(|c| {
            let mean = cache.mean[c];
            let inv = 1.0 / (cache.var[c] + BN_EPS).sqrt();
            let mut sum_dy = 0.0f64;
            let mut sum_dy_xhat = 0.0f64;
            for n in 0..s.n {
                let xp = input.plane(n, c);
                let gp = grad_out.plane(n, c);
                for (&x, &g) in xp.iter().zip(gp) {
                    let xhat = (x.to_f64() - mean) * inv;
                    sum_dy += g.to_f64();
                    sum_dy_xhat += g.to_f64() * xhat;
                }
            }
            (sum_dy, sum_dy_xhat)
        })
        .collect();

    let grad_gamma: Vec<T> = sums.iter().map(|&(_, sdx)| T::from_f64(sdx)).collect();
    let grad_beta: Vec<T> = sums.iter().map(|&(sd, _)| T::from_f64(sd)).collect();

    let mut grad_in = TensorBase::zeros(s);
    let hw = s.h * s.w;
    grad_in
        .data_mut()
        .par_chunks_mut(hw)
        .enumerate()
        .for_each(|(plane_idx, gi)| {
            let n = plane_idx / s.c;
            let c = plane_idx % s.c;
            let mean = cache.mean[c];
            let inv = 1.0 / (cache.var[c] + BN_EPS).sqrt();
            let g = gamma[c].to_f64();
            let (sum_dy, sum_dy_xhat) = sums[c];
            let xp = input.plane(n, c);
            let gp = grad_out.plane(n, c);
            for i in 0..hw {
                let xhat = (xp[i].to_f64() - mean) * inv;
                let dy = gp[i].to_f64();
                gi[i] = T::from_f64(g * inv * (dy - sum_dy / count - xhat * sum_dy_xhat / count));
            }
        });

    (grad_in, grad_gamma, grad_beta)
}

/// Global average pooling: (n, c, h, w) -> (n, c, 1, 1).
pub fn global_avg_pool<T: Scalar>(input: &TensorBase<T>) -> TensorBase<T> {
    let s = input.shape();
    let mut out = TensorBase::zeros(Shape::new(s.n, s.c, 1, 1));
    let hw = (s.h * s.w) as f64;
    for n in 0..s.n {
        for c in 0..s.c {
            let mut acc = 0.0f64;
            for &v in input.plane(n, c) {
                acc += v.to_f64();
            }
            *out.at_mut(n, c, 0, 0) = T::from_f64(acc / hw);
        }
    }
    out
}

pub fn global_avg_pool_backward<T: Scalar>(
    input_shape: Shape,
    grad_out: &TensorBase<T>,
) -> TensorBase<T> {
    let mut grad_in = TensorBase::zeros(input_shape);
    let hw = (input_shape.h * input_shape.w) as f64;
    for n in 0..input_shape.n {
        for c in 0..input_shape.c {
            let g = grad_out.at(n, c, 0, 0).to_f64() / hw;
            for v in grad_in.plane_mut(n, c) {
                *v = T::from_f64(g);
            }
        }
    }
    grad_in
}

/// Fully connected layer on (n, f, 1, 1) tensors. Weight is (out, f, 1, 1).
pub fn linear<T: Scalar>(
    input: &TensorBase<T>,
    weight: &TensorBase<T>,
    bias: &[T],
) -> Result<TensorBase<T>> {
    let is = input.shape();
    let ws = weight.shape();
    if is.c != ws.c || is.h != 1 || is.w != 1 {
        return Err(Error::ShapeMismatch {
            op: "linear",
            detail: format!("input {} vs weight {}", is, ws),
        });
    }
    let mut out = TensorBase::zeros(Shape::new(is.n, ws.n, 1, 1));
    for n in 0..is.n {
        for o in 0..ws.n {
            let mut acc = bias[o].to_f64();
            for f in 0..is.c {
                acc += input.at(n, f, 0, 0).to_f64() * weight.at(o, f, 0, 0).to_f64();
            }
            *out.at_mut(n, o, 0, 0) = T::from_f64(acc);
        }
    }
    out.check_finite("linear")?;
    Ok(out)
}

pub fn linear_backward<T: Scalar>(
    input: &TensorBase<T>,
    weight: &TensorBase<T>,
    grad_out: &TensorBase<T>,
) -> (TensorBase<T>, TensorBase<T>, Vec<T>) {
    let is = input.shape();
    let ws = weight.shape();
    let mut grad_in = TensorBase::zeros(is);
    let mut grad_w = TensorBase::zeros(ws);
    let mut grad_b = vec![T::zero(); ws.n];

    for n in 0..is.n {
        for f in 0..is.c {
            let mut acc = 0.0f64;
            for o in 0..ws.n {
                acc += weight.at(o, f, 0, 0).to_f64() * grad_out.at(n, o, 0, 0).to_f64();
            }
            *grad_in.at_mut(n, f, 0, 0) = T::from_f64(acc);
        }
    }
    for o in 0..ws.n {
        let mut bacc = 0.0f64;
        for n in 0..is.n {
            bacc += grad_out.at(n, o, 0, 0).to_f64();
        }
        grad_b[o] = T::from_f64(bacc);
        for f in 0..is.c {
            let mut acc = 0.0f64;
            for n in 0..is.n {
                acc += input.at(n, f, 0, 0).to_f64() * grad_out.at(n, o, 0, 0).to_f64();
            }
            *grad_w.at_mut(o, f, 0, 0) = T::from_f64(acc);
        }
    }
    (grad_in, grad_w, grad_b)
}

/// Mean softmax cross-entropy over the batch. Returns the loss (f64) and the
/// gradient w.r.t. the logits.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &TensorBase<T>,
    labels: &[usize],
) -> Result<(f64, TensorBase<T>)> {
    let s = logits.shape();
    let classes = s.c;
    if labels.len() != s.n {
        return Err(Error::ShapeMismatch {
            op: "softmax_cross_entropy",
            detail: format!("{} labels for batch of {}", labels.len(), s.n),
        });
    }
    for &l in labels {
        if l >= classes {
            return Err(Error::LabelOutOfRange { label: l, classes });
        }
    }
    let mut grad = TensorBase::zeros(s);
    let mut loss = 0.0f64;
    let inv_n = 1.0 / s.n as f64;
    for n in 0..s.n {
        let row: Vec<f64> = (0..classes).map(|c| logits.at(n, c, 0, 0).to_f64()).collect();
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0f64;
        for &v in &row {
            denom += (v - m).exp();
        }
        let log_denom = denom.ln();
        loss += -(row[labels[n]] - m - log_denom);
        for c in 0..classes {
            let p = (row[c] - m).exp() / denom;
            let onehot = if c == labels[n] { 1.0 } else { 0.0 };
            *grad.at_mut(n, c, 0, 0) = T::from_f64((p - onehot) * inv_n);
        }
    }
    loss *= inv_n;
    if !loss.is_finite() {
        return Err(Error::NonFinite { op: "softmax_cross_entropy" });
    }
    Ok((loss, grad))
}

/// Predicted class per sample (argmax over logits; first max wins ties).
pub fn argmax_classes<T: Scalar>(logits: &TensorBase<T>) -> Vec<usize> {
    let s = logits.shape();
    (0..s.n)
        .map(|n| {
            let mut best = 0;
            for c in 1..s.c {
                if logits.at(n, c, 0, 0) > logits.at(n, best, 0, 0) {
                    best = c;
                }
            }
            best
        })
        .collect()
}
