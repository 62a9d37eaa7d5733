//! Network execution: forward with optional feature capture, and the
//! backward pass for training.
//!
//! The executor interprets an `ArchSpec` against the geometry walk from
//! `arch::geometry`, so pad amounts, deferred-pad application points and
//! shapes always match shape inference. Inputs may be larger than the
//! nominal arch size; shapes simply flow through (the alignment module
//! relies on this for the oversized no-padding path).

use crate::arch::{ArchSpec, LayerKind};
use crate::error::{Error, Result};
use crate::ops;
use crate::padding::{self, PadAmounts, PaddingScheme, RandnCtx, RandnDraw};
use crate::params::{ParamSet, SLOT_BETA, SLOT_BIAS, SLOT_GAMMA, SLOT_RUNNING_MEAN, SLOT_RUNNING_VAR, SLOT_WEIGHT};
use crate::rng::{Purpose, RngStream};
use crate::tensor::{Scalar, Shape, TensorBase};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Identifies a forward pass for sampling-based padding, so draws depend
/// only on `(seed, round, sample, layer, location)`.
#[derive(Debug, Clone, Copy)]
pub struct PadCtx {
    pub rng: RngStream,
    /// Training step counter; 0 for measurement passes.
    pub round: u64,
    /// Dataset index of the first sample in the batch.
    pub sample_base: u64,
}

impl PadCtx {
    pub fn new(seed: u64) -> Self {
        PadCtx { rng: RngStream::new(seed, Purpose::RandnPad), round: 0, sample_base: 0 }
    }

    pub fn for_sample(seed: u64, sample: u64) -> Self {
        PadCtx { rng: RngStream::new(seed, Purpose::RandnPad), round: 0, sample_base: sample }
    }

    fn randn_ctx(&self, layer_tag: u64) -> RandnCtx {
        RandnCtx {
            rng: self.rng,
            round: self.round,
            sample_base: self.sample_base,
            layer: layer_tag,
        }
    }
}

enum Step<T> {
    Pad {
        input_shape: Shape,
        amounts: PadAmounts,
        scheme: PaddingScheme,
        traces: Option<Vec<Vec<RandnDraw>>>,
    },
    Conv {
        layer: usize,
        input: TensorBase<T>,
        stride: (usize, usize),
    },
    Pool {
        input_shape: Shape,
        out_shape: Shape,
        argmax: Vec<u32>,
    },
    Bn {
        layer: usize,
        input: TensorBase<T>,
        cache: ops::BnCache,
    },
    Relu {
        input: TensorBase<T>,
    },
    Gap {
        input_shape: Shape,
    },
    Linear {
        layer: usize,
        input: TensorBase<T>,
    },
}

/// Result of a forward pass.
pub struct ForwardRun<T> {
    /// `(layer index, features)` at each capture layer, in depth order.
    pub captures: Vec<(usize, TensorBase<T>)>,
    /// Output of the final layer.
    pub output: TensorBase<T>,
    steps: Vec<Step<T>>,
    /// Batch statistics per batchnorm layer (train mode only), to fold into
    /// the running buffers.
    bn_updates: Vec<(usize, Vec<f64>, Vec<f64>)>,
}

fn apply_pad<T: Scalar>(
    cur: TensorBase<T>,
    amounts: PadAmounts,
    scheme: PaddingScheme,
    ctx: RandnCtx,
    steps: Option<&mut Vec<Step<T>>>,
) -> Result<TensorBase<T>> {
    let input_shape = cur.shape();
    let (out, traces) = if let PaddingScheme::Randn { window } = scheme {
        let (out, traces) = padding::randn_fill_with_trace(&cur, amounts, window, ctx)?;
        (out, Some(traces))
    } else {
        (padding::pad(&cur, amounts, scheme, None)?, None)
    };
    if let Some(steps) = steps {
        steps.push(Step::Pad { input_shape, amounts, scheme, traces });
    }
    Ok(out)
}

/// Run the stack. `want_cache` retains everything backward needs;
/// `want_captures` collects features at capture layers.
pub fn forward<T: Scalar>(
    arch: &ArchSpec,
    params: &ParamSet<T>,
    input: &TensorBase<T>,
    scheme: PaddingScheme,
    pad_ctx: PadCtx,
    mode: Mode,
    want_cache: bool,
    want_captures: bool,
) -> Result<ForwardRun<T>> {
    let ishape = input.shape();
    if ishape.c != arch.in_ch {
        return Err(Error::ShapeMismatch {
            op: "forward",
            detail: format!("input channels {} != arch {}", ishape.c, arch.in_ch),
        });
    }
    input.check_finite("forward input")?;
    let geom = arch.geometry(ishape.h, ishape.w, scheme.is_none())?;

    let mut cur = input.clone();
    let mut steps: Vec<Step<T>> = Vec::new();
    let mut captures = Vec::new();
    let mut bn_updates = Vec::new();

    for (i, layer) in arch.layers.iter().enumerate() {
        let g = &geom.layers[i];
        if let Some(amounts) = g.flush_before {
            let ctx = pad_ctx.randn_ctx(2 * i as u64 + 1);
            cur = apply_pad(cur, amounts, scheme, ctx, want_cache.then_some(&mut steps))?;
        }
        match layer.kind {
            LayerKind::Conv { stride, .. } => {
                if !g.pre_pad.is_zero() {
                    let ctx = pad_ctx.randn_ctx(2 * i as u64);
                    cur = apply_pad(cur, g.pre_pad, scheme, ctx, want_cache.then_some(&mut steps))?;
                }
                let group = &params.layers[i];
                let out = ops::conv2d(
                    &cur,
                    &group[SLOT_WEIGHT].value,
                    group[SLOT_BIAS].value.data(),
                    (stride, stride),
                )?;
                if want_cache {
                    steps.push(Step::Conv { layer: i, input: cur, stride: (stride, stride) });
                }
                cur = out;
            }
            LayerKind::MaxPool { k, stride, .. } => {
                if !g.pre_pad.is_zero() {
                    let ctx = pad_ctx.randn_ctx(2 * i as u64);
                    cur = apply_pad(cur, g.pre_pad, scheme, ctx, want_cache.then_some(&mut steps))?;
                }
                let input_shape = cur.shape();
                let (out, argmax) = ops::maxpool2d(&cur, k, stride)?;
                if want_cache {
                    steps.push(Step::Pool { input_shape, out_shape: out.shape(), argmax });
                }
                cur = out;
            }
            LayerKind::BatchNorm => {
                let group = &params.layers[i];
                let gamma = group[SLOT_GAMMA].value.data();
                let beta = group[SLOT_BETA].value.data();
                match mode {
                    Mode::Train => {
                        let mut rm: Vec<T> = group[SLOT_RUNNING_MEAN].value.data().to_vec();
                        let mut rv: Vec<T> = group[SLOT_RUNNING_VAR].value.data().to_vec();
                        let (out, cache) = ops::batchnorm_train(&cur, gamma, beta, &mut rm, &mut rv)?;
                        bn_updates.push((
                            i,
                            rm.iter().map(|v| v.to_f64()).collect(),
                            rv.iter().map(|v| v.to_f64()).collect(),
                        ));
                        if want_cache {
                            steps.push(Step::Bn { layer: i, input: cur, cache });
                        }
                        cur = out;
                    }
                    Mode::Eval => {
                        let out = ops::batchnorm_eval(
                            &cur,
                            gamma,
                            beta,
                            group[SLOT_RUNNING_MEAN].value.data(),
                            group[SLOT_RUNNING_VAR].value.data(),
                        )?;
                        cur = out;
                    }
                }
            }
            LayerKind::Relu => {
                let out = ops::relu(&cur);
                if want_cache {
                    steps.push(Step::Relu { input: cur });
                }
                cur = out;
            }
            LayerKind::GlobalAvgPool => {
                let input_shape = cur.shape();
                let out = ops::global_avg_pool(&cur);
                if want_cache {
                    steps.push(Step::Gap { input_shape });
                }
                cur = out;
            }
            LayerKind::Linear { .. } => {
                let group = &params.layers[i];
                let out = ops::linear(&cur, &group[SLOT_WEIGHT].value, group[SLOT_BIAS].value.data())?;
                if want_cache {
                    steps.push(Step::Linear { layer: i, input: cur });
                }
                cur = out;
            }
        }
        if want_captures && layer.capture {
            captures.push((i, cur.clone()));
        }
    }

    Ok(ForwardRun { captures, output: cur, steps, bn_updates })
}

/// Features at every capture layer, inference mode. Pure in `params`.
pub fn forward_capture<T: Scalar>(
    arch: &ArchSpec,
    params: &ParamSet<T>,
    input: &TensorBase<T>,
    scheme: PaddingScheme,
    pad_ctx: PadCtx,
) -> Result<Vec<(usize, TensorBase<T>)>> {
    let run = forward(arch, params, input, scheme, pad_ctx, Mode::Eval, false, true)?;
    Ok(run.captures)
}

/// Inference logits.
pub fn forward_logits<T: Scalar>(
    arch: &ArchSpec,
    params: &ParamSet<T>,
    input: &TensorBase<T>,
    scheme: PaddingScheme,
    pad_ctx: PadCtx,
) -> Result<TensorBase<T>> {
    let run = forward(arch, params, input, scheme, pad_ctx, Mode::Eval, false, false)?;
    Ok(run.output)
}

/// Predicted classes, inference mode.
pub fn predict<T: Scalar>(
    arch: &ArchSpec,
    params: &ParamSet<T>,
    input: &TensorBase<T>,
    scheme: PaddingScheme,
    pad_ctx: PadCtx,
) -> Result<Vec<usize>> {
    Ok(ops::argmax_classes(&forward_logits(arch, params, input, scheme, pad_ctx)?))
}

fn bias_tensor<T: Scalar>(v: Vec<T>) -> TensorBase<T> {
    let c = v.len();
    TensorBase::from_vec(Shape::new(1, c, 1, 1), v).expect("bias tensor")
}

/// One training step's gradients: forward in train mode, mean softmax
/// cross-entropy, backward through every step. Fills the gradient slots of
/// `params`, folds batch statistics into the batchnorm running buffers, and
/// returns the loss.
pub fn forward_backward<T: Scalar>(
    arch: &ArchSpec,
    params: &mut ParamSet<T>,
    batch: &TensorBase<T>,
    labels: &[usize],
    scheme: PaddingScheme,
    pad_ctx: PadCtx,
) -> Result<f64> {
    let run = forward(arch, params, batch, scheme, pad_ctx, Mode::Train, true, false)?;
    let (loss, grad_logits) = ops::softmax_cross_entropy(&run.output, labels)?;

    let mut grads: Vec<Vec<Option<TensorBase<T>>>> =
        params.layers.iter().map(|g| vec![None; g.len()]).collect();
    let mut g = grad_logits;

    for step in run.steps.into_iter().rev() {
        match step {
            Step::Linear { layer, input } => {
                let weight = &params.layers[layer][SLOT_WEIGHT].value;
                let (gin, gw, gb) = ops::linear_backward(&input, weight, &g);
                grads[layer][SLOT_WEIGHT] = Some(gw);
                grads[layer][SLOT_BIAS] = Some(bias_tensor(gb));
                g = gin;
            }
            Step::Gap { input_shape } => {
                g = ops::global_avg_pool_backward(input_shape, &g);
            }
            Step::Relu { input } => {
                g = ops::relu_backward(&input, &g);
            }
            Step::Bn { layer, input, cache } => {
                let gamma = params.layers[layer][SLOT_GAMMA].value.data();
                let (gin, dgamma, dbeta) = ops::batchnorm_backward(&input, gamma, &cache, &g);
                grads[layer][SLOT_GAMMA] = Some(bias_tensor(dgamma));
                grads[layer][SLOT_BETA] = Some(bias_tensor(dbeta));
                g = gin;
            }
            Step::Pool { input_shape, out_shape, argmax } => {
                g = ops::maxpool2d_backward(input_shape, out_shape, &argmax, &g);
            }
            Step::Conv { layer, input, stride } => {
                let weight = &params.layers[layer][SLOT_WEIGHT].value;
                let (gin, gk, gb) = ops::conv2d_backward(&input, weight, stride, &g);
                grads[layer][SLOT_WEIGHT] = Some(gk);
                grads[layer][SLOT_BIAS] = Some(bias_tensor(gb));
                g = gin;
            }
            Step::Pad { input_shape, amounts, scheme, traces } => {
                g = match traces {
                    Some(traces) => padding::pad_backward_randn(input_shape, amounts, &traces, &g),
                    None => padding::pad_backward(input_shape, amounts, scheme, &g),
                };
            }
        }
    }

    params.accumulate_grads(grads);

    for (layer, rm, rv) in run.bn_updates {
        let group = &mut params.layers[layer];
        for (dst, v) in group[SLOT_RUNNING_MEAN].value.data_mut().iter_mut().zip(&rm) {
            *dst = T::from_f64(*v);
        }
        for (dst, v) in group[SLOT_RUNNING_VAR].value.data_mut().iter_mut().zip(&rv) {
            *dst = T::from_f64(*v);
        }
    }

    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{bhv_cnn, mini_vgg};
    use crate::padding::PadMode;

    #[test]
    fn forward_shapes_match_geometry() {
        let arch = mini_vgg();
        let params = ParamSet::<f32>::init(&arch, 3).unwrap();
        let input = TensorBase::<f32>::full(Shape::new(2, 3, 64, 64), 0.25);
        let run = forward(
            &arch,
            &params,
            &input,
            PaddingScheme::Zeros,
            PadCtx::new(0),
            Mode::Eval,
            false,
            true,
        )
        .unwrap();
        assert_eq!(run.output.shape(), Shape::new(2, 4, 1, 1));
        let geom = arch.nominal_geometry().unwrap();
        for (i, feat) in &run.captures {
            let (c, h, w) = geom.out_of(*i);
            assert_eq!(feat.shape(), Shape::new(2, c, h, w));
        }
    }

    #[test]
    fn capture_interiors_equal_across_schemes() {
        // Padding cannot affect pixels whose receptive field is interior:
        // the first capture of mini-vgg has rf radius 3 at scale 2.
        let arch = mini_vgg();
        let params = ParamSet::<f32>::init(&arch, 5).unwrap();
        let mut input = TensorBase::<f32>::zeros(Shape::new(1, 3, 64, 64));
        for (i, v) in input.data_mut().iter_mut().enumerate() {
            *v = ((i as f32) * 0.193).sin() * 0.5;
        }
        let a = forward_capture(&arch, &params, &input, PaddingScheme::Zeros, PadCtx::new(0)).unwrap();
        let b =
            forward_capture(&arch, &params, &input, PaddingScheme::Replicate, PadCtx::new(0)).unwrap();
        let (fa, fb) = (&a[0].1, &b[0].1);
        let geom = arch.nominal_geometry().unwrap();
        let rf = geom.layers[a[0].0].rf;
        let mut interior_checked = 0usize;
        for y in 0..fa.shape().h {
            for x in 0..fa.shape().w {
                if rf.y.is_interior(y as i64, 64) && rf.x.is_interior(x as i64, 64) {
                    for c in 0..fa.shape().c {
                        assert_eq!(fa.at(0, c, y, x), fb.at(0, c, y, x));
                    }
                    interior_checked += 1;
                }
            }
        }
        assert!(interior_checked > 0);
    }

    #[test]
    fn training_step_reduces_loss_on_tiny_problem() {
        let arch = bhv_cnn(PadMode::Same);
        let mut params = ParamSet::<f32>::init(&arch, 11).unwrap();
        let mut batch = TensorBase::<f32>::zeros(Shape::new(8, 3, 32, 32));
        for (i, v) in batch.data_mut().iter_mut().enumerate() {
            *v = ((i as f32) * 0.037).cos() * 0.3 + 0.5;
        }
        let labels: Vec<usize> = (0..8).map(|i| i % 2).collect();
        let ctx = PadCtx::new(1);
        let mut first = None;
        let mut last = 0.0;
        for step in 0..12 {
            params.zero_grads();
            let mut ctx = ctx;
            ctx.round = step;
            let loss =
                forward_backward(&arch, &mut params, &batch, &labels, PaddingScheme::Zeros, ctx)
                    .unwrap();
            params.sgd_step(0.05, 0.9).unwrap();
            first.get_or_insert(loss);
            last = loss;
        }
        assert!(last < first.unwrap(), "loss did not fall: {first:?} -> {last}");
    }

    #[test]
    fn deterministic_across_runs() {
        let arch = mini_vgg();
        let mut p1 = ParamSet::<f32>::init(&arch, 2).unwrap();
        let mut p2 = ParamSet::<f32>::init(&arch, 2).unwrap();
        let mut batch = TensorBase::<f32>::zeros(Shape::new(4, 3, 64, 64));
        for (i, v) in batch.data_mut().iter_mut().enumerate() {
            *v = ((i as f32) * 0.011).sin();
        }
        let labels = [0usize, 1, 2, 3];
        for round in 0..3 {
            let mut ctx = PadCtx::new(9);
            ctx.round = round;
            let l1 = forward_backward(
                &arch,
                &mut p1,
                &batch,
                &labels,
                PaddingScheme::Randn { window: 3 },
                ctx,
            )
            .unwrap();
            let l2 = forward_backward(
                &arch,
                &mut p2,
                &batch,
                &labels,
                PaddingScheme::Randn { window: 3 },
                ctx,
            )
            .unwrap();
            assert_eq!(l1, l2);
            p1.sgd_step(0.01, 0.9).unwrap();
            p2.sgd_step(0.01, 0.9).unwrap();
        }
        assert_eq!(p1, p2);
    }
}
