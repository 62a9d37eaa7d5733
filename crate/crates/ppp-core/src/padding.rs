//! Padding schemes and pad-amount computation.
//!
//! All padding is explicit: convolution and pooling never pad internally.
//! A scheme fills the border band; the interior block is always preserved
//! bit-for-bit.

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::{Scalar, Shape, TensorBase};

/// Per-axis-pair pad amounts in pixels. Asymmetric amounts are legal; a
/// stride-2 "same" convolution on an even extent pads one side only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub struct PadAmounts {
    pub left: usize,
    pub right: usize,
    pub top: usize,
    pub bottom: usize,
}

impl PadAmounts {
    pub fn new(left: usize, right: usize, top: usize, bottom: usize) -> Self {
        PadAmounts { left, right, top, bottom }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn is_zero(&self) -> bool {
        self.left == 0 && self.right == 0 && self.top == 0 && self.bottom == 0
    }
}

/// How a value outside the image is synthesized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PaddingScheme {
    Zeros,
    Circular,
    Reflect,
    Replicate,
    /// Sample each border value from a Normal whose proxy mean/std come from
    /// the nearest `window`×`window` block of the interior.
    Randn { window: usize },
    /// No padding at all: the network runs valid and shrinks spatially.
    None,
}

impl PaddingScheme {
    pub fn is_none(&self) -> bool {
        matches!(self, PaddingScheme::None)
    }

    pub fn name(&self) -> &'static str {
        match self {
            PaddingScheme::Zeros => "zeros",
            PaddingScheme::Circular => "circular",
            PaddingScheme::Reflect => "reflect",
            PaddingScheme::Replicate => "replicate",
            PaddingScheme::Randn { .. } => "randn",
            PaddingScheme::None => "none",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "zeros" => Ok(PaddingScheme::Zeros),
            "circular" => Ok(PaddingScheme::Circular),
            "reflect" => Ok(PaddingScheme::Reflect),
            "replicate" => Ok(PaddingScheme::Replicate),
            "randn" => Ok(PaddingScheme::Randn { window: 3 }),
            "none" => Ok(PaddingScheme::None),
            other => {
                if let Some(w) = other.strip_prefix("randn:") {
                    let window: usize = w
                        .parse()
                        .map_err(|_| Error::Config(format!("bad randn window `{w}`")))?;
                    return Ok(PaddingScheme::Randn { window });
                }
                Err(Error::Config(format!("unknown padding scheme `{other}`")))
            }
        }
    }
}

/// Pad-amount policy for a convolution or pooling layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PadMode {
    Valid,
    Same,
    Full,
}

/// Per-axis pad amounts for a mode: `(low, high)`.
///
/// `same` keeps `out = ceil(in / stride)` and splits the total with the
/// extra pixel on the high side, so a stride-2 same convolution on an even
/// extent pads the right/bottom side only. `full` emits every partial
/// overlap.
pub fn pad_amounts_for(mode: PadMode, kernel: usize, stride: usize, in_extent: usize) -> (usize, usize) {
    match mode {
        PadMode::Valid => (0, 0),
        PadMode::Full => (kernel - 1, kernel - 1),
        PadMode::Same => {
            let out = in_extent.div_ceil(stride);
            let needed = (out - 1) * stride + kernel;
            let total = needed.saturating_sub(in_extent);
            let low = total / 2;
            (low, total - low)
        }
    }
}

/// Combine per-axis results into `PadAmounts` for a square kernel.
pub fn pad_amounts_2d(mode: PadMode, kernel: usize, stride: usize, h: usize, w: usize) -> PadAmounts {
    let (top, bottom) = pad_amounts_for(mode, kernel, stride, h);
    let (left, right) = pad_amounts_for(mode, kernel, stride, w);
    PadAmounts { left, right, top, bottom }
}

/// Context tag for randn draws: identifies the forward pass so that a draw
/// depends only on (seed, round, sample, layer, location), never on
/// evaluation order.
#[derive(Debug, Clone, Copy)]
pub struct RandnCtx {
    pub rng: RngStream,
    /// Training step / epoch counter; 0 for measurement passes.
    pub round: u64,
    /// Index of the first sample of the batch in its dataset.
    pub sample_base: u64,
    /// Layer index within the architecture.
    pub layer: u64,
}

/// Apply a padding scheme. The output has shape
/// `(n, c, h + top + bottom, w + left + right)` and its interior block
/// equals the input exactly.
pub fn pad<T: Scalar>(
    input: &TensorBase<T>,
    amounts: PadAmounts,
    scheme: PaddingScheme,
    randn_ctx: Option<RandnCtx>,
) -> Result<TensorBase<T>> {
    let s = input.shape();
    let max_lr = amounts.left.max(amounts.right);
    let max_tb = amounts.top.max(amounts.bottom);
    match scheme {
        PaddingScheme::None => {
            if !amounts.is_zero() {
                return Err(Error::PadBounds("scheme `none` requires zero pad amounts".into()));
            }
        }
        PaddingScheme::Reflect => {
            if max_tb >= s.h || max_lr >= s.w {
                return Err(Error::PadBounds(format!(
                    "reflect pad {amounts:?} must be < extent {}x{}",
                    s.h, s.w
                )));
            }
        }
        PaddingScheme::Circular => {
            if max_tb > s.h || max_lr > s.w {
                return Err(Error::PadBounds(format!(
                    "circular pad {amounts:?} must be <= extent {}x{}",
                    s.h, s.w
                )));
            }
        }
        _ => {}
    }
    if amounts.is_zero() {
        return Ok(input.clone());
    }
    if let PaddingScheme::Randn { window } = scheme {
        let ctx = randn_ctx.ok_or_else(|| Error::PadBounds("randn padding needs an rng context".into()))?;
        return randn_fill(input, amounts, window, ctx);
    }

    let oh = s.h + amounts.top + amounts.bottom;
    let ow = s.w + amounts.left + amounts.right;
    let mut out = TensorBase::zeros(Shape::new(s.n, s.c, oh, ow));

    let map_coord = |i: isize, extent: usize| -> Option<usize> {
        let e = extent as isize;
        match scheme {
            PaddingScheme::Zeros => {
                if i < 0 || i >= e {
                    None
                } else {
                    Some(i as usize)
                }
            }
            PaddingScheme::Circular => Some(i.rem_euclid(e) as usize),
            // Mirror without repeating the edge pixel.
            PaddingScheme::Reflect => Some(if i < 0 {
                (-i) as usize
            } else if i >= e {
                (2 * (e - 1) - i) as usize
            } else {
                i as usize
            }),
            PaddingScheme::Replicate => Some(i.clamp(0, e - 1) as usize),
            PaddingScheme::Randn { .. } | PaddingScheme::None => unreachable!(),
        }
    };
    // Column sources for the left/right bands (None = stays zero).
    let left_cols: Vec<Option<usize>> =
        (0..amounts.left).map(|ox| map_coord(ox as isize - amounts.left as isize, s.w)).collect();
    let right_cols: Vec<Option<usize>> =
        (0..amounts.right).map(|ox| map_coord((s.w + ox) as isize, s.w)).collect();

    for n in 0..s.n {
        for c in 0..s.c {
            let src = input.plane(n, c);
            let dst = out.plane_mut(n, c);
            for oy in 0..oh {
                let iy = oy as isize - amounts.top as isize;
                let Some(y) = map_coord(iy, s.h) else { continue };
                let srow = &src[y * s.w..(y + 1) * s.w];
                let drow = &mut dst[oy * ow..(oy + 1) * ow];
                for (d, m) in drow[..amounts.left].iter_mut().zip(&left_cols) {
                    if let Some(x) = m {
                        *d = srow[*x];
                    }
                }
                drow[amounts.left..amounts.left + s.w].copy_from_slice(srow);
                for (d, m) in drow[amounts.left + s.w..].iter_mut().zip(&right_cols) {
                    if let Some(x) = m {
                        *d = srow[*x];
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Randn padding: pads with draws from `Normal(mu_p, sigma_p^2)` where
/// `mu_p = (max + min) / 2` and `sigma_p = max - mu_p` over the nearest
/// fully-interior `window`×`window` block. On flat regions sigma collapses
/// to zero and the scheme degenerates to value repetition; draws may exceed
/// the window min/max.
///
/// Also records, per padded location, the reparameterization needed for the
/// backward pass; use [`randn_fill`] when only the values are needed.
pub fn randn_fill<T: Scalar>(
    input: &TensorBase<T>,
    amounts: PadAmounts,
    window: usize,
    ctx: RandnCtx,
) -> Result<TensorBase<T>> {
    Ok(randn_fill_with_trace(input, amounts, window, ctx)?.0)
}

/// One padded border location, as needed to route gradients back to the
/// window extrema: `value = mu + sigma * eps` with
/// `d value / d max = (1 + eps) / 2`, `d value / d min = (1 - eps) / 2`.
#[derive(Debug, Clone, Copy)]
pub struct RandnDraw {
    /// Plane-linear index in the padded output.
    pub out_idx: u32,
    /// Plane-linear indices of the window max / min in the input.
    pub argmax: u32,
    pub argmin: u32,
    pub eps: f32,
}

pub fn randn_fill_with_trace<T: Scalar>(
    input: &TensorBase<T>,
    amounts: PadAmounts,
    window: usize,
    ctx: RandnCtx,
) -> Result<(TensorBase<T>, Vec<Vec<RandnDraw>>)> {
    let s = input.shape();
    if window < 3 || window % 2 == 0 {
        return Err(Error::PadBounds(format!("randn window {window} must be odd and >= 3")));
    }
    if window > s.h || window > s.w {
        return Err(Error::PadBounds(format!(
            "randn window {window} exceeds extent {}x{}",
            s.h, s.w
        )));
    }
    let r = window / 2;
    let oh = s.h + amounts.top + amounts.bottom;
    let ow = s.w + amounts.left + amounts.right;
    let mut out = TensorBase::zeros(Shape::new(s.n, s.c, oh, ow));
    let mut traces: Vec<Vec<RandnDraw>> = vec![Vec::new(); s.n * s.c];

    let stream = ctx.rng.derive(ctx.round).derive(ctx.layer);

    for n in 0..s.n {
        for c in 0..s.c {
            let src = input.plane(n, c);
            let trace = &mut traces[n * s.c + c];
            // Copy interior first.
            {
                let dst = out.plane_mut(n, c);
                for y in 0..s.h {
                    let drow = (y + amounts.top) * ow + amounts.left;
                    dst[drow..drow + s.w].copy_from_slice(&src[y * s.w..(y + 1) * s.w]);
                }
            }
            for oy in 0..oh {
                let iy = oy as isize - amounts.top as isize;
                for ox in 0..ow {
                    let ix = ox as isize - amounts.left as isize;
                    if iy >= 0 && (iy as usize) < s.h && ix >= 0 && (ix as usize) < s.w {
                        continue; // interior
                    }
                    // Nearest valid window center: clamp into the region
                    // where the full window fits.
                    let cy = iy.clamp(r as isize, (s.h - 1 - r) as isize) as usize;
                    let cx = ix.clamp(r as isize, (s.w - 1 - r) as isize) as usize;
                    let mut maxv = src[(cy - r) * s.w + (cx - r)];
                    let mut minv = maxv;
                    let mut argmax = ((cy - r) * s.w + (cx - r)) as u32;
                    let mut argmin = argmax;
                    for wy in cy - r..=cy + r {
                        for wx in cx - r..=cx + r {
                            let v = src[wy * s.w + wx];
                            if v > maxv {
                                maxv = v;
                                argmax = (wy * s.w + wx) as u32;
                            }
                            if v < minv {
                                minv = v;
                                argmin = (wy * s.w + wx) as u32;
                            }
                        }
                    }
                    let mu = (maxv.to_f64() + minv.to_f64()) / 2.0;
                    let sigma = maxv.to_f64() - mu;
                    // Location tag is the (c, oy, ox) linear index in the
                    // padded plane, per sample.
                    let spatial = ((c * oh + oy) * ow + ox) as u64;
                    let eps = stream.normal(&[ctx.sample_base + n as u64, spatial]);
                    let idx = oy * ow + ox;
                    out.plane_mut(n, c)[idx] = T::from_f64(mu + sigma * eps);
                    trace.push(RandnDraw {
                        out_idx: idx as u32,
                        argmax,
                        argmin,
                        eps: eps as f32,
                    });
                }
            }
        }
    }
    out.check_finite("randn_fill")?;
    Ok((out, traces))
}

/// Gradient routing through non-randn padding: every padded location maps to
/// a source pixel (or to nowhere, for zeros), so the incoming gradient
/// accumulates onto that source.
pub fn pad_backward<T: Scalar>(
    input_shape: Shape,
    amounts: PadAmounts,
    scheme: PaddingScheme,
    grad_out: &TensorBase<T>,
) -> TensorBase<T> {
    let s = input_shape;
    let os = grad_out.shape();
    let mut grad_in = TensorBase::zeros(s);

    let map_coord = |i: isize, extent: usize| -> Option<usize> {
        let e = extent as isize;
        match scheme {
            PaddingScheme::Zeros | PaddingScheme::None => {
                if i < 0 || i >= e {
                    None
                } else {
                    Some(i as usize)
                }
            }
            PaddingScheme::Circular => Some(i.rem_euclid(e) as usize),
            PaddingScheme::Reflect => Some(if i < 0 {
                (-i) as usize
            } else if i >= e {
                (2 * (e - 1) - i) as usize
            } else {
                i as usize
            }),
            PaddingScheme::Replicate => Some(i.clamp(0, e - 1) as usize),
            PaddingScheme::Randn { .. } => unreachable!("randn uses pad_backward_randn"),
        }
    };

    let border_rows = amounts.top + amounts.bottom > 0;
    let border_cols = amounts.left + amounts.right > 0;
    for n in 0..s.n {
        for c in 0..s.c {
            let gp = grad_out.plane(n, c);
            let gi = grad_in.plane_mut(n, c);
            // Interior passes straight through.
            for y in 0..s.h {
                let grow = (y + amounts.top) * os.w + amounts.left;
                gi[y * s.w..(y + 1) * s.w].copy_from_slice(&gp[grow..grow + s.w]);
            }
            if !border_rows && !border_cols {
                continue;
            }
            // Border contributions accumulate onto their source pixels.
            for oy in 0..os.h {
                let iy = oy as isize - amounts.top as isize;
                let row_is_border = iy < 0 || iy >= s.h as isize;
                let Some(y) = map_coord(iy, s.h) else { continue };
                for ox in 0..os.w {
                    let ix = ox as isize - amounts.left as isize;
                    if !row_is_border && ix >= 0 && ix < s.w as isize {
                        continue; // interior, already copied
                    }
                    if let Some(x) = map_coord(ix, s.w) {
                        let i = y * s.w + x;
                        gi[i] = gi[i] + gp[oy * os.w + ox];
                    }
                }
            }
        }
    }
    grad_in
}

/// Gradient routing through randn padding using the recorded draws: interior
/// passes through; each draw contributes `(1±eps)/2` to the window extrema.
pub fn pad_backward_randn<T: Scalar>(
    input_shape: Shape,
    amounts: PadAmounts,
    traces: &[Vec<RandnDraw>],
    grad_out: &TensorBase<T>,
) -> TensorBase<T> {
    let s = input_shape;
    let os = grad_out.shape();
    let mut grad_in = TensorBase::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            let gp = grad_out.plane(n, c);
            let mut buf = vec![0.0f64; s.h * s.w];
            for y in 0..s.h {
                let orow = (y + amounts.top) * os.w + amounts.left;
                for x in 0..s.w {
                    buf[y * s.w + x] += gp[orow + x].to_f64();
                }
            }
            for draw in &traces[n * s.c + c] {
                let g = gp[draw.out_idx as usize].to_f64();
                let eps = draw.eps as f64;
                buf[draw.argmax as usize] += g * (1.0 + eps) / 2.0;
                buf[draw.argmin as usize] += g * (1.0 - eps) / 2.0;
            }
            for (dst, v) in grad_in.plane_mut(n, c).iter_mut().zip(buf) {
                *dst = T::from_f64(v);
            }
        }
    }
    grad_in
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Purpose;
    use crate::tensor::Tensor;

    fn ctx(seed: u64) -> RandnCtx {
        RandnCtx {
            rng: RngStream::new(seed, Purpose::RandnPad),
            round: 0,
            sample_base: 0,
            layer: 0,
        }
    }

    #[test]
    fn zeros_ring() {
        let t = Tensor::from_rows(&[&[1., 2.], &[3., 4.]]).unwrap();
        let p = pad(&t, PadAmounts::new(1, 1, 1, 1), PaddingScheme::Zeros, None).unwrap();
        assert_eq!(p.shape(), Shape::new(1, 1, 4, 4));
        #[rustfmt::skip]
        let want = [
            0., 0., 0., 0.,
            0., 1., 2., 0.,
            0., 3., 4., 0.,
            0., 0., 0., 0.,
        ];
        assert_eq!(p.data(), &want);
    }

    #[test]
    fn replicate_left_edge() {
        let t = Tensor::from_rows(&[&[1., 2.], &[3., 4.]]).unwrap();
        let p = pad(&t, PadAmounts::new(1, 0, 0, 0), PaddingScheme::Replicate, None).unwrap();
        assert_eq!(p.data(), &[1., 1., 2., 3., 3., 4.]);
    }

    #[test]
    fn circular_row_wraps() {
        let t = Tensor::from_rows(&[&[1., 2., 3.]]).unwrap();
        let p = pad(&t, PadAmounts::new(2, 2, 0, 0), PaddingScheme::Circular, None).unwrap();
        assert_eq!(p.data(), &[2., 3., 1., 2., 3., 1., 2.]);
    }

    #[test]
    fn reflect_excludes_edge() {
        let t = Tensor::from_rows(&[&[1., 2., 3.]]).unwrap();
        let p = pad(&t, PadAmounts::new(2, 2, 0, 0), PaddingScheme::Reflect, None).unwrap();
        assert_eq!(p.data(), &[3., 2., 1., 2., 3., 2., 1.]);
    }

    #[test]
    fn reflect_bound_enforced() {
        let t = Tensor::from_rows(&[&[1., 2., 3.]]).unwrap();
        let err = pad(&t, PadAmounts::new(3, 0, 0, 0), PaddingScheme::Reflect, None).unwrap_err();
        assert_eq!(err.category(), "pad-bounds");
    }

    #[test]
    fn circular_bound_enforced() {
        let t = Tensor::from_rows(&[&[1., 2., 3.]]).unwrap();
        assert!(pad(&t, PadAmounts::new(3, 0, 0, 0), PaddingScheme::Circular, None).is_ok());
        let err = pad(&t, PadAmounts::new(4, 0, 0, 0), PaddingScheme::Circular, None).unwrap_err();
        assert_eq!(err.category(), "pad-bounds");
    }

    #[test]
    fn none_rejects_nonzero_amounts() {
        let t = Tensor::from_rows(&[&[1., 2.]]).unwrap();
        let err = pad(&t, PadAmounts::new(1, 0, 0, 0), PaddingScheme::None, None).unwrap_err();
        assert_eq!(err.category(), "pad-bounds");
    }

    #[test]
    fn randn_constant_input_is_exact_constant_for_any_seed() {
        let t = Tensor::full(Shape::new(1, 2, 4, 4), 7.0);
        for seed in [0u64, 1, 99] {
            let p = pad(
                &t,
                PadAmounts::new(2, 2, 2, 2),
                PaddingScheme::Randn { window: 3 },
                Some(ctx(seed)),
            )
            .unwrap();
            assert!(p.data().iter().all(|&v| v == 7.0), "seed {seed}");
        }
    }

    #[test]
    fn randn_identical_tags_identical_tensors() {
        let t = Tensor::from_vec(
            Shape::new(2, 3, 5, 5),
            (0..150).map(|v| (v as f32 * 0.37).sin()).collect(),
        )
        .unwrap();
        let a = pad(&t, PadAmounts::new(2, 1, 1, 2), PaddingScheme::Randn { window: 3 }, Some(ctx(5)))
            .unwrap();
        let b = pad(&t, PadAmounts::new(2, 1, 1, 2), PaddingScheme::Randn { window: 3 }, Some(ctx(5)))
            .unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn randn_window_bounds() {
        let t = Tensor::full(Shape::new(1, 1, 3, 3), 0.0);
        let e = pad(&t, PadAmounts::new(1, 0, 0, 0), PaddingScheme::Randn { window: 5 }, Some(ctx(0)))
            .unwrap_err();
        assert_eq!(e.category(), "pad-bounds");
        let e = pad(&t, PadAmounts::new(1, 0, 0, 0), PaddingScheme::Randn { window: 4 }, Some(ctx(0)))
            .unwrap_err();
        assert_eq!(e.category(), "pad-bounds");
    }

    #[test]
    fn same_amounts_examples() {
        assert_eq!(pad_amounts_for(PadMode::Same, 3, 1, 8), (1, 1));
        assert_eq!(pad_amounts_for(PadMode::Same, 3, 2, 8), (0, 1));
        assert_eq!(pad_amounts_for(PadMode::Full, 5, 1, 13), (4, 4));
        assert_eq!(pad_amounts_for(PadMode::Valid, 7, 2, 100), (0, 0));
        // k7 s2 on 224: total 5, split low 2 / high 3.
        assert_eq!(pad_amounts_for(PadMode::Same, 7, 2, 224), (2, 3));
    }
}
