//! Alignment between algorithmically-padded and optimally-padded features.
//!
//! The optimal path runs the same network with no padding at all on an
//! oversized canvas, so every feature it produces reads only true pixels.
//! To compare it against the padded path pixel-for-pixel, the oversized
//! margins must place the nominal image on the valid path's sampling grid:
//! for every spatial layer with accumulated stride `S` and accumulated
//! low-pad displacement `d`, the margin `o` must satisfy `o ≡ d (mod S)`.
//! Stride-2 same convolutions pad one side only, which skews `d` off the
//! centered choice; the resulting crop deviation from center is exactly the
//! principal-point shift. Maxpool parity is the same congruence at the pool
//! layers.

use crate::arch::{ArchSpec, LayerKind};
use crate::coord::{Rat, RfMap2d};

use crate::error::{Error, Result};
use crate::exec::{forward_capture, PadCtx};
use crate::padding::PaddingScheme;
use crate::params::ParamSet;
use crate::tensor::{Scalar, TensorBase};
use serde::{Deserialize, Serialize};

/// Alignment data for one capture layer.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LayerAlignment {
    pub layer: usize,
    /// Crop rect into the valid-path feature map.
    pub crop_top: usize,
    pub crop_left: usize,
    pub crop_h: usize,
    pub crop_w: usize,
    /// Algorithmic feature shape (c, h, w); crop shape equals it.
    pub algo_c: usize,
    pub algo_h: usize,
    pub algo_w: usize,
    /// Valid-path feature extent at this layer on the oversized canvas.
    pub valid_h: usize,
    pub valid_w: usize,
    /// Principal-point shift in this layer's pixels (crop deviation from
    /// the centered crop), and the same at input resolution.
    pub shift_y: Rat,
    pub shift_x: Rat,
    pub input_shift_y: Rat,
    pub input_shift_x: Rat,
    /// Receptive-field maps of the algorithmic path (for interior masks).
    pub rf: RfMap2d,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AlignmentPlan {
    pub arch: String,
    pub nominal_h: usize,
    pub nominal_w: usize,
    pub oversize_h: usize,
    pub oversize_w: usize,
    /// Top/left margin of the nominal window inside the canvas. Margins are
    /// symmetric, so this is a center crop.
    pub margin_top: usize,
    pub margin_left: usize,
    /// Whether the plan was built with shift correction (grid congruence).
    pub corrected: bool,
    /// Plan is for the no-padding regime (scheme `none`).
    pub valid_regime: bool,
    pub layers: Vec<LayerAlignment>,
    /// Input-resolution principal-point shift at the deepest capture layer.
    pub total_shift_y: Rat,
    pub total_shift_x: Rat,
}

/// Per-layer composed stride/displacement pulled out of a geometry walk.
struct AxisInfo {
    scale: i64,
    /// d = valid window start − algorithmic window start (≥ 0, integer).
    disp: i64,
}

fn axis_infos(arch: &ArchSpec, nominal_h: usize, nominal_w: usize, valid_regime: bool) -> Result<Vec<(AxisInfo, AxisInfo)>> {
    let geom_alg = arch.geometry(nominal_h, nominal_w, valid_regime)?;
    // Valid-path rf maps are size-independent; compose them directly.
    let mut rf_val = RfMap2d::identity();
    let mut out = Vec::with_capacity(arch.layers.len());
    for (i, layer) in arch.layers.iter().enumerate() {
        if let LayerKind::Conv { k, stride, .. } | LayerKind::MaxPool { k, stride, .. } = layer.kind {
            rf_val = RfMap2d {
                y: rf_val.y.then_layer(k, stride, 0),
                x: rf_val.x.then_layer(k, stride, 0),
            };
        }
        let rf_alg = geom_alg.layers[i].rf;
        debug_assert_eq!(rf_alg.y.scale, rf_val.y.scale);
        out.push((
            AxisInfo { scale: rf_val.y.scale, disp: rf_val.y.start - rf_alg.y.start },
            AxisInfo { scale: rf_val.x.scale, disp: rf_val.x.start - rf_alg.x.start },
        ));
    }
    Ok(out)
}

/// Valid-regime output extent at every layer for one axis, or None if some
/// kernel no longer fits.
fn valid_extents(arch: &ArchSpec, extent: usize) -> Option<Vec<usize>> {
    let mut e = extent;
    let mut out = Vec::with_capacity(arch.layers.len());
    for layer in &arch.layers {
        match layer.kind {
            LayerKind::Conv { k, stride, .. } | LayerKind::MaxPool { k, stride, .. } => {
                if e < k {
                    return None;
                }
                e = (e - k) / stride + 1;
            }
            LayerKind::GlobalAvgPool => e = 1,
            _ => {}
        }
        out.push(e);
    }
    Some(out)
}

fn last_spatial_layer(arch: &ArchSpec) -> usize {
    arch.layers
        .iter()
        .rposition(|l| matches!(l.kind, LayerKind::Conv { .. } | LayerKind::MaxPool { .. }))
        .expect("arch has at least one spatial layer")
}

/// Smallest margin for one axis such that every capture crop fits; with
/// `congruent`, the margin additionally satisfies the deepest grid
/// congruence (shift correction on).
fn search_margin(
    arch: &ArchSpec,
    infos: &[(AxisInfo, AxisInfo)],
    captures: &[usize],
    algo_extent: impl Fn(usize) -> usize,
    axis_of: impl Fn(&(AxisInfo, AxisInfo)) -> &AxisInfo,
    nominal: usize,
    congruent: bool,
) -> Result<usize> {
    let deep = last_spatial_layer(arch);
    let deep_info = axis_of(&infos[deep]);
    const LIMIT: usize = 8192;
    'outer: for o in 0..LIMIT {
        if congruent && (o as i64 - deep_info.disp).rem_euclid(deep_info.scale) != 0 {
            continue;
        }
        let Some(extents) = valid_extents(arch, nominal + 2 * o) else { continue };
        for &cl in captures {
            let info = axis_of(&infos[cl]);
            let a = algo_extent(cl);
            let v = extents[cl];
            let t_num = o as i64 - info.disp;
            let t = if congruent {
                debug_assert_eq!(t_num.rem_euclid(info.scale), 0);
                t_num / info.scale
            } else {
                t_num.div_euclid(info.scale)
            };
            let t = t.max(0);
            if t as usize + a > v {
                continue 'outer;
            }
        }
        return Ok(o);
    }
    Err(Error::MisalignedPlan {
        layer: deep,
        detail: format!("no margin below {LIMIT} satisfies the crop constraints"),
    })
}

/// Build the alignment plan for an architecture at a nominal input size.
///
/// `scheme` only matters through whether it is `none` (the algorithmic path
/// then runs valid and shrinks). The margins are chosen so that every crop
/// offset is integral and every pooling grid stays aligned; use
/// [`compute_plan_uncorrected`] to see what goes wrong without that.
pub fn compute_plan(arch: &ArchSpec, nominal_h: usize, nominal_w: usize, scheme: &PaddingScheme) -> Result<AlignmentPlan> {
    build_plan(arch, nominal_h, nominal_w, scheme.is_none(), true)
}

/// Naive plan: smallest margins that fit, centered/floored crops, no grid
/// congruence. Exists to demonstrate and test misalignment detection.
pub fn compute_plan_uncorrected(
    arch: &ArchSpec,
    nominal_h: usize,
    nominal_w: usize,
    scheme: &PaddingScheme,
) -> Result<AlignmentPlan> {
    build_plan(arch, nominal_h, nominal_w, scheme.is_none(), false)
}

fn build_plan(
    arch: &ArchSpec,
    nominal_h: usize,
    nominal_w: usize,
    valid_regime: bool,
    corrected: bool,
) -> Result<AlignmentPlan> {
    let geom_alg = arch.geometry(nominal_h, nominal_w, valid_regime)?;
    if geom_alg.captures.is_empty() {
        return Err(Error::Config(format!("arch `{}` has no capture layers", arch.name)));
    }
    let infos = axis_infos(arch, nominal_h, nominal_w, valid_regime)?;

    let o_y = search_margin(
        arch,
        &infos,
        &geom_alg.captures,
        |l| geom_alg.layers[l].out_h,
        |p| &p.0,
        nominal_h,
        corrected,
    )?;
    let o_x = search_margin(
        arch,
        &infos,
        &geom_alg.captures,
        |l| geom_alg.layers[l].out_w,
        |p| &p.1,
        nominal_w,
        corrected,
    )?;

    let oversize_h = nominal_h + 2 * o_y;
    let oversize_w = nominal_w + 2 * o_x;
    let vy = valid_extents(arch, oversize_h).expect("margin search verified fit");
    let vx = valid_extents(arch, oversize_w).expect("margin search verified fit");

    let mut layers = Vec::with_capacity(geom_alg.captures.len());
    for &cl in &geom_alg.captures {
        let g = &geom_alg.layers[cl];
        let (iy, ix) = (&infos[cl].0, &infos[cl].1);
        let crop = |o: usize, info: &AxisInfo, a: usize, v: usize| -> usize {
            let t = (o as i64 - info.disp).div_euclid(info.scale).max(0);
            (t as usize).min(v - a)
        };
        let crop_top = crop(o_y, iy, g.out_h, vy[cl]);
        let crop_left = crop(o_x, ix, g.out_w, vx[cl]);
        // Deviation of the chosen crop from the exactly-centered one.
        let shift_y = Rat::int(crop_top as i64).sub(Rat::half(vy[cl] as i64 - g.out_h as i64));
        let shift_x = Rat::int(crop_left as i64).sub(Rat::half(vx[cl] as i64 - g.out_w as i64));
        layers.push(LayerAlignment {
            layer: cl,
            crop_top,
            crop_left,
            crop_h: g.out_h,
            crop_w: g.out_w,
            algo_c: g.out_c,
            algo_h: g.out_h,
            algo_w: g.out_w,
            valid_h: vy[cl],
            valid_w: vx[cl],
            shift_y,
            shift_x,
            input_shift_y: shift_y.mul_int(iy.scale),
            input_shift_x: shift_x.mul_int(ix.scale),
            rf: g.rf,
        });
    }

    let deepest = layers.last().expect("non-empty captures");
    let plan = AlignmentPlan {
        arch: arch.name.clone(),
        nominal_h,
        nominal_w,
        oversize_h,
        oversize_w,
        margin_top: o_y,
        margin_left: o_x,
        corrected,
        valid_regime,
        layers: layers.clone(),
        total_shift_y: deepest.input_shift_y,
        total_shift_x: deepest.input_shift_x,
    };
    if corrected {
        plan.validate(arch)?;
    }
    Ok(plan)
}

impl AlignmentPlan {
    /// Check the grid congruence at every spatial layer; reports the first
    /// violating layer. For non-overlapping pools this is exactly the
    /// margin-parity condition.
    pub fn validate(&self, arch: &ArchSpec) -> Result<()> {
        let infos = axis_infos(arch, self.nominal_h, self.nominal_w, self.valid_regime)?;
        for (i, layer) in arch.layers.iter().enumerate() {
            let spatial = matches!(layer.kind, LayerKind::Conv { .. } | LayerKind::MaxPool { .. });
            if !spatial {
                continue;
            }
            let (iy, ix) = (&infos[i].0, &infos[i].1);
            let bad_y = (self.margin_top as i64 - iy.disp).rem_euclid(iy.scale) != 0;
            let bad_x = (self.margin_left as i64 - ix.disp).rem_euclid(ix.scale) != 0;
            if bad_y || bad_x {
                let what = if matches!(layer.kind, LayerKind::MaxPool { .. }) {
                    "maxpool grid parity"
                } else {
                    "stride grid congruence"
                };
                return Err(Error::MisalignedPlan {
                    layer: i,
                    detail: format!(
                        "{what} violated: margins ({}, {}) are not ≡ ({}, {}) mod {}",
                        self.margin_top, self.margin_left, iy.disp, ix.disp, iy.scale
                    ),
                });
            }
        }
        Ok(())
    }

    /// The nominal view of an oversized canvas (the plan's center crop).
    pub fn nominal_view<T: Scalar>(&self, canvas: &TensorBase<T>) -> Result<TensorBase<T>> {
        let s = canvas.shape();
        if s.h != self.oversize_h || s.w != self.oversize_w {
            return Err(Error::ShapeMismatch {
                op: "nominal_view",
                detail: format!(
                    "canvas {}x{} != plan oversize {}x{}",
                    s.h, s.w, self.oversize_h, self.oversize_w
                ),
            });
        }
        canvas.crop(self.margin_top, self.margin_left, self.nominal_h, self.nominal_w)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }
}

/// Crop valid-path capture features down to the algorithmic grid: the
/// result equals what an ideal true-signal padding would produce. Features
/// must come from `forward_capture` with scheme `none` on the plan's
/// oversized canvas.
pub fn crop_optimal<T: Scalar>(
    oversized_captures: &[(usize, TensorBase<T>)],
    plan: &AlignmentPlan,
) -> Result<Vec<(usize, TensorBase<T>)>> {
    if oversized_captures.len() != plan.layers.len() {
        return Err(Error::ShapeMismatch {
            op: "crop_optimal",
            detail: format!(
                "{} captures for plan with {} layers",
                oversized_captures.len(),
                plan.layers.len()
            ),
        });
    }
    let mut out = Vec::with_capacity(plan.layers.len());
    for ((li, feat), la) in oversized_captures.iter().zip(&plan.layers) {
        if *li != la.layer {
            return Err(Error::ShapeMismatch {
                op: "crop_optimal",
                detail: format!("capture layer {li} does not match plan layer {}", la.layer),
            });
        }
        let s = feat.shape();
        if s.h != la.valid_h || s.w != la.valid_w || s.c != la.algo_c {
            return Err(Error::ShapeMismatch {
                op: "crop_optimal",
                detail: format!(
                    "layer {li}: valid features {} vs plan ({}, {}, {})",
                    s, la.algo_c, la.valid_h, la.valid_w
                ),
            });
        }
        out.push((*li, feat.crop(la.crop_top, la.crop_left, la.crop_h, la.crop_w)?));
    }
    Ok(out)
}

/// Paired features for one oversized sample: the algorithmic path on the
/// nominal view and the cropped optimal path, per capture layer.
pub struct PairedCaptures<T> {
    pub layers: Vec<PairedLayer<T>>,
}

pub struct PairedLayer<T> {
    pub layer: usize,
    pub algo: TensorBase<T>,
    pub optimal: TensorBase<T>,
}

pub fn paired_captures<T: Scalar>(
    arch: &ArchSpec,
    params: &ParamSet<T>,
    canvas: &TensorBase<T>,
    scheme: PaddingScheme,
    plan: &AlignmentPlan,
    pad_ctx: PadCtx,
) -> Result<PairedCaptures<T>> {
    let nominal = plan.nominal_view(canvas)?;
    let algo = forward_capture(arch, params, &nominal, scheme, pad_ctx)?;
    let valid = forward_capture(arch, params, canvas, PaddingScheme::None, pad_ctx)?;
    let optimal = crop_optimal(&valid, plan)?;
    let layers = algo
        .into_iter()
        .zip(optimal)
        .map(|((li, a), (lo, o))| {
            debug_assert_eq!(li, lo);
            debug_assert_eq!(a.shape(), o.shape());
            PairedLayer { layer: li, algo: a, optimal: o }
        })
        .collect();
    Ok(PairedCaptures { layers })
}

/// Result of comparing algorithmic and cropped-optimal features on the
/// pixels whose receptive field lies strictly inside the nominal image.
#[derive(Debug, Clone)]
pub struct EquivalenceLayer {
    pub layer: usize,
    pub interior_pixels: usize,
    pub max_interior_diff: f64,
    pub max_border_diff: f64,
}

#[derive(Debug, Clone)]
pub struct EquivalenceReport {
    pub layers: Vec<EquivalenceLayer>,
}

impl EquivalenceReport {
    /// Layers whose interior disagrees beyond `tol`.
    pub fn violations(&self, tol: f64) -> Vec<usize> {
        self.layers
            .iter()
            .filter(|l| l.max_interior_diff > tol)
            .map(|l| l.layer)
            .collect()
    }
}

/// Interior-equivalence check for one oversized sample.
pub fn check_interior_equivalence<T: Scalar>(
    arch: &ArchSpec,
    params: &ParamSet<T>,
    canvas: &TensorBase<T>,
    scheme: PaddingScheme,
    plan: &AlignmentPlan,
    pad_ctx: PadCtx,
) -> Result<EquivalenceReport> {
    let paired = paired_captures(arch, params, canvas, scheme, plan, pad_ctx)?;
    let mut layers = Vec::new();
    for (pl, la) in paired.layers.iter().zip(&plan.layers) {
        let s = pl.algo.shape();
        let mut max_interior = 0.0f64;
        let mut max_border = 0.0f64;
        let mut interior_pixels = 0usize;
        for y in 0..s.h {
            let yin = la.rf.y.is_interior(y as i64, plan.nominal_h);
            for x in 0..s.w {
                let interior = yin && la.rf.x.is_interior(x as i64, plan.nominal_w);
                let mut d = 0.0f64;
                for n in 0..s.n {
                    for c in 0..s.c {
                        let diff = (pl.algo.at(n, c, y, x).to_f64()
                            - pl.optimal.at(n, c, y, x).to_f64())
                        .abs();
                        d = d.max(diff);
                    }
                }
                if interior {
                    interior_pixels += 1;
                    max_interior = max_interior.max(d);
                } else {
                    max_border = max_border.max(d);
                }
            }
        }
        layers.push(EquivalenceLayer {
            layer: pl.layer,
            interior_pixels,
            max_interior_diff: max_interior,
            max_border_diff: max_border,
        });
    }
    Ok(EquivalenceReport { layers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{mini_resnet, mini_vgg};

    #[test]
    fn mini_resnet_total_shift_is_16() {
        let arch = mini_resnet();
        let plan = compute_plan(&arch, 224, 224, &PaddingScheme::Zeros).unwrap();
        assert_eq!(plan.total_shift_y, Rat::int(16));
        assert_eq!(plan.total_shift_x, Rat::int(16));
        // Per-layer input-resolution shifts double with depth: 2, 4, 8, 16.
        let shifts: Vec<i64> = plan
            .layers
            .iter()
            .map(|l| {
                assert!(l.input_shift_y.is_integer());
                l.input_shift_y.num
            })
            .collect();
        assert_eq!(shifts, vec![2, 4, 8, 16]);
    }

    #[test]
    fn mini_vgg_shift_is_zero_and_crops_centered() {
        let arch = mini_vgg();
        let plan = compute_plan(&arch, 64, 64, &PaddingScheme::Zeros).unwrap();
        assert_eq!(plan.total_shift_y, Rat::int(0));
        assert_eq!(plan.total_shift_x, Rat::int(0));
        for l in &plan.layers {
            assert_eq!(l.shift_y, Rat::int(0), "layer {}", l.layer);
            assert_eq!(l.crop_top * 2 + l.crop_h, l.valid_h, "layer {} centered", l.layer);
        }
    }

    #[test]
    fn corrected_plans_validate() {
        for arch in [mini_vgg(), mini_resnet()] {
            let plan =
                compute_plan(&arch, arch.in_h, arch.in_w, &PaddingScheme::Zeros).unwrap();
            plan.validate(&arch).unwrap();
        }
    }

    #[test]
    fn uncorrected_mini_resnet_fails_validation() {
        let arch = mini_resnet();
        let plan = compute_plan_uncorrected(&arch, 224, 224, &PaddingScheme::Zeros).unwrap();
        let err = plan.validate(&arch).unwrap_err();
        assert_eq!(err.category(), "misaligned-plan");
    }

    #[test]
    fn crop_rects_fit_inside_valid_features() {
        let arch = mini_resnet();
        let plan = compute_plan(&arch, 224, 224, &PaddingScheme::Zeros).unwrap();
        for l in &plan.layers {
            assert!(l.crop_top + l.crop_h <= l.valid_h);
            assert!(l.crop_left + l.crop_w <= l.valid_w);
        }
    }

    #[test]
    fn plan_json_round_trip() {
        let arch = mini_vgg();
        let plan = compute_plan(&arch, 64, 64, &PaddingScheme::Zeros).unwrap();
        let back: AlignmentPlan = serde_json::from_str(&plan.to_json()).unwrap();
        assert_eq!(plan, back);
    }
}
