//! Brute-force receptive-field tracing against the coordinate algebra.
//!
//! The oracle pokes the actual engine: with all-positive weights, identity
//! batchnorm and a constant base input, adding an impulse at input row y
//! strictly increases exactly the capture-layer rows whose receptive field
//! contains y. That observed inverse map must match the window predicted by
//! the composed RfMap at every capture layer of every registered arch.

use ppp_core::arch::{registered, registered_names, ArchSpec, LayerKind};
use ppp_core::exec::{forward_capture, PadCtx};
use ppp_core::padding::PaddingScheme;
use ppp_core::params::ParamSet;
use ppp_core::tensor::{Shape, Tensor};

/// All conv/linear weights one, biases zero, batchnorm identity: a strictly
/// monotone positive network.
fn monotone_params(arch: &ArchSpec) -> ParamSet<f32> {
    let mut params = ParamSet::<f32>::init(arch, 0).unwrap();
    for (li, layer) in arch.layers.iter().enumerate() {
        match layer.kind {
            LayerKind::Conv { .. } | LayerKind::Linear { .. } => {
                for v in params.layers[li][0].value.data_mut() {
                    *v = 1.0;
                }
                for v in params.layers[li][1].value.data_mut() {
                    *v = 0.0;
                }
            }
            _ => {}
        }
    }
    params
}

fn capture_rows(captures: &[(usize, Tensor)]) -> Vec<Vec<f64>> {
    captures
        .iter()
        .map(|(_, t)| {
            let s = t.shape();
            (0..s.h)
                .map(|y| {
                    let mut acc = 0.0f64;
                    for c in 0..s.c {
                        for x in 0..s.w {
                            acc += t.at(0, c, y, x) as f64;
                        }
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

fn trace_arch(name: &str) {
    let arch = registered(name).unwrap();
    let params = monotone_params(&arch);
    let geom = arch.nominal_geometry().unwrap();
    let (h, w) = (arch.in_h, arch.in_w);

    // Replicate padding keeps a constant input constant at every layer, so
    // every pooling window is tied and an impulse always propagates its
    // full structural receptive field. (Replicated border copies stay
    // inside the same windows as their source row.)
    let scheme = PaddingScheme::Replicate;
    // Keep magnitudes bounded on the deep 224 stack.
    let base_value = if h > 100 { 1e-4f32 } else { 1e-2f32 };
    let base_input = Tensor::full(Shape::new(1, arch.in_ch, h, w), base_value);
    let base = forward_capture(&arch, &params, &base_input, scheme, PadCtx::new(0)).unwrap();
    let base_rows = capture_rows(&base);
    for rows in &base_rows {
        for r in rows {
            assert!((r / rows[0] - 1.0).abs() < 1e-5, "{name}: base rows not constant");
        }
    }

    // observed[l][j] collects input rows that influence capture row j.
    let mut observed: Vec<Vec<Vec<usize>>> = base
        .iter()
        .map(|(_, t)| vec![Vec::new(); t.shape().h])
        .collect();

    for y in 0..h {
        let mut probe = base_input.clone();
        for c in 0..arch.in_ch {
            *probe.at_mut(0, c, y, w / 2) = base_value * 3.0;
        }
        let run = forward_capture(&arch, &params, &probe, scheme, PadCtx::new(0)).unwrap();
        let rows = capture_rows(&run);
        for (l, (now, before)) in rows.iter().zip(&base_rows).enumerate() {
            for (j, (a, b)) in now.iter().zip(before).enumerate() {
                let denom = b.abs().max(1e-30);
                if (a - b).abs() / denom > 1e-6 {
                    observed[l][j].push(y);
                }
            }
        }
    }

    for (l, &cl) in geom.captures.iter().enumerate() {
        let rf = geom.layers[cl].rf.y;
        let feat_h = base[l].1.shape().h;
        for j in 0..feat_h {
            let (lo, hi) = rf.window(j as i64);
            let expect: Vec<usize> =
                (lo.max(0)..=hi.min(h as i64 - 1)).map(|v| v as usize).collect();
            assert_eq!(
                observed[l][j], expect,
                "{name} capture {cl} row {j}: window ({lo}, {hi})"
            );
        }
    }
}

#[test]
fn tracer_matches_coordinate_algebra_mini_vgg() {
    trace_arch("mini-vgg");
}

#[test]
fn tracer_matches_coordinate_algebra_bhv() {
    trace_arch("bhv-cnn");
    trace_arch("bhv-cnn-full");
}

#[test]
fn tracer_matches_coordinate_algebra_mini_resnet() {
    trace_arch("mini-resnet");
}

/// The per-layer alignment shifts reported by the plan agree with the
/// receptive-field math: the crop picks exactly the valid-path positions
/// whose windows coincide with the algorithmic path's windows.
#[test]
fn plan_crops_land_on_matching_windows() {
    for name in registered_names() {
        let arch = registered(name).unwrap();
        let plan = ppp_core::alignment::compute_plan(
            &arch,
            arch.in_h,
            arch.in_w,
            &PaddingScheme::Zeros,
        )
        .unwrap();
        let geom = arch.nominal_geometry().unwrap();
        for la in &plan.layers {
            let rf_alg = geom.layers[la.layer].rf.y;
            // Valid-path window of the crop start in canvas coordinates,
            // shifted back to nominal coordinates.
            let mut rf_val = ppp_core::coord::RfMap::identity();
            for layer in &arch.layers[..=la.layer] {
                if let LayerKind::Conv { k, stride, .. } | LayerKind::MaxPool { k, stride, .. } =
                    layer.kind
                {
                    rf_val = rf_val.then_layer(k, stride, 0);
                }
            }
            for a in [0i64, (la.algo_h - 1) as i64] {
                let (alo, ahi) = rf_alg.window(a);
                let (vlo, vhi) = rf_val.window(la.crop_top as i64 + a);
                assert_eq!(vlo - plan.margin_top as i64, alo, "{name} layer {}", la.layer);
                assert_eq!(vhi - plan.margin_top as i64, ahi, "{name} layer {}", la.layer);
            }
        }
    }
}
