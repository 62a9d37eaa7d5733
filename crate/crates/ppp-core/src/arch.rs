//! Architecture descriptions: layer stacks, shape/geometry inference, and
//! capture-layer bookkeeping.
//!
//! An `ArchSpec` is a plain ordered list of layers. Geometry inference walks
//! the list once and resolves, for a given input size and padding regime,
//! every pad amount, every intermediate shape, and the composed
//! receptive-field map at each layer. Both the executor and the alignment
//! planner consume that single walk, so they can never disagree about
//! geometry.

use crate::coord::{CoordMap, RfMap2d};
use crate::error::{Error, Result};
use crate::padding::{pad_amounts_for, PadAmounts, PadMode};
use serde::{Deserialize, Serialize};

/// Where a convolution's padding is applied.
///
/// `PreConv` is the traditional order (pad, convolve, normalize, activate).
/// `PostNorm` runs the convolution valid and pads its output between
/// normalization and activation, so sampling-based padding sees signed
/// pre-activation statistics instead of ReLU-clamped ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PadPlacement {
    #[default]
    PreConv,
    PostNorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum LayerKind {
    Conv {
        k: usize,
        stride: usize,
        out_ch: usize,
        pad_mode: PadMode,
        #[serde(default)]
        pad_placement: PadPlacement,
    },
    MaxPool {
        k: usize,
        stride: usize,
        pad_mode: PadMode,
    },
    BatchNorm,
    Relu,
    GlobalAvgPool,
    Linear {
        out: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    #[serde(flatten)]
    pub kind: LayerKind,
    /// Marks a layer of interest whose output is captured for measurement.
    #[serde(default)]
    pub capture: bool,
}

impl LayerSpec {
    fn new(kind: LayerKind) -> Self {
        LayerSpec { kind, capture: false }
    }

    fn captured(kind: LayerKind) -> Self {
        LayerSpec { kind, capture: true }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub name: String,
    pub in_ch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub layers: Vec<LayerSpec>,
    pub classes: usize,
}

/// Resolved geometry of one layer for a concrete input size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerGeom {
    /// Channels/extent entering the layer (before any padding).
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    /// Pad applied to the layer input (pre-conv convolutions and pools).
    pub pre_pad: PadAmounts,
    /// Deferred pad emitted by a post-norm convolution, in output
    /// coordinates; applied later in the walk.
    pub deferred_pad: Option<PadAmounts>,
    /// A pending deferred pad that must be applied to this layer's input
    /// before the op runs.
    pub flush_before: Option<PadAmounts>,
    /// Shape leaving this layer.
    pub out_c: usize,
    pub out_h: usize,
    pub out_w: usize,
    /// Composed receptive-field map from this layer's output grid (deferred
    /// pads resolved) back to input coordinates.
    pub rf: RfMap2d,
}

/// Full geometry walk for one (arch, input size, padding regime).
#[derive(Debug, Clone)]
pub struct Geometry {
    pub layers: Vec<LayerGeom>,
    /// Indices of capture layers, in order.
    pub captures: Vec<usize>,
}

impl Geometry {
    pub fn out_of(&self, layer: usize) -> (usize, usize, usize) {
        let g = &self.layers[layer];
        (g.out_c, g.out_h, g.out_w)
    }
}

impl ArchSpec {
    /// Resolve shapes, pad amounts and receptive-field maps for an input of
    /// `(h, w)`. With `valid = true` every pad amount is forced to zero (the
    /// no-padding / optimal-path regime) and the net shrinks spatially.
    pub fn geometry(&self, h: usize, w: usize, valid: bool) -> Result<Geometry> {
        let mut geoms = Vec::with_capacity(self.layers.len());
        let mut captures = Vec::new();
        let (mut c, mut ch, mut cw) = (self.in_ch, h, w);
        let mut rf = RfMap2d::identity();
        // Deferred pad waiting to be applied, in current feature coords.
        let mut pending: Option<PadAmounts> = None;

        for (i, layer) in self.layers.iter().enumerate() {
            let err = |detail: String| Error::ShapeInference { layer: i, detail };
            let mut flush_before = None;
            let mut flush = |ch: &mut usize, cw: &mut usize| {
                if let Some(p) = pending.take() {
                    *ch += p.top + p.bottom;
                    *cw += p.left + p.right;
                    flush_before = Some(p);
                }
            };

            let (in_c, mut geom) = (c, LayerGeom {
                in_c: c,
                in_h: ch,
                in_w: cw,
                pre_pad: PadAmounts::zero(),
                deferred_pad: None,
                flush_before: None,
                out_c: c,
                out_h: ch,
                out_w: cw,
                rf,
            });

            match layer.kind {
                LayerKind::Conv { k, stride, out_ch, pad_mode, pad_placement } => {
                    flush(&mut ch, &mut cw);
                    geom.in_h = ch;
                    geom.in_w = cw;
                    let (pt, pb) = if valid { (0, 0) } else { pad_amounts_for(pad_mode, k, stride, ch) };
                    let (pl, pr) = if valid { (0, 0) } else { pad_amounts_for(pad_mode, k, stride, cw) };
                    let use_deferred =
                        !valid && pad_placement == PadPlacement::PostNorm && (pt + pb + pl + pr) > 0;
                    if use_deferred {
                        if pt % stride != 0 || pl % stride != 0 {
                            return Err(err(format!(
                                "post-norm padding cannot align: low pad ({pt},{pl}) not a multiple of stride {stride}"
                            )));
                        }
                        if ch < k || cw < k {
                            return Err(err(format!("input {ch}x{cw} smaller than kernel {k}")));
                        }
                        let (oh_total, ow_total) = (
                            (ch + pt + pb - k) / stride + 1,
                            (cw + pl + pr - k) / stride + 1,
                        );
                        let (oh_valid, ow_valid) = ((ch - k) / stride + 1, (cw - k) / stride + 1);
                        let (ot, ol) = (pt / stride, pl / stride);
                        if oh_total < oh_valid + ot || ow_total < ow_valid + ol {
                            return Err(err("deferred pad would be negative".into()));
                        }
                        let deferred = PadAmounts {
                            top: ot,
                            bottom: oh_total - oh_valid - ot,
                            left: ol,
                            right: ow_total - ow_valid - ol,
                        };
                        geom.deferred_pad = Some(deferred);
                        pending = Some(deferred);
                        ch = oh_valid;
                        cw = ow_valid;
                    } else {
                        geom.pre_pad = PadAmounts { left: pl, right: pr, top: pt, bottom: pb };
                        let (ph, pw) = (ch + pt + pb, cw + pl + pr);
                        if ph < k || pw < k {
                            return Err(err(format!("padded input {ph}x{pw} smaller than kernel {k}")));
                        }
                        ch = (ph - k) / stride + 1;
                        cw = (pw - k) / stride + 1;
                    }
                    c = out_ch;
                    // Either route realizes the same sampling grid.
                    rf = RfMap2d {
                        y: rf.y.then_layer(k, stride, pt),
                        x: rf.x.then_layer(k, stride, pl),
                    };
                }
                LayerKind::MaxPool { k, stride, pad_mode } => {
                    flush(&mut ch, &mut cw);
                    geom.in_h = ch;
                    geom.in_w = cw;
                    let (pt, pb) = if valid { (0, 0) } else { pad_amounts_for(pad_mode, k, stride, ch) };
                    let (pl, pr) = if valid { (0, 0) } else { pad_amounts_for(pad_mode, k, stride, cw) };
                    geom.pre_pad = PadAmounts { left: pl, right: pr, top: pt, bottom: pb };
                    let (ph, pw) = (ch + pt + pb, cw + pl + pr);
                    if ph < k || pw < k {
                        return Err(err(format!("pool window {k} exceeds input {ph}x{pw}")));
                    }
                    ch = (ph - k) / stride + 1;
                    cw = (pw - k) / stride + 1;
                    rf = RfMap2d {
                        y: rf.y.then_layer(k, stride, pt),
                        x: rf.x.then_layer(k, stride, pl),
                    };
                }
                LayerKind::BatchNorm => {
                    // Deferred pads stay pending across normalization.
                }
                LayerKind::Relu => {
                    flush(&mut ch, &mut cw);
                }
                LayerKind::GlobalAvgPool => {
                    flush(&mut ch, &mut cw);
                    ch = 1;
                    cw = 1;
                }
                LayerKind::Linear { out } => {
                    flush(&mut ch, &mut cw);
                    if ch != 1 || cw != 1 {
                        return Err(err(format!("linear expects 1x1 spatial input, got {ch}x{cw}")));
                    }
                    c = out;
                }
            }

            geom.flush_before = flush_before;
            geom.out_c = c;
            geom.out_h = ch;
            geom.out_w = cw;
            geom.rf = rf;
            let _ = in_c;

            if layer.capture {
                if pending.is_some() {
                    return Err(err("capture inside an unapplied deferred-pad region".into()));
                }
                match layer.kind {
                    LayerKind::GlobalAvgPool | LayerKind::Linear { .. } => {
                        return Err(err("capture only allowed on spatial layers".into()));
                    }
                    _ => captures.push(i),
                }
            }
            geoms.push(geom);
        }
        Ok(Geometry { layers: geoms, captures })
    }

    /// Composed center map of the sub-network up to and including `upto`.
    /// `valid` selects the no-padding regime (all pads zero).
    pub fn coord_map_of(&self, h: usize, w: usize, upto: usize, valid: bool) -> Result<(CoordMap, CoordMap)> {
        let geom = self.geometry(h, w, valid)?;
        let rf = geom.layers[upto].rf;
        Ok((rf.y.center(), rf.x.center()))
    }

    /// Nominal-size geometry with the arch's own padding.
    pub fn nominal_geometry(&self) -> Result<Geometry> {
        self.geometry(self.in_h, self.in_w, false)
    }

    /// Deepest accumulated stride over all spatial layers.
    pub fn max_stride(&self) -> i64 {
        self.layers
            .iter()
            .map(|l| match l.kind {
                LayerKind::Conv { stride, .. } | LayerKind::MaxPool { stride, .. } => stride as i64,
                _ => 1,
            })
            .product()
    }

    pub fn capture_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.capture.then_some(i))
            .collect()
    }

    /// Flip every convolution to post-norm padding (used for sampling-based
    /// schemes, which must see pre-activation statistics).
    pub fn with_post_norm_padding(mut self) -> Self {
        for l in &mut self.layers {
            if let LayerKind::Conv { pad_placement, .. } = &mut l.kind {
                *pad_placement = PadPlacement::PostNorm;
            }
        }
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("arch serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s)
            .map_err(|e| Error::Format { what: "arch json", detail: e.to_string() })
    }
}

fn conv_block(k: usize, stride: usize, out_ch: usize, pad_mode: PadMode, capture: bool) -> Vec<LayerSpec> {
    vec![
        LayerSpec::new(LayerKind::Conv {
            k,
            stride,
            out_ch,
            pad_mode,
            pad_placement: PadPlacement::PreConv,
        }),
        LayerSpec::new(LayerKind::BatchNorm),
        if capture {
            LayerSpec::captured(LayerKind::Relu)
        } else {
            LayerSpec::new(LayerKind::Relu)
        },
    ]
}

/// VGG-style stack: four stages of two same-padded k3 convolutions followed
/// by a k2 s2 pool, captures at each pool output. 64x64 RGB input.
pub fn mini_vgg() -> ArchSpec {
    let chans = [8usize, 16, 24, 32];
    let mut layers = Vec::new();
    for &ch in &chans {
        layers.extend(conv_block(3, 1, ch, PadMode::Same, false));
        layers.extend(conv_block(3, 1, ch, PadMode::Same, false));
        layers.push(LayerSpec::captured(LayerKind::MaxPool { k: 2, stride: 2, pad_mode: PadMode::Same }));
    }
    layers.push(LayerSpec::new(LayerKind::GlobalAvgPool));
    layers.push(LayerSpec::new(LayerKind::Linear { out: 4 }));
    ArchSpec { name: "mini-vgg".into(), in_ch: 3, in_h: 64, in_w: 64, layers, classes: 4 }
}

/// Downsampling profile of a ResNet-style stem at 224x224: k7 s2 same
/// convolution, k3 s2 same maxpool, then three k3 s2 same transitions.
/// Stride-2 same padding on even extents is one-sided, so the principal
/// point drifts; this arch exists to exercise that drift.
pub fn mini_resnet() -> ArchSpec {
    let mut layers = Vec::new();
    layers.extend(conv_block(7, 2, 16, PadMode::Same, false));
    layers.push(LayerSpec::captured(LayerKind::MaxPool { k: 3, stride: 2, pad_mode: PadMode::Same }));
    for &ch in &[24usize, 32, 48] {
        layers.extend(conv_block(3, 2, ch, PadMode::Same, true));
    }
    layers.push(LayerSpec::new(LayerKind::GlobalAvgPool));
    layers.push(LayerSpec::new(LayerKind::Linear { out: 4 }));
    ArchSpec { name: "mini-resnet".into(), in_ch: 3, in_h: 224, in_w: 224, layers, classes: 4 }
}

/// Small binary classifier for the border-handling experiment: four conv
/// blocks with pooling, global average pool, 2-way head. The receptive
/// field covers the whole 32x32 canvas. `conv_mode` selects same- or
/// full-convolution behavior for every conv layer.
pub fn bhv_cnn(conv_mode: PadMode) -> ArchSpec {
    let chans = [6usize, 12, 18, 24];
    let mut layers = Vec::new();
    for &ch in &chans {
        layers.extend(conv_block(3, 1, ch, conv_mode, false));
        layers.push(LayerSpec::captured(LayerKind::MaxPool { k: 2, stride: 2, pad_mode: PadMode::Same }));
    }
    layers.push(LayerSpec::new(LayerKind::GlobalAvgPool));
    layers.push(LayerSpec::new(LayerKind::Linear { out: 2 }));
    let name = match conv_mode {
        PadMode::Full => "bhv-cnn-full",
        _ => "bhv-cnn",
    };
    ArchSpec { name: name.into(), in_ch: 3, in_h: 32, in_w: 32, layers, classes: 2 }
}

pub fn registered_names() -> &'static [&'static str] {
    &["mini-vgg", "mini-resnet", "bhv-cnn", "bhv-cnn-full"]
}

pub fn registered(name: &str) -> Result<ArchSpec> {
    match name {
        "mini-vgg" => Ok(mini_vgg()),
        "mini-resnet" => Ok(mini_resnet()),
        "bhv-cnn" => Ok(bhv_cnn(PadMode::Same)),
        "bhv-cnn-full" => Ok(bhv_cnn(PadMode::Full)),
        other => Err(Error::Config(format!(
            "unknown arch `{other}` (registered: {})",
            registered_names().join(", ")
        ))),
    }
}
