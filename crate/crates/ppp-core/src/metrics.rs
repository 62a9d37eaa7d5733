//! PPP extraction and its scalar summaries.
//!
//! The map at a layer is the expectation over samples of the elementwise
//! absolute difference between optimally-padded and algorithmically-padded
//! features. Channels are kept in the stored map; the SNR numerator reduces
//! them with an l1 sum per pixel, the heatmap with a mean.

use crate::alignment::{paired_captures, AlignmentPlan};
use crate::arch::ArchSpec;
use crate::error::{Error, Result};
use crate::exec::PadCtx;
use crate::hash::fnv1a64;
use crate::padding::PaddingScheme;
use crate::params::ParamSet;
use crate::pnm;
use crate::tensor::{Shape, Tensor};
use rayon::prelude::*;
use std::io::Write;
use std::path::Path;

/// Expected |optimal − algorithmic| per element at one capture layer,
/// accumulated in f64.
#[derive(Debug, Clone, PartialEq)]
pub struct PppMap {
    pub layer: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    /// Row-major (c, h, w), all entries >= 0.
    pub data: Vec<f64>,
    /// Number of samples averaged.
    pub n: usize,
}

/// Noise statistics of the algorithmic features, gathered over the same
/// samples as the map: per-sample per-channel spatial standard deviation,
/// flat-averaged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureStats {
    pub mean_spatial_std: f64,
}

/// Everything measured at one capture layer.
#[derive(Debug, Clone)]
pub struct LayerMeasurement {
    pub map: PppMap,
    pub stats: FeatureStats,
}

/// Source of oversized canvases for measurement.
pub trait CanvasSource: Sync {
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    /// Canvas `idx` at exactly (oversize_h, oversize_w), values in [0, 1].
    fn canvas(&self, idx: usize) -> Result<Tensor>;
}

/// Measure PPP at every capture layer of `arch` over a dataset.
///
/// Per sample: optimal features via the no-padding pass on the oversized
/// canvas (cropped per plan), algorithmic features via the padded pass on
/// the nominal view; elementwise |a − b| accumulated in f64 in ascending
/// sample order.
pub fn ppp_measure(
    arch: &ArchSpec,
    params: &ParamSet<f32>,
    source: &dyn CanvasSource,
    scheme: PaddingScheme,
    plan: &AlignmentPlan,
    pad_seed: u64,
) -> Result<Vec<LayerMeasurement>> {
    if source.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if plan.arch != arch.name {
        return Err(Error::Config(format!(
            "plan is for arch `{}`, not `{}`",
            plan.arch, arch.name
        )));
    }

    struct SampleContrib {
        /// Per layer: |a-b| per element.
        diffs: Vec<Vec<f64>>,
        /// Per layer: sum over channels of the spatial std of the
        /// algorithmic features.
        std_sums: Vec<f64>,
    }

    let one_sample = |idx: usize| -> Result<SampleContrib> {
        let canvas = source.canvas(idx)?;
        let paired = paired_captures(
            arch,
            params,
            &canvas,
            scheme,
            plan,
            PadCtx::for_sample(pad_seed, idx as u64),
        )?;
        let mut diffs = Vec::with_capacity(paired.layers.len());
        let mut std_sums = Vec::with_capacity(paired.layers.len());
        for pl in &paired.layers {
            let a = pl.algo.data();
            let o = pl.optimal.data();
            diffs.push(
                o.iter()
                    .zip(a)
                    .map(|(&ov, &av)| (ov as f64 - av as f64).abs())
                    .collect(),
            );
            let s = pl.algo.shape();
            let hw = (s.h * s.w) as f64;
            let mut std_sum = 0.0f64;
            for c in 0..s.c {
                let plane = pl.algo.plane(0, c);
                let mut sum = 0.0f64;
                for &v in plane {
                    sum += v as f64;
                }
                let mean = sum / hw;
                let mut sq = 0.0f64;
                for &v in plane {
                    let d = v as f64 - mean;
                    sq += d * d;
                }
                std_sum += (sq / hw).sqrt();
            }
            std_sums.push(std_sum);
        }
        Ok(SampleContrib { diffs, std_sums })
    };

    let n = source.len();
    let geom = arch.nominal_geometry()?;
    let mut acc: Vec<Vec<f64>> = plan
        .layers
        .iter()
        .map(|la| vec![0.0f64; la.algo_c * la.algo_h * la.algo_w])
        .collect();
    let mut std_acc = vec![0.0f64; plan.layers.len()];

    // Samples compute in parallel inside fixed-size chunks; accumulation
    // stays in ascending sample order so results are thread-count
    // independent.
    const CHUNK: usize = 16;
    let mut idx = 0;
    while idx < n {
        let hi = (idx + CHUNK).min(n);
        let contribs: Vec<Result<SampleContrib>> =
            (idx..hi).into_par_iter().map(one_sample).collect();
        for contrib in contribs {
            let contrib = contrib?;
            for (l, d) in contrib.diffs.iter().enumerate() {
                let a = &mut acc[l];
                for (dst, v) in a.iter_mut().zip(d) {
                    *dst += v;
                }
            }
            for (l, s) in contrib.std_sums.iter().enumerate() {
                std_acc[l] += s;
            }
        }
        idx = hi;
    }

    let inv_n = 1.0 / n as f64;
    let mut out = Vec::with_capacity(plan.layers.len());
    for (l, la) in plan.layers.iter().enumerate() {
        let data: Vec<f64> = acc[l].iter().map(|v| v * inv_n).collect();
        let _ = &geom; // geometry kept for future per-layer annotations
        out.push(LayerMeasurement {
            map: PppMap {
                layer: la.layer,
                c: la.algo_c,
                h: la.algo_h,
                w: la.algo_w,
                data,
                n,
            },
            stats: FeatureStats {
                mean_spatial_std: std_acc[l] * inv_n / la.algo_c as f64,
            },
        })
    }
    Ok(out)
}

/// Single-layer convenience wrapper: measure and keep layer `k` only.
pub fn ppp_map(
    arch: &ArchSpec,
    params: &ParamSet<f32>,
    source: &dyn CanvasSource,
    scheme: PaddingScheme,
    plan: &AlignmentPlan,
    k: usize,
    pad_seed: u64,
) -> Result<LayerMeasurement> {
    ppp_measure(arch, params, source, scheme, plan, pad_seed)?
        .into_iter()
        .find(|m| m.map.layer == k)
        .ok_or_else(|| Error::Config(format!("layer {k} is not a capture layer")))
}

/// Threshold below which the noise denominator counts as degenerate.
pub const SNR_DEGENERATE_EPS: f64 = 1e-12;

/// Signal-to-noise summary: spatial mean of the channel-l1-reduced map over
/// the mean spatial std of the algorithmic features. Returns the value and
/// a degeneracy flag; a degenerate denominator yields `+inf` and must never
/// pass silently.
pub fn snr_ppp(map: &PppMap, stats: &FeatureStats) -> (f64, bool) {
    let hw = map.h * map.w;
    let mut spatial = vec![0.0f64; hw];
    for c in 0..map.c {
        let plane = &map.data[c * hw..(c + 1) * hw];
        for (dst, v) in spatial.iter_mut().zip(plane) {
            *dst += v; // entries are already absolute values
        }
    }
    let mut num = 0.0f64;
    for v in &spatial {
        num += v;
    }
    num /= hw as f64;
    if stats.mean_spatial_std < SNR_DEGENERATE_EPS {
        if num == 0.0 {
            // Identically-zero map over constant features: zero signal.
            return (0.0, true);
        }
        return (f64::INFINITY, true);
    }
    (num / stats.mean_spatial_std, false)
}

/// Mean absolute error summary: global mean of the map.
pub fn mae_ppp(map: &PppMap) -> f64 {
    let mut acc = 0.0f64;
    for v in &map.data {
        acc += v;
    }
    acc / map.data.len() as f64
}

/// Channel-mean, min-max-normalized 8-bit grayscale rendering of a map.
/// A constant map renders mid-gray.
pub fn render_heatmap(map: &PppMap) -> (Vec<u8>, usize, usize) {
    let hw = map.h * map.w;
    let mut gray = vec![0.0f64; hw];
    for c in 0..map.c {
        let plane = &map.data[c * hw..(c + 1) * hw];
        for (dst, v) in gray.iter_mut().zip(plane) {
            *dst += v;
        }
    }
    let inv_c = 1.0 / map.c as f64;
    for v in &mut gray {
        *v *= inv_c;
    }
    let lo = gray.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = gray.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let pixels: Vec<u8> = if hi - lo < 1e-300 {
        vec![pnm::quantize(0.5); hw]
    } else {
        gray.iter()
            .map(|&v| pnm::quantize(((v - lo) / (hi - lo)) as f32))
            .collect()
    };
    (pixels, map.w, map.h)
}

pub fn write_heatmap_pgm(map: &PppMap, path: &Path) -> Result<()> {
    let (pixels, w, h) = render_heatmap(map);
    pnm::write_pgm(path, &pixels, w, h)
}

/// One row of the metrics report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub arch: String,
    pub scheme: String,
    pub checkpoint: String,
    pub layer: usize,
    pub n: usize,
    pub snr_ppp: f64,
    pub mae_ppp: f64,
    pub degenerate: bool,
}

impl ReportRow {
    pub fn from_measurement(
        arch: &str,
        scheme: &str,
        checkpoint: &str,
        m: &LayerMeasurement,
    ) -> Self {
        let (snr, degenerate) = snr_ppp(&m.map, &m.stats);
        ReportRow {
            arch: arch.to_string(),
            scheme: scheme.to_string(),
            checkpoint: checkpoint.to_string(),
            layer: m.map.layer,
            n: m.map.n,
            snr_ppp: snr,
            mae_ppp: mae_ppp(&m.map),
            degenerate,
        }
    }
}

/// 9 significant digits, locale-free, stable across platforms.
pub fn format_sig9(v: f64) -> String {
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    format!("{v:.8e}")
}

pub const METRICS_CSV_HEADER: &str = "arch,scheme,checkpoint,layer,n,snr_ppp,mae_ppp";

pub fn write_metrics_csv(rows: &[ReportRow], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "{METRICS_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.arch,
            r.scheme,
            r.checkpoint,
            r.layer,
            r.n,
            format_sig9(r.snr_ppp),
            format_sig9(r.mae_ppp)
        )?;
    }
    Ok(())
}

const MAP_MAGIC: &[u8; 8] = b"PPPMAP01";

/// Raw map dump, for re-rendering without recomputation.
pub fn save_map(map: &PppMap, path: &Path) -> Result<()> {
    let mut payload = Vec::with_capacity(map.data.len() * 8 + 32);
    payload.extend_from_slice(&(map.layer as u32).to_le_bytes());
    payload.extend_from_slice(&(map.c as u32).to_le_bytes());
    payload.extend_from_slice(&(map.h as u32).to_le_bytes());
    payload.extend_from_slice(&(map.w as u32).to_le_bytes());
    payload.extend_from_slice(&(map.n as u64).to_le_bytes());
    for v in &map.data {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    let mut out = Vec::with_capacity(payload.len() + 16);
    out.extend_from_slice(MAP_MAGIC);
    out.extend_from_slice(&fnv1a64(&payload).to_le_bytes());
    out.extend_from_slice(&payload);
    std::fs::write(path, &out).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_map(path: &Path) -> Result<PppMap> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let fail = |d: &str| Error::Format { what: "ppp map", detail: d.to_string() };
    if bytes.len() < 16 || &bytes[..8] != MAP_MAGIC {
        return Err(fail("bad magic"));
    }
    let stored = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let payload = &bytes[16..];
    if fnv1a64(payload) != stored {
        return Err(fail("checksum mismatch"));
    }
    if payload.len() < 24 {
        return Err(fail("truncated header"));
    }
    let rd_u32 = |o: usize| u32::from_le_bytes(payload[o..o + 4].try_into().unwrap()) as usize;
    let layer = rd_u32(0);
    let (c, h, w) = (rd_u32(4), rd_u32(8), rd_u32(12));
    let n = u64::from_le_bytes(payload[16..24].try_into().unwrap()) as usize;
    let count = c * h * w;
    if payload.len() != 24 + count * 8 {
        return Err(fail("payload length mismatch"));
    }
    let data: Vec<f64> = (0..count)
        .map(|i| f64::from_le_bytes(payload[24 + i * 8..32 + i * 8].try_into().unwrap()))
        .collect();
    Ok(PppMap { layer, c, h, w, data, n })
}

/// In-memory canvas list, mainly for tests and procedural pipelines.
pub struct VecSource(pub Vec<Tensor>);

impl CanvasSource for VecSource {
    fn len(&self) -> usize {
        self.0.len()
    }
    fn canvas(&self, idx: usize) -> Result<Tensor> {
        Ok(self.0[idx].clone())
    }
}

#[allow(dead_code)]
fn shape_of(map: &PppMap) -> Shape {
    Shape::new(1, map.c, map.h, map.w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map_from(layer: usize, c: usize, h: usize, w: usize, data: Vec<f64>) -> PppMap {
        assert_eq!(data.len(), c * h * w);
        PppMap { layer, c, h, w, data, n: 1 }
    }

    #[test]
    fn mae_is_flat_mean() {
        let m = map_from(0, 1, 2, 2, vec![1.0, 3.0, 0.0, 0.0]);
        assert_eq!(mae_ppp(&m), 1.0);
        let z = map_from(0, 2, 2, 2, vec![0.0; 8]);
        assert_eq!(mae_ppp(&z), 0.0);
    }

    #[test]
    fn snr_synthetic_value() {
        // channel-l1 map constant 2.0, feature std 4.0 -> 0.5
        let m = map_from(0, 2, 3, 3, vec![1.0; 18]);
        let (snr, degenerate) = snr_ppp(&m, &FeatureStats { mean_spatial_std: 4.0 });
        assert!(!degenerate);
        assert!((snr - 0.5).abs() < 1e-12);
    }

    #[test]
    fn snr_zero_map_is_zero() {
        let m = map_from(0, 2, 3, 3, vec![0.0; 18]);
        let (snr, _) = snr_ppp(&m, &FeatureStats { mean_spatial_std: 1.0 });
        assert_eq!(snr, 0.0);
    }

    #[test]
    fn snr_degenerate_flagged() {
        let m = map_from(0, 1, 2, 2, vec![1.0; 4]);
        let (snr, degenerate) = snr_ppp(&m, &FeatureStats { mean_spatial_std: 0.0 });
        assert!(degenerate);
        assert!(snr.is_infinite());
    }

    #[test]
    fn heatmap_constant_is_mid_gray() {
        let m = map_from(0, 3, 4, 4, vec![0.7; 48]);
        let (px, _, _) = render_heatmap(&m);
        assert!(px.iter().all(|&p| p == 128));
    }

    #[test]
    fn heatmap_max_pixel_is_255() {
        let mut data = vec![0.1; 16];
        data[3] = 0.9;
        let m = map_from(0, 1, 4, 4, data);
        let (px, _, _) = render_heatmap(&m);
        assert_eq!(px[3], 255);
        assert_eq!(px.iter().filter(|&&p| p == 255).count(), 1);
        assert_eq!(px[0], 0);
    }

    #[test]
    fn heatmap_pgm_round_trip_matches_quantized_normalization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.pgm");
        let data: Vec<f64> = (0..12).map(|i| (i as f64) * 0.37).collect();
        let m = map_from(0, 1, 3, 4, data.clone());
        write_heatmap_pgm(&m, &path).unwrap();
        let img = pnm::read_pnm(&path).unwrap();
        let lo = data.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for (i, &v) in data.iter().enumerate() {
            let expect = pnm::quantize(((v - lo) / (hi - lo)) as f32);
            assert_eq!(pnm::quantize(img.data()[i]), expect);
        }
    }

    #[test]
    fn map_dump_round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pppmap");
        let m = map_from(7, 2, 3, 3, (0..18).map(|i| i as f64 * 0.5).collect());
        save_map(&m, &path).unwrap();
        assert_eq!(load_map(&path).unwrap(), m);

        let mut bytes = std::fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0xff;
        std::fs::write(&path, &bytes).unwrap();
        let err = load_map(&path).unwrap_err();
        assert_eq!(err.category(), "format");
    }

    #[test]
    fn sig9_formatting() {
        assert_eq!(format_sig9(0.5), "5.00000000e-1");
        assert_eq!(format_sig9(f64::INFINITY), "inf");
        assert_eq!(format_sig9(0.0), "0.00000000e0");
    }
}
