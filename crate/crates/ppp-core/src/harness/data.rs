//! Measurement image sources: a directory of large PGM/PPM files, or a
//! procedural multi-octave value-noise generator standing in for large
//! photographic collections.

use crate::error::{Error, Result};
use crate::metrics::CanvasSource;
use crate::pnm;
use crate::rng::{Purpose, RngStream};
use crate::tensor::{Shape, Tensor};
use rayon::prelude::*;
use std::path::{Path, PathBuf};

/// Smoothstep-interpolated value noise, several octaves, values in [0, 1].
/// Deterministic in (stream, channel, pixel); safe to crop anywhere.
pub fn value_noise_plane(stream: RngStream, channel: u64, h: usize, w: usize) -> Vec<f32> {
    const OCTAVES: u32 = 4;
    let base_cell = (h.min(w) / 8).max(2);
    let mut out = vec![0.0f32; h * w];
    let mut total_amp = 0.0f32;
    for o in 0..OCTAVES {
        let cell = (base_cell >> o).max(1);
        let amp = 0.5f32.powi(o as i32);
        total_amp += amp;
        let lat_val = |gy: u64, gx: u64| -> f32 {
            (stream.uniform(&[channel, o as u64, gy, gx]) * 2.0 - 1.0) as f32
        };
        for y in 0..h {
            let gy = y / cell;
            let fy = (y % cell) as f32 / cell as f32;
            let sy = fy * fy * (3.0 - 2.0 * fy);
            for x in 0..w {
                let gx = x / cell;
                let fx = (x % cell) as f32 / cell as f32;
                let sx = fx * fx * (3.0 - 2.0 * fx);
                let v00 = lat_val(gy as u64, gx as u64);
                let v01 = lat_val(gy as u64, gx as u64 + 1);
                let v10 = lat_val(gy as u64 + 1, gx as u64);
                let v11 = lat_val(gy as u64 + 1, gx as u64 + 1);
                let top = v00 + (v01 - v00) * sx;
                let bot = v10 + (v11 - v10) * sx;
                out[y * w + x] += amp * (top + (bot - top) * sy);
            }
        }
    }
    for v in &mut out {
        *v = 0.5 + 0.45 * (*v / total_amp);
    }
    out
}

/// One procedural RGB image.
pub fn noise_image(seed: u64, index: u64, channels: usize, h: usize, w: usize) -> Tensor {
    let stream = RngStream::new(seed, Purpose::DataGen).derive(index);
    let mut t = Tensor::zeros(Shape::new(1, channels, h, w));
    for c in 0..channels {
        t.plane_mut(0, c).copy_from_slice(&value_noise_plane(stream, c as u64, h, w));
    }
    t
}

/// Generate `count` PPM images of `size`x`size` plus a manifest listing the
/// per-image seeds. Byte-deterministic in `seed`.
pub fn gen_data(dir: &Path, count: usize, size: usize, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let results: Vec<Result<()>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let img = noise_image(seed, i as u64, 3, size, size);
            pnm::write_pnm(&dir.join(format!("img{i:05}.ppm")), &img)
        })
        .collect();
    for r in results {
        r?;
    }
    let manifest = serde_json::json!({
        "seed": seed,
        "count": count,
        "size": size,
        "images": (0..count)
            .map(|i| serde_json::json!({"file": format!("img{i:05}.ppm"), "index": i}))
            .collect::<Vec<_>>(),
    });
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest).unwrap())
        .map_err(|e| Error::io(dir.display().to_string(), e))
}

/// Where measurement canvases come from.
pub enum ImageSource {
    /// Sorted PGM/PPM files, center-cropped to the requested canvas size.
    Directory { files: Vec<PathBuf>, channels: usize, h: usize, w: usize },
    /// Value-noise images generated directly at the canvas size.
    Procedural { seed: u64, count: usize, channels: usize, h: usize, w: usize },
}

impl ImageSource {
    pub fn directory(dir: &Path, channels: usize, h: usize, w: usize) -> Result<Self> {
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir.display().to_string(), e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                matches!(
                    p.extension().and_then(|s| s.to_str()),
                    Some("pgm") | Some("ppm") | Some("pnm")
                )
            })
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(ImageSource::Directory { files, channels, h, w })
    }

    pub fn procedural(seed: u64, count: usize, channels: usize, h: usize, w: usize) -> Self {
        ImageSource::Procedural { seed, count, channels, h, w }
    }

    /// Match channel count by replicating gray planes or averaging down.
    fn adapt_channels(img: Tensor, channels: usize) -> Result<Tensor> {
        let s = img.shape();
        if s.c == channels {
            return Ok(img);
        }
        if s.c == 1 {
            let mut out = Tensor::zeros(Shape::new(1, channels, s.h, s.w));
            for c in 0..channels {
                out.plane_mut(0, c).copy_from_slice(img.plane(0, 0));
            }
            return Ok(out);
        }
        if channels == 1 {
            let mut out = Tensor::zeros(Shape::new(1, 1, s.h, s.w));
            let inv = 1.0 / s.c as f32;
            for c in 0..s.c {
                for (dst, &v) in out.plane_mut(0, 0).iter_mut().zip(img.plane(0, c)) {
                    *dst += v * inv;
                }
            }
            return Ok(out);
        }
        Err(Error::Format {
            what: "image source",
            detail: format!("cannot adapt {} channels to {channels}", s.c),
        })
    }
}

impl CanvasSource for ImageSource {
    fn len(&self) -> usize {
        match self {
            ImageSource::Directory { files, .. } => files.len(),
            ImageSource::Procedural { count, .. } => *count,
        }
    }

    fn canvas(&self, idx: usize) -> Result<Tensor> {
        match self {
            ImageSource::Directory { files, channels, h, w } => {
                let img = pnm::read_pnm(&files[idx])?;
                let s = img.shape();
                if s.h < *h || s.w < *w {
                    return Err(Error::Format {
                        what: "image source",
                        detail: format!(
                            "{} is {}x{}, smaller than required canvas {h}x{w}",
                            files[idx].display(),
                            s.h,
                            s.w
                        ),
                    });
                }
                let top = (s.h - h) / 2;
                let left = (s.w - w) / 2;
                Self::adapt_channels(img.crop(top, left, *h, *w)?, *channels)
            }
            ImageSource::Procedural { seed, count, channels, h, w } => {
                if idx >= *count {
                    return Err(Error::EmptyDataset);
                }
                Ok(noise_image(*seed, idx as u64, *channels, *h, *w))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gen_data_is_byte_deterministic() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        gen_data(d1.path(), 3, 48, 7).unwrap();
        gen_data(d2.path(), 3, 48, 7).unwrap();
        for i in 0..3 {
            let name = format!("img{i:05}.ppm");
            let a = std::fs::read(d1.path().join(&name)).unwrap();
            let b = std::fs::read(d2.path().join(&name)).unwrap();
            assert_eq!(a, b, "{name}");
        }
        assert!(d1.path().join("manifest.json").exists());
    }

    #[test]
    fn noise_histogram_is_non_degenerate() {
        let img = noise_image(3, 0, 3, 128, 128);
        let data = img.data();
        let mean: f32 = data.iter().sum::<f32>() / data.len() as f32;
        let var: f32 =
            data.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / data.len() as f32;
        let std = var.sqrt();
        assert!(std > 0.05, "std {std} <= 0.05 of full range");
        assert!(data.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn directory_source_center_crops() {
        let dir = tempfile::tempdir().unwrap();
        gen_data(dir.path(), 2, 40, 5).unwrap();
        let src = ImageSource::directory(dir.path(), 3, 32, 32).unwrap();
        assert_eq!(src.len(), 2);
        let c = src.canvas(0).unwrap();
        assert_eq!(c.shape(), Shape::new(1, 3, 32, 32));
        // Matches the center crop of the raw image up to quantization.
        let raw = pnm::read_pnm(&dir.path().join("img00000.ppm")).unwrap();
        let cropped = raw.crop(4, 4, 32, 32).unwrap();
        assert_eq!(c.data(), cropped.data());
    }

    #[test]
    fn undersized_directory_images_rejected() {
        let dir = tempfile::tempdir().unwrap();
        gen_data(dir.path(), 1, 16, 5).unwrap();
        let src = ImageSource::directory(dir.path(), 3, 32, 32).unwrap();
        assert!(src.canvas(0).is_err());
    }
}
