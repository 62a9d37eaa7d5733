//! Binary PGM (P5) and PPM (P6) readers/writers, maxval 255.
//!
//! Pixels load as `f32` in `[0, 1]` (value / maxval) and store as
//! `round(clamp(v, 0, 1) * 255)`.

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};
use std::io::{Read, Write};
use std::path::Path;

fn format_err(detail: impl Into<String>) -> Error {
    Error::Format { what: "pnm", detail: detail.into() }
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderReader<'a> {
    fn skip_ws_and_comments(&mut self) -> Result<()> {
        loop {
            match self.bytes.get(self.pos) {
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(b'#') => {
                    while let Some(&b) = self.bytes.get(self.pos) {
                        self.pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                Some(_) => return Ok(()),
                None => return Err(format_err("truncated header")),
            }
        }
    }

    fn number(&mut self) -> Result<usize> {
        self.skip_ws_and_comments()?;
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(|b| b.is_ascii_digit()) {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(format_err("expected integer in header"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .unwrap()
            .parse()
            .map_err(|e| format_err(format!("bad integer: {e}")))
    }
}

/// Read a binary PGM/PPM file into a (1, c, h, w) tensor, c = 1 or 3.
pub fn read_pnm(path: &Path) -> Result<Tensor> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    decode_pnm(&bytes)
}

pub fn decode_pnm(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 2 {
        return Err(format_err("too short"));
    }
    let channels = match &bytes[..2] {
        b"P5" => 1usize,
        b"P6" => 3usize,
        other => {
            return Err(format_err(format!(
                "unsupported magic {:?} (only binary P5/P6)",
                String::from_utf8_lossy(other)
            )))
        }
    };
    let mut hr = HeaderReader { bytes, pos: 2 };
    let w = hr.number()?;
    let h = hr.number()?;
    let maxval = hr.number()?;
    if maxval == 0 || maxval > 255 {
        return Err(format_err(format!("maxval {maxval} out of supported range 1..=255")));
    }
    // Single whitespace byte separates header from raster.
    match bytes.get(hr.pos) {
        Some(b) if b.is_ascii_whitespace() => hr.pos += 1,
        _ => return Err(format_err("missing raster separator")),
    }
    let need = w * h * channels;
    let raster = bytes
        .get(hr.pos..hr.pos + need)
        .ok_or_else(|| format_err(format!("raster truncated: need {need} bytes")))?;

    // Interleaved bytes -> planar NCHW floats.
    let mut t = Tensor::zeros(Shape::new(1, channels, h, w));
    let scale = 1.0f32 / maxval as f32;
    for c in 0..channels {
        let plane = t.plane_mut(0, c);
        for i in 0..h * w {
            plane[i] = raster[i * channels + c] as f32 * scale;
        }
    }
    Ok(t)
}

pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Write a grayscale byte image as binary PGM (P5), maxval 255.
pub fn write_pgm(path: &Path, pixels: &[u8], w: usize, h: usize) -> Result<()> {
    assert_eq!(pixels.len(), w * h);
    let mut out = Vec::with_capacity(pixels.len() + 32);
    out.extend_from_slice(format!("P5\n{w} {h}\n255\n").as_bytes());
    out.extend_from_slice(pixels);
    write_file(path, &out)
}

/// Write a (1, c, h, w) tensor with values in [0, 1] as P5 (c = 1) or P6
/// (c = 3).
pub fn write_pnm(path: &Path, image: &Tensor) -> Result<()> {
    let s = image.shape();
    if s.n != 1 || (s.c != 1 && s.c != 3) {
        return Err(format_err(format!("cannot write shape {s} as pnm")));
    }
    let magic = if s.c == 1 { "P5" } else { "P6" };
    let mut out = Vec::with_capacity(s.len() + 32);
    out.extend_from_slice(format!("{magic}\n{} {}\n255\n", s.w, s.h).as_bytes());
    for i in 0..s.h * s.w {
        for c in 0..s.c {
            out.push(quantize(image.plane(0, c)[i]));
        }
    }
    write_file(path, &out)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(bytes))
        .map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip_quantized() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.pgm");
        let mut img = Tensor::zeros(Shape::new(1, 1, 2, 3));
        for (i, v) in img.data_mut().iter_mut().enumerate() {
            *v = i as f32 / 5.0;
        }
        write_pnm(&path, &img).unwrap();
        let back = read_pnm(&path).unwrap();
        assert_eq!(back.shape(), img.shape());
        for (a, b) in back.data().iter().zip(img.data()) {
            assert_eq!(quantize(*a), quantize(*b));
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn ppm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.ppm");
        let mut img = Tensor::zeros(Shape::new(1, 3, 4, 4));
        for (i, v) in img.data_mut().iter_mut().enumerate() {
            *v = (i % 17) as f32 / 16.0;
        }
        write_pnm(&path, &img).unwrap();
        let back = read_pnm(&path).unwrap();
        assert_eq!(back.shape(), img.shape());
        for (a, b) in back.data().iter().zip(img.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn header_comments_are_skipped() {
        let bytes = b"P5\n# a comment\n2 1\n# another\n255\n\x10\x20";
        let t = decode_pnm(bytes).unwrap();
        assert_eq!(t.shape(), Shape::new(1, 1, 1, 2));
        assert!((t.data()[0] - 16.0 / 255.0).abs() < 1e-6);
    }

    #[test]
    fn ascii_formats_rejected() {
        let err = decode_pnm(b"P2\n1 1\n255\n0").unwrap_err();
        assert_eq!(err.category(), "format");
    }

    #[test]
    fn truncated_raster_rejected() {
        let err = decode_pnm(b"P5\n4 4\n255\n\x00\x01").unwrap_err();
        assert_eq!(err.category(), "format");
    }
}
