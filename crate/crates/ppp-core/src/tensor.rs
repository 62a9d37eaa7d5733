//! Dense NCHW tensors.
//!
//! Storage is `f32` throughout the toolkit (`Tensor`); the same container is
//! generic over the element type so the gradient-check fixtures can run the
//! identical op implementations in `f64`.

use crate::error::{Error, Result};

/// Element type for tensor math: `f32` in production paths, `f64` in
/// numerical fixtures. Accumulating reductions always run in `f64`.
pub trait Scalar:
    Copy
    + PartialOrd
    + PartialEq
    + Send
    + Sync
    + std::fmt::Debug
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + 'static
{
    fn zero() -> Self;
    fn one() -> Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn is_finite(self) -> bool;
}

impl Scalar for f32 {
    #[inline]
    fn zero() -> Self {
        0.0
    }
    #[inline]
    fn one() -> Self {
        1.0
    }
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
}

impl Scalar for f64 {
    #[inline]
    fn zero() -> Self {
        0.0
    }
    #[inline]
    fn one() -> Self {
        1.0
    }
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline]
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

/// Shape of a 4-D tensor: batch, channels, rows, cols.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

/// Dense row-major NCHW value container. `Tensor` (the `f32` alias) is the
/// universal value type of the toolkit.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorBase<T> {
    shape: Shape,
    data: Vec<T>,
}

pub type Tensor = TensorBase<f32>;

impl<T: Scalar> TensorBase<T> {
    pub fn zeros(shape: Shape) -> Self {
        TensorBase { shape, data: vec![T::zero(); shape.len()] }
    }

    pub fn full(shape: Shape, value: T) -> Self {
        TensorBase { shape, data: vec![value; shape.len()] }
    }

    /// Wrap existing data. Length must match the shape; all values must be
    /// finite.
    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::ShapeMismatch {
                op: "from_vec",
                detail: format!("shape {} needs {} values, got {}", shape, shape.len(), data.len()),
            });
        }
        let t = TensorBase { shape, data };
        t.check_finite("from_vec")?;
        Ok(t)
    }

    /// 1×1×h×w convenience constructor for tests and small fixtures.
    pub fn from_rows(rows: &[&[T]]) -> Result<Self> {
        let h = rows.len();
        let w = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(h * w);
        for r in rows {
            if r.len() != w {
                return Err(Error::ShapeMismatch {
                    op: "from_rows",
                    detail: "ragged rows".into(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::from_vec(Shape::new(1, 1, h, w), data)
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        self.shape
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        let s = &self.shape;
        debug_assert!(n < s.n && c < s.c && y < s.h && x < s.w);
        self.data[((n * s.c + c) * s.h + y) * s.w + x]
    }

    #[inline]
    pub fn at_mut(&mut self, n: usize, c: usize, y: usize, x: usize) -> &mut T {
        let s = self.shape;
        debug_assert!(n < s.n && c < s.c && y < s.h && x < s.w);
        &mut self.data[((n * s.c + c) * s.h + y) * s.w + x]
    }

    /// One (n, c) spatial plane as a contiguous slice.
    #[inline]
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let s = &self.shape;
        let hw = s.h * s.w;
        let base = (n * s.c + c) * hw;
        &self.data[base..base + hw]
    }

    #[inline]
    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [T] {
        let s = self.shape;
        let hw = s.h * s.w;
        let base = (n * s.c + c) * hw;
        &mut self.data[base..base + hw]
    }

    /// Single sample as an (1, c, h, w) view copy.
    pub fn sample(&self, n: usize) -> TensorBase<T> {
        let s = self.shape;
        let chw = s.c * s.h * s.w;
        let data = self.data[n * chw..(n + 1) * chw].to_vec();
        TensorBase { shape: Shape::new(1, s.c, s.h, s.w), data }
    }

    pub fn check_finite(&self, op: &'static str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite { op })
        }
    }

    /// Spatial crop `[top, top+h) x [left, left+w)` of every plane.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<TensorBase<T>> {
        let s = self.shape;
        if top + h > s.h || left + w > s.w {
            return Err(Error::ShapeMismatch {
                op: "crop",
                detail: format!("crop {top},{left} {h}x{w} exceeds {s}"),
            });
        }
        let mut out = TensorBase::zeros(Shape::new(s.n, s.c, h, w));
        for n in 0..s.n {
            for c in 0..s.c {
                let src = self.plane(n, c);
                let dst = out.plane_mut(n, c);
                for y in 0..h {
                    let srow = (top + y) * s.w + left;
                    dst[y * w..(y + 1) * w].copy_from_slice(&src[srow..srow + w]);
                }
            }
        }
        Ok(out)
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> TensorBase<U> {
        TensorBase { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Max absolute elementwise difference, in f64.
    pub fn max_abs_diff(&self, other: &TensorBase<T>) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.to_f64() - b.to_f64()).abs())
            .fold(0.0, f64::max)
    }
}

impl Tensor {
    pub fn to_f64(&self) -> TensorBase<f64> {
        self.map(|v| v as f64)
    }
}

impl TensorBase<f64> {
    pub fn to_f32(&self) -> Tensor {
        self.map(|v| v as f32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_bad_length() {
        let err = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0; 3]).unwrap_err();
        assert_eq!(err.category(), "shape-mismatch");
    }

    #[test]
    fn from_vec_rejects_non_finite() {
        let err = Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![1.0, f32::NAN]).unwrap_err();
        assert_eq!(err.category(), "non-finite");
    }

    #[test]
    fn crop_extracts_block() {
        let t = Tensor::from_rows(&[&[0., 1., 2.], &[3., 4., 5.], &[6., 7., 8.]]).unwrap();
        let c = t.crop(1, 1, 2, 2).unwrap();
        assert_eq!(c.data(), &[4., 5., 7., 8.]);
    }

    #[test]
    fn indexing_is_row_major_nchw() {
        let t = Tensor::from_vec(Shape::new(1, 2, 2, 2), (0..8).map(|v| v as f32).collect())
            .unwrap();
        assert_eq!(t.at(0, 1, 1, 0), 6.0);
        assert_eq!(t.plane(0, 1), &[4., 5., 6., 7.]);
    }
}
