//! Exact per-layer coordinate algebra.
//!
//! Each spatial layer maps output positions to input positions affinely:
//! `input = scale * output + offset`. Offsets are exact rationals (halves
//! appear whenever a receptive field has even extent), so principal points
//! are never rounded prematurely. Alongside the center map we track the
//! receptive-field *window*: its integer start offset and extent, which is
//! what interior masks and crop congruences are built from.

use serde::{Deserialize, Serialize};

/// Exact rational with small denominators (powers of two in practice).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rat {
    pub num: i64,
    pub den: i64,
}

impl Rat {
    pub fn new(num: i64, den: i64) -> Self {
        assert!(den != 0);
        let (mut num, mut den) = if den < 0 { (-num, -den) } else { (num, den) };
        let g = gcd(num.unsigned_abs(), den.unsigned_abs()).max(1) as i64;
        num /= g;
        den /= g;
        Rat { num, den }
    }

    pub fn int(v: i64) -> Self {
        Rat { num: v, den: 1 }
    }

    pub fn half(numerator: i64) -> Self {
        Rat::new(numerator, 2)
    }

    pub fn is_integer(&self) -> bool {
        self.den == 1
    }

    pub fn to_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    pub fn add(self, other: Rat) -> Rat {
        Rat::new(self.num * other.den + other.num * self.den, self.den * other.den)
    }

    pub fn sub(self, other: Rat) -> Rat {
        Rat::new(self.num * other.den - other.num * self.den, self.den * other.den)
    }

    pub fn mul_int(self, k: i64) -> Rat {
        Rat::new(self.num * k, self.den)
    }
}

impl std::fmt::Display for Rat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Affine map from a feature position to the input-coordinate *center* of
/// its receptive field: `input = scale * pos + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoordMap {
    pub scale: i64,
    pub offset: Rat,
}

impl CoordMap {
    pub fn identity() -> Self {
        CoordMap { scale: 1, offset: Rat::int(0) }
    }

    pub fn apply(&self, pos: Rat) -> Rat {
        pos.mul_int(self.scale).add(self.offset)
    }
}

/// Affine map from a feature position to its receptive-field *window* in
/// input coordinates: the window is `[scale*pos + start, scale*pos + start
/// + extent)`. Start and extent are integers for every stack of valid
/// convolutions over integer pads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RfMap {
    pub scale: i64,
    pub start: i64,
    pub extent: i64,
}

impl RfMap {
    pub fn identity() -> Self {
        RfMap { scale: 1, start: 0, extent: 1 }
    }

    /// Compose with a following layer that reads `kernel`-wide windows at
    /// `stride`, with `pad_low` pixels of padding below position zero.
    pub fn then_layer(&self, kernel: usize, stride: usize, pad_low: usize) -> RfMap {
        RfMap {
            scale: self.scale * stride as i64,
            start: self.start - self.scale * pad_low as i64,
            extent: self.extent + (kernel as i64 - 1) * self.scale,
        }
    }

    /// Center map consistent with this window.
    pub fn center(&self) -> CoordMap {
        CoordMap {
            scale: self.scale,
            offset: Rat::int(self.start).add(Rat::half(self.extent - 1)),
        }
    }

    /// Input-coordinate window of feature position `pos`: `[lo, hi]`
    /// inclusive.
    pub fn window(&self, pos: i64) -> (i64, i64) {
        let lo = self.scale * pos + self.start;
        (lo, lo + self.extent - 1)
    }

    /// Whether the receptive field of `pos` lies strictly inside an input of
    /// the given extent (touches no padding).
    pub fn is_interior(&self, pos: i64, input_extent: usize) -> bool {
        let (lo, hi) = self.window(pos);
        lo >= 0 && hi <= input_extent as i64 - 1
    }
}

/// Per-axis pair (y then x) of receptive-field maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RfMap2d {
    pub y: RfMap,
    pub x: RfMap,
}

impl RfMap2d {
    pub fn identity() -> Self {
        RfMap2d { y: RfMap::identity(), x: RfMap::identity() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_conv_is_centered() {
        // conv k3 s1 pad 1: scale 1, offset 0.
        let m = RfMap::identity().then_layer(3, 1, 1);
        let c = m.center();
        assert_eq!(c.scale, 1);
        assert_eq!(c.offset, Rat::int(0));
    }

    #[test]
    fn strided_same_conv_offset_one() {
        // conv k3 s2, same pad (0,1): output j reads input centered at 2j+1.
        let m = RfMap::identity().then_layer(3, 2, 0);
        let c = m.center();
        assert_eq!(c.scale, 2);
        assert_eq!(c.offset, Rat::int(1));
        // Composition of two: 2(2j+1)+1 = 4j+3.
        let m2 = m.then_layer(3, 2, 0);
        let c2 = m2.center();
        assert_eq!(c2.scale, 4);
        assert_eq!(c2.offset, Rat::int(3));
    }

    #[test]
    fn pool_center_is_half_integral() {
        let m = RfMap::identity().then_layer(2, 2, 0);
        assert_eq!(m.center().offset, Rat::half(1));
    }

    #[test]
    fn interior_test_uses_window_endpoints() {
        let m = RfMap::identity().then_layer(3, 1, 1); // window [j-1, j+1]
        assert!(!m.is_interior(0, 8));
        assert!(m.is_interior(1, 8));
        assert!(m.is_interior(6, 8));
        assert!(!m.is_interior(7, 8));
    }

    #[test]
    fn rat_arithmetic_reduces() {
        let r = Rat::new(4, 8);
        assert_eq!(r, Rat::half(1));
        assert_eq!(Rat::half(1).add(Rat::half(1)), Rat::int(1));
        assert_eq!(Rat::half(3).mul_int(2), Rat::int(3));
    }
}
