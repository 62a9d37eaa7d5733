//! Rank statistics.

use crate::error::{Error, Result};

/// Average ranks (1-based); tied values share the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap().then(a.cmp(&b)));
    let mut ranks = vec![0.0f64; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // positions i..=j (0-based) share rank mean of (i+1)..=(j+1)
        let shared = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = shared;
        }
        i = j + 1;
    }
    ranks
}

fn has_ties(values: &[f64]) -> bool {
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    sorted.windows(2).any(|w| w[0] == w[1])
}

/// Spearman rank correlation.
///
/// Tie-free inputs use the exact rank-difference formula
/// `1 - 6*sum(d^2) / (n(n^2-1))` with integer arithmetic for the sum; ties
/// fall back to Pearson correlation of average ranks. Returns 0 when either
/// argument is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch {
            op: "spearman",
            detail: format!("{} vs {} values", x.len(), y.len()),
        });
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::Config("spearman needs at least 2 values".into()));
    }
    if !x.iter().chain(y).all(|v| v.is_finite()) {
        return Err(Error::NonFinite { op: "spearman" });
    }

    if !has_ties(x) && !has_ties(y) {
        let rx = average_ranks(x);
        let ry = average_ranks(y);
        let mut d2: i64 = 0;
        for (a, b) in rx.iter().zip(&ry) {
            let d = (*a - *b) as i64; // exact: integer ranks
            d2 += d * d;
        }
        let nn = n as i64;
        return Ok(1.0 - 6.0 * d2 as f64 / (nn * (nn * nn - 1)) as f64);
    }

    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let mean = (n as f64 + 1.0) / 2.0; // mean rank is fixed
    let (mut sxy, mut sxx, mut syy) = (0.0f64, 0.0f64, 0.0f64);
    for (a, b) in rx.iter().zip(&ry) {
        let da = a - mean;
        let db = b - mean;
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(0.0);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Mean absolute error between two equal-length slices.
pub fn mae(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        acc += (*x as f64 - *y as f64).abs();
    }
    acc / a.len() as f64
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_reversed() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y = [10.0, 20.0, 30.0, 40.0, 50.0];
        assert_eq!(spearman(&x, &y).unwrap(), 1.0);
        let yr = [50.0, 40.0, 30.0, 20.0, 10.0];
        assert_eq!(spearman(&x, &yr).unwrap(), -1.0);
    }

    #[test]
    fn textbook_example() {
        // d^2 = (0,1,1,0) -> 1 - 6*2/(4*15) = 0.8
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [1.0, 3.0, 2.0, 4.0];
        assert_eq!(spearman(&x, &y).unwrap(), 0.8);
    }

    #[test]
    fn ties_use_average_ranks() {
        let x = [1.0, 2.0, 2.0, 3.0];
        let r = average_ranks(&x);
        assert_eq!(r, vec![1.0, 2.5, 2.5, 4.0]);
    }

    #[test]
    fn monotone_transform_invariance() {
        let x = [0.3, -1.0, 2.5, 0.9, 7.0, -4.0];
        let y = [5.0, 3.0, 1.0, 9.0, 2.0, 4.0];
        let base = spearman(&x, &y).unwrap();
        let fx: Vec<f64> = x.iter().map(|v| (v * 0.3).exp()).collect();
        let gy: Vec<f64> = y.iter().map(|v| v * v * v + 10.0).collect();
        assert!((spearman(&fx, &gy).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn constant_input_is_zero() {
        let x = [2.0, 2.0, 2.0];
        let y = [1.0, 2.0, 3.0];
        assert_eq!(spearman(&x, &y).unwrap(), 0.0);
    }
}
