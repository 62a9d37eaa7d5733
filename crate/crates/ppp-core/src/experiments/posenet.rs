//! Optimization-based positional probe: train a shallow no-padding conv
//! head to reconstruct a fixed center-peaked 2D Gaussian from frozen
//! backbone features, scored by Spearman correlation and MAE on held-out
//! samples. Exists as the baseline our closed-form metrics are compared
//! against; its trial-to-trial variance is the point.

use crate::error::{Error, Result};
use crate::experiments::stats::{mae, mean_std, spearman};
use crate::ops;
use crate::rng::{Purpose, RngStream};
use crate::tensor::{Shape, Tensor};
use rayon::prelude::*;

/// Peak-normalized 2D Gaussian centered on an (h, w) grid, sigma = extent/4.
pub fn gaussian_target(h: usize, w: usize) -> Tensor {
    let mut t = Tensor::zeros(Shape::new(1, 1, h, w));
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let sy = (h as f64 / 4.0).max(1e-9);
    let sx = (w as f64 / 4.0).max(1e-9);
    for y in 0..h {
        for x in 0..w {
            let dy = (y as f64 - cy) / sy;
            let dx = (x as f64 - cx) / sx;
            *t.at_mut(0, 0, y, x) = (-(dy * dy + dx * dx) / 2.0).exp() as f32;
        }
    }
    t
}

#[derive(Debug, Clone, Copy)]
pub struct PosenetTrial {
    pub spc: f64,
    pub mae: f64,
    pub diverged: bool,
}

#[derive(Debug, Clone)]
pub struct PosenetOutcome {
    pub trials: Vec<PosenetTrial>,
}

impl PosenetOutcome {
    pub fn spc_mean_std(&self) -> (f64, f64) {
        mean_std(&self.trials.iter().filter(|t| !t.diverged).map(|t| t.spc).collect::<Vec<_>>())
    }
    pub fn mae_mean_std(&self) -> (f64, f64) {
        mean_std(&self.trials.iter().filter(|t| !t.diverged).map(|t| t.mae).collect::<Vec<_>>())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PosenetOpts {
    pub trials: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for PosenetOpts {
    fn default() -> Self {
        PosenetOpts { trials: 5, epochs: 60, lr: 0.05, seed: 0 }
    }
}

/// Score prediction vs target for one sample batch.
fn score(pred: &Tensor, target: &Tensor) -> Result<(f64, f64)> {
    let p: Vec<f64> = pred.data().iter().map(|&v| v as f64).collect();
    let t: Vec<f64> = target.data().iter().map(|&v| v as f64).collect();
    Ok((spearman(&p, &t)?, mae(pred.data(), target.data())))
}

/// Run the probe on precomputed backbone features (single-sample tensors,
/// all the same shape). The head is one k3 valid convolution, so its output
/// is 2 pixels smaller per axis than the features.
pub fn run_posenet(
    train_features: &[Tensor],
    test_features: &[Tensor],
    opts: &PosenetOpts,
) -> Result<PosenetOutcome> {
    let first = train_features.first().ok_or(Error::EmptyDataset)?;
    if test_features.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let fs = first.shape();
    if fs.h < 3 || fs.w < 3 {
        return Err(Error::Config(format!("features {}x{} too small for a k3 head", fs.h, fs.w)));
    }
    let target = gaussian_target(fs.h - 2, fs.w - 2);

    let trial_results: Vec<Result<PosenetTrial>> = (0..opts.trials)
        .into_par_iter()
        .map(|trial| {
            let stream = RngStream::new(opts.seed, Purpose::WeightInit).derive(trial as u64);
            let fan_in = fs.c * 9;
            let bound = (6.0 / fan_in as f64).sqrt();
            let mut kernel = Tensor::zeros(Shape::new(1, fs.c, 3, 3));
            for (i, v) in kernel.data_mut().iter_mut().enumerate() {
                *v = stream.uniform_in(-bound, bound, &[i as u64]) as f32;
            }
            let mut bias = vec![0.0f32];
            let mut vel_k = Tensor::zeros(kernel.shape());
            let mut vel_b = 0.0f32;
            let momentum = 0.9f32;

            let mut diverged = false;
            'train: for _epoch in 0..opts.epochs {
                for feat in train_features {
                    let pred = ops::conv2d(feat, &kernel, &bias, (1, 1))?;
                    // d/dpred of mean squared error
                    let n = pred.data().len() as f64;
                    let mut grad = Tensor::zeros(pred.shape());
                    for ((g, &p), &t) in
                        grad.data_mut().iter_mut().zip(pred.data()).zip(target.data())
                    {
                        *g = (2.0 * (p as f64 - t as f64) / n) as f32;
                    }
                    let (_, gk, gb) = ops::conv2d_backward(feat, &kernel, (1, 1), &grad);
                    if gk.data().iter().any(|v| !v.is_finite()) {
                        diverged = true;
                        break 'train;
                    }
                    for (v, g) in vel_k.data_mut().iter_mut().zip(gk.data()) {
                        *v = momentum * *v + g;
                    }
                    for (k, v) in kernel.data_mut().iter_mut().zip(vel_k.data()) {
                        *k -= opts.lr as f32 * v;
                    }
                    vel_b = momentum * vel_b + gb[0];
                    bias[0] -= opts.lr as f32 * vel_b;
                }
            }

            if diverged || kernel.data().iter().any(|v| !v.is_finite()) {
                return Ok(PosenetTrial { spc: f64::NAN, mae: f64::NAN, diverged: true });
            }

            let mut spcs = Vec::with_capacity(test_features.len());
            let mut maes = Vec::with_capacity(test_features.len());
            for feat in test_features {
                let pred = ops::conv2d(feat, &kernel, &bias, (1, 1))?;
                let (s, m) = score(&pred, &target)?;
                spcs.push(s);
                maes.push(m);
            }
            Ok(PosenetTrial {
                spc: spcs.iter().sum::<f64>() / spcs.len() as f64,
                mae: maes.iter().sum::<f64>() / maes.len() as f64,
                diverged: false,
            })
        })
        .collect();

    let mut trials = Vec::with_capacity(opts.trials);
    for t in trial_results {
        trials.push(t?);
    }
    Ok(PosenetOutcome { trials })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_reconstruction_scores_perfectly() {
        let y = gaussian_target(10, 12);
        let (spc, m) = score(&y, &y).unwrap();
        assert_eq!(spc, 1.0);
        assert_eq!(m, 0.0);
    }

    #[test]
    fn negated_target_is_rank_reversed() {
        let y = gaussian_target(8, 8);
        let neg = y.map(|v: f32| -v);
        let (spc, _) = score(&neg, &y).unwrap();
        assert_eq!(spc, -1.0);
    }

    #[test]
    fn head_learns_gaussian_from_coordinate_features() {
        // Features that literally contain normalized coordinates: the head
        // should reconstruct the target well above chance.
        let (h, w) = (14, 14);
        let mut feats = Vec::new();
        for k in 0..6 {
            let mut f = Tensor::zeros(Shape::new(1, 3, h, w));
            for y in 0..h {
                for x in 0..w {
                    let cy = (y as f32 / h as f32 - 0.5).abs();
                    let cx = (x as f32 / w as f32 - 0.5).abs();
                    *f.at_mut(0, 0, y, x) = 1.0 - cy * cy - cx * cx;
                    *f.at_mut(0, 1, y, x) = cy;
                    *f.at_mut(0, 2, y, x) = cx + 0.01 * k as f32;
                }
            }
            feats.push(f);
        }
        let out = run_posenet(&feats[..4], &feats[4..], &PosenetOpts { trials: 2, epochs: 120, lr: 0.1, seed: 1 })
            .unwrap();
        let (spc, _) = out.spc_mean_std();
        assert!(spc > 0.6, "spc {spc}");
    }

    #[test]
    fn trial_count_respected() {
        let feats: Vec<Tensor> = (0..4)
            .map(|i| {
                let mut f = Tensor::zeros(Shape::new(1, 2, 8, 8));
                for (j, v) in f.data_mut().iter_mut().enumerate() {
                    *v = ((i * 131 + j) as f32 * 0.17).sin();
                }
                f
            })
            .collect();
        let out = run_posenet(&feats[..2], &feats[2..], &PosenetOpts { trials: 5, epochs: 5, lr: 0.01, seed: 2 })
            .unwrap();
        assert_eq!(out.trials.len(), 5);
    }
}
