//! Shared SGD training loop for the experiment harnesses.

use crate::arch::ArchSpec;
use crate::error::{Error, Result};
use crate::exec::{forward_backward, predict, PadCtx};
use crate::padding::PaddingScheme;
use crate::params::ParamSet;
use crate::rng::{Purpose, RngStream, SeqRng};
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainOpts {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    /// L2 weight decay, folded into the gradient before the momentum update.
    pub weight_decay: f64,
}

impl Default for TrainOpts {
    fn default() -> Self {
        TrainOpts { epochs: 10, batch_size: 32, lr: 0.02, momentum: 0.9, weight_decay: 5e-4 }
    }
}

pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn gather(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let s = self.images.shape();
        let chw = s.c * s.h * s.w;
        let mut batch = Tensor::zeros(Shape::new(indices.len(), s.c, s.h, s.w));
        for (bi, &idx) in indices.iter().enumerate() {
            batch.data_mut()[bi * chw..(bi + 1) * chw]
                .copy_from_slice(&self.images.data()[idx * chw..(idx + 1) * chw]);
        }
        (batch, indices.iter().map(|&i| self.labels[i]).collect())
    }
}

/// Train `params` on the dataset. The callback runs once before training
/// (epoch 0) and after every epoch; it is how snapshotting hooks in.
/// Divergence (non-finite loss) aborts with a diagnostic.
pub fn train(
    arch: &ArchSpec,
    params: &mut ParamSet<f32>,
    data: &Dataset,
    scheme: PaddingScheme,
    opts: &TrainOpts,
    seed: u64,
    trial: usize,
    mut on_epoch: impl FnMut(usize, &ParamSet<f32>) -> Result<()>,
) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    on_epoch(0, params)?;
    let shuffle_stream = RngStream::new(seed, Purpose::Shuffle).derive(trial as u64);
    let pad_rng = RngStream::new(seed, Purpose::RandnPad).derive(trial as u64);
    let mut step: u64 = 0;
    let mut epoch_losses = Vec::with_capacity(opts.epochs);

    for epoch in 1..=opts.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        SeqRng::new(shuffle_stream.derive(epoch as u64)).shuffle(&mut order);

        let mut loss_sum = 0.0f64;
        let mut batches = 0usize;
        for chunk in order.chunks(opts.batch_size) {
            let (batch, labels) = data.gather(chunk);
            params.zero_grads();
            let ctx = PadCtx { rng: pad_rng, round: step, sample_base: 0 };
            let loss = forward_backward(arch, params, &batch, &labels, scheme, ctx)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { trial, epoch });
            }
            if opts.weight_decay > 0.0 {
                params.apply_weight_decay(opts.weight_decay);
            }
            params.sgd_step(opts.lr, opts.momentum)?;
            loss_sum += loss;
            batches += 1;
            step += 1;
        }
        epoch_losses.push(loss_sum / batches as f64);
        on_epoch(epoch, params)?;
    }
    Ok(epoch_losses)
}

/// Classification accuracy in percent, evaluated in fixed-size batches.
pub fn accuracy(
    arch: &ArchSpec,
    params: &ParamSet<f32>,
    data: &Dataset,
    scheme: PaddingScheme,
    pad_seed: u64,
) -> Result<f64> {
    let mut correct = 0usize;
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(64) {
        let (batch, labels) = data.gather(chunk);
        let ctx = PadCtx { rng: RngStream::new(pad_seed, Purpose::RandnPad), round: 0, sample_base: chunk[0] as u64 };
        let preds = predict(arch, params, &batch, scheme, ctx)?;
        correct += preds.iter().zip(&labels).filter(|(p, l)| p == l).count();
    }
    Ok(100.0 * correct as f64 / data.len() as f64)
}
