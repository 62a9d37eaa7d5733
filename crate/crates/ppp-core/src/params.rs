//! Parameter storage: named tensors per layer, gradient and velocity slots,
//! He-uniform initialization, SGD with momentum.

use crate::arch::{ArchSpec, LayerKind};
use crate::error::{Error, Result};
use crate::rng::{Purpose, RngStream};
use crate::tensor::{Scalar, Shape, TensorBase};

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: TensorBase<T>,
    pub grad: Option<TensorBase<T>>,
    pub velocity: Option<TensorBase<T>>,
    pub trainable: bool,
}

impl<T: Scalar> Param<T> {
    fn new(name: String, value: TensorBase<T>, trainable: bool) -> Self {
        Param { name, value, grad: None, velocity: None, trainable }
    }
}

/// All parameters of a network, grouped by layer index. Non-parametric
/// layers own an empty group.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    pub layers: Vec<Vec<Param<T>>>,
}

/// Slot order within a conv/linear layer group.
pub const SLOT_WEIGHT: usize = 0;
pub const SLOT_BIAS: usize = 1;
/// Slot order within a batchnorm group.
pub const SLOT_GAMMA: usize = 0;
pub const SLOT_BETA: usize = 1;
pub const SLOT_RUNNING_MEAN: usize = 2;
pub const SLOT_RUNNING_VAR: usize = 3;

impl<T: Scalar> ParamSet<T> {
    /// He-uniform initialization (fan-in based) from the tagged stream, so
    /// results do not depend on allocation or iteration order.
    pub fn init(arch: &ArchSpec, seed: u64) -> Result<Self> {
        let rng = RngStream::new(seed, Purpose::WeightInit);
        let geom = arch.nominal_geometry()?;
        let mut layers = Vec::with_capacity(arch.layers.len());
        for (i, layer) in arch.layers.iter().enumerate() {
            let g = &geom.layers[i];
            let group = match layer.kind {
                LayerKind::Conv { k, out_ch, .. } => {
                    let fan_in = g.in_c * k * k;
                    let weight = he_uniform(rng, i as u64, 0, Shape::new(out_ch, g.in_c, k, k), fan_in);
                    vec![
                        Param::new(format!("layer{i}.weight"), weight, true),
                        Param::new(format!("layer{i}.bias"), TensorBase::zeros(vec1(out_ch)), true),
                    ]
                }
                LayerKind::Linear { out } => {
                    let fan_in = g.in_c;
                    let weight = he_uniform(rng, i as u64, 0, Shape::new(out, g.in_c, 1, 1), fan_in);
                    vec![
                        Param::new(format!("layer{i}.weight"), weight, true),
                        Param::new(format!("layer{i}.bias"), TensorBase::zeros(vec1(out)), true),
                    ]
                }
                LayerKind::BatchNorm => {
                    let c = g.in_c;
                    vec![
                        Param::new(format!("layer{i}.gamma"), TensorBase::full(vec1(c), T::one()), true),
                        Param::new(format!("layer{i}.beta"), TensorBase::zeros(vec1(c)), true),
                        Param::new(format!("layer{i}.running_mean"), TensorBase::zeros(vec1(c)), false),
                        Param::new(format!("layer{i}.running_var"), TensorBase::full(vec1(c), T::one()), false),
                    ]
                }
                _ => Vec::new(),
            };
            layers.push(group);
        }
        Ok(ParamSet { layers })
    }

    pub fn zero_grads(&mut self) {
        for group in &mut self.layers {
            for p in group {
                p.grad = None;
            }
        }
    }

    /// Momentum SGD over every trainable parameter with a populated
    /// gradient slot: `v <- momentum*v + g`, `p <- p - lr*v`.
    pub fn sgd_step(&mut self, lr: f64, momentum: f64) -> Result<()> {
        for group in &mut self.layers {
            for p in group {
                if !p.trainable {
                    continue;
                }
                let Some(grad) = &p.grad else { continue };
                if grad.shape() != p.value.shape() {
                    return Err(Error::ShapeMismatch {
                        op: "sgd_step",
                        detail: format!(
                            "{}: grad {} vs value {}",
                            p.name,
                            grad.shape(),
                            p.value.shape()
                        ),
                    });
                }
                let vel = p
                    .velocity
                    .get_or_insert_with(|| TensorBase::zeros(grad.shape()));
                for ((v, g), val) in vel
                    .data_mut()
                    .iter_mut()
                    .zip(grad.data())
                    .zip(p.value.data_mut())
                {
                    *v = T::from_f64(momentum * v.to_f64() + g.to_f64());
                    *val = T::from_f64(val.to_f64() - lr * v.to_f64());
                }
                p.value.check_finite("sgd_step")?;
            }
        }
        Ok(())
    }

    /// Add `grads` (a parallel structure from a backward pass) into the
    /// gradient slots.
    pub fn accumulate_grads(&mut self, grads: Vec<Vec<Option<TensorBase<T>>>>) {
        for (group, ggroup) in self.layers.iter_mut().zip(grads) {
            for (p, g) in group.iter_mut().zip(ggroup) {
                let Some(g) = g else { continue };
                match &mut p.grad {
                    None => p.grad = Some(g),
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                            *a = *a + *b;
                        }
                    }
                }
            }
        }
    }

    /// Fold `decay * value` into every populated trainable gradient slot
    /// (standard L2 decay applied before the momentum update).
    pub fn apply_weight_decay(&mut self, decay: f64) {
        for group in &mut self.layers {
            for p in group {
                if !p.trainable {
                    continue;
                }
                let Some(grad) = &mut p.grad else { continue };
                for (g, v) in grad.data_mut().iter_mut().zip(p.value.data()) {
                    *g = T::from_f64(g.to_f64() + decay * v.to_f64());
                }
            }
        }
    }

    /// Euclidean norm over all gradient slots.
    pub fn grad_norm(&self) -> f64 {
        let mut acc = 0.0f64;
        for group in &self.layers {
            for p in group {
                if let Some(g) = &p.grad {
                    for &v in g.data() {
                        acc += v.to_f64() * v.to_f64();
                    }
                }
            }
        }
        acc.sqrt()
    }

    /// Flat iteration over `(name, value)` in layer order, for checkpoints.
    pub fn named_values(&self) -> impl Iterator<Item = (&str, &TensorBase<T>)> {
        self.layers
            .iter()
            .flatten()
            .map(|p| (p.name.as_str(), &p.value))
    }

    /// Replace values by name. Every parameter must be present with a
    /// matching shape.
    pub fn load_named(&mut self, mut table: std::collections::HashMap<String, TensorBase<T>>) -> Result<()> {
        for group in &mut self.layers {
            for p in group {
                let t = table.remove(&p.name).ok_or_else(|| Error::Format {
                    what: "checkpoint",
                    detail: format!("missing tensor `{}`", p.name),
                })?;
                if t.shape() != p.value.shape() {
                    return Err(Error::Format {
                        what: "checkpoint",
                        detail: format!(
                            "tensor `{}` has shape {}, expected {}",
                            p.name,
                            t.shape(),
                            p.value.shape()
                        ),
                    });
                }
                p.value = t;
            }
        }
        if let Some(extra) = table.keys().next() {
            return Err(Error::Format {
                what: "checkpoint",
                detail: format!("unexpected tensor `{extra}`"),
            });
        }
        Ok(())
    }
}

impl ParamSet<f32> {
    pub fn to_f64(&self) -> ParamSet<f64> {
        ParamSet {
            layers: self
                .layers
                .iter()
                .map(|g| {
                    g.iter()
                        .map(|p| Param {
                            name: p.name.clone(),
                            value: p.value.to_f64(),
                            grad: None,
                            velocity: None,
                            trainable: p.trainable,
                        })
                        .collect()
                })
                .collect(),
        }
    }
}

fn vec1(c: usize) -> Shape {
    Shape::new(1, c, 1, 1)
}

fn he_uniform<T: Scalar>(
    rng: RngStream,
    layer: u64,
    slot: u64,
    shape: Shape,
    fan_in: usize,
) -> TensorBase<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let mut t = TensorBase::zeros(shape);
    for (i, v) in t.data_mut().iter_mut().enumerate() {
        *v = T::from_f64(rng.uniform_in(-bound, bound, &[layer, slot, i as u64]));
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::mini_vgg;
    use crate::tensor::Tensor;

    #[test]
    fn init_is_seed_deterministic() {
        let arch = mini_vgg();
        let a = ParamSet::<f32>::init(&arch, 7).unwrap();
        let b = ParamSet::<f32>::init(&arch, 7).unwrap();
        assert_eq!(a, b);
        let c = ParamSet::<f32>::init(&arch, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sgd_zero_lr_is_identity() {
        let arch = mini_vgg();
        let mut p = ParamSet::<f32>::init(&arch, 1).unwrap();
        for group in &mut p.layers {
            for param in group.iter_mut() {
                if param.trainable {
                    param.grad = Some(Tensor::full(param.value.shape(), 0.5));
                }
            }
        }
        let before = p.layers.clone();
        p.sgd_step(0.0, 0.9).unwrap();
        for (g0, g1) in before.iter().zip(&p.layers) {
            for (a, b) in g0.iter().zip(g1) {
                assert_eq!(a.value, b.value, "{}", a.name);
            }
        }
    }

    #[test]
    fn sgd_plain_step() {
        // momentum 0: p = 1.0, g = 0.5, lr = 0.1 -> 0.95
        let mut p = ParamSet::<f32> {
            layers: vec![vec![Param {
                name: "w".into(),
                value: Tensor::full(Shape::new(1, 1, 1, 1), 1.0),
                grad: Some(Tensor::full(Shape::new(1, 1, 1, 1), 0.5)),
                velocity: None,
                trainable: true,
            }]],
        };
        p.sgd_step(0.1, 0.0).unwrap();
        assert!((p.layers[0][0].value.data()[0] - 0.95).abs() < 1e-7);
    }

    #[test]
    fn sgd_momentum_two_steps() {
        // momentum 0.9, g = 1.0, lr = 0.1, p0 = 0:
        // step1: v=1, p=-0.1; step2: v=1.9, p=-0.29
        let mut p = ParamSet::<f32> {
            layers: vec![vec![Param {
                name: "w".into(),
                value: Tensor::zeros(Shape::new(1, 1, 1, 1)),
                grad: Some(Tensor::full(Shape::new(1, 1, 1, 1), 1.0)),
                velocity: None,
                trainable: true,
            }]],
        };
        p.sgd_step(0.1, 0.9).unwrap();
        p.layers[0][0].grad = Some(Tensor::full(Shape::new(1, 1, 1, 1), 1.0));
        p.sgd_step(0.1, 0.9).unwrap();
        assert!((p.layers[0][0].value.data()[0] - (-0.29)).abs() < 1e-7);
    }

    #[test]
    fn sgd_shape_mismatch_rejected() {
        let mut p = ParamSet::<f32> {
            layers: vec![vec![Param {
                name: "w".into(),
                value: Tensor::zeros(Shape::new(1, 1, 2, 2)),
                grad: Some(Tensor::zeros(Shape::new(1, 1, 1, 1))),
                velocity: None,
                trainable: true,
            }]],
        };
        assert!(p.sgd_step(0.1, 0.0).is_err());
    }
}
