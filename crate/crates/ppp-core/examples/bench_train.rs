use ppp_core::arch::mini_vgg;
use ppp_core::exec::{forward, forward_backward, Mode, PadCtx};
use ppp_core::padding::PaddingScheme;
use ppp_core::params::ParamSet;
use ppp_core::tensor::{Shape, TensorBase};
use std::time::Instant;

fn main() {
    let arch = mini_vgg();
    let mut params = ParamSet::<f32>::init(&arch, 1).unwrap();
    let mut batch = TensorBase::<f32>::zeros(Shape::new(32, 3, 64, 64));
    for (i, v) in batch.data_mut().iter_mut().enumerate() { *v = ((i as f32)*0.01).sin(); }
    let labels: Vec<usize> = (0..32).map(|i| i % 4).collect();
    let ctx = PadCtx::new(0);
    // warmup
    forward(&arch, &params, &batch, PaddingScheme::Zeros, ctx, Mode::Eval, false, false).unwrap();
    let t = Instant::now();
    for _ in 0..5 {
        forward(&arch, &params, &batch, PaddingScheme::Zeros, ctx, Mode::Eval, false, false).unwrap();
    }
    println!("fwd eval:    {:?}/batch", t.elapsed() / 5);
    let t = Instant::now();
    for _ in 0..5 {
        forward(&arch, &params, &batch, PaddingScheme::Zeros, ctx, Mode::Train, true, false).unwrap();
    }
    println!("fwd train+cache: {:?}/batch", t.elapsed() / 5);
    let t = Instant::now();
    for _ in 0..5 {
        params.zero_grads();
        forward_backward(&arch, &mut params, &batch, &labels, PaddingScheme::Zeros, ctx).unwrap();
    }
    println!("fwd+bwd:     {:?}/batch", t.elapsed() / 5);
}
