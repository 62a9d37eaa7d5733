//! Property tests for the padding schemes.

use ppp_core::exec::PadCtx;
use ppp_core::padding::{pad, pad_amounts_for, PadAmounts, PadMode, PaddingScheme, RandnCtx};
use ppp_core::rng::{Purpose, RngStream};
use ppp_core::tensor::{Shape, Tensor};
use proptest::prelude::*;

fn arb_tensor(max_hw: usize) -> impl Strategy<Value = Tensor> {
    (1usize..=2, 1usize..=3, 2usize..=max_hw, 2usize..=max_hw).prop_flat_map(|(n, c, h, w)| {
        proptest::collection::vec(-10.0f32..10.0, n * c * h * w)
            .prop_map(move |data| Tensor::from_vec(Shape::new(n, c, h, w), data).unwrap())
    })
}

fn scheme_strategy() -> impl Strategy<Value = PaddingScheme> {
    prop_oneof![
        Just(PaddingScheme::Zeros),
        Just(PaddingScheme::Circular),
        Just(PaddingScheme::Reflect),
        Just(PaddingScheme::Replicate),
        Just(PaddingScheme::Randn { window: 3 }),
    ]
}

fn ctx() -> Option<RandnCtx> {
    Some(RandnCtx { rng: RngStream::new(5, Purpose::RandnPad), round: 0, sample_base: 0, layer: 0 })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    /// The central block of any padded tensor equals the input exactly.
    #[test]
    fn interior_preserved(t in arb_tensor(9), scheme in scheme_strategy(),
                          l in 0usize..=2, r in 0usize..=2, tp in 0usize..=2, b in 0usize..=2) {
        let s = t.shape();
        let amounts = PadAmounts::new(l, r, tp, b);
        // Respect per-scheme bounds (randn window 3 needs 3x3 interior).
        let max_pad = l.max(r).max(tp).max(b);
        prop_assume!(max_pad < s.h.min(s.w));
        if matches!(scheme, PaddingScheme::Randn { .. }) {
            prop_assume!(s.h >= 3 && s.w >= 3);
        }
        let padded = pad(&t, amounts, scheme, ctx()).unwrap();
        let inner = padded.crop(tp, l, s.h, s.w).unwrap();
        prop_assert_eq!(inner.data(), t.data());
    }

    /// Full circular wrap then cropping the opposite side is the identity.
    #[test]
    fn circular_full_wrap_identity(t in arb_tensor(8)) {
        let s = t.shape();
        let padded = pad(&t, PadAmounts::new(s.w, 0, 0, 0), PaddingScheme::Circular, None).unwrap();
        let left_block = padded.crop(0, 0, s.h, s.w).unwrap();
        prop_assert_eq!(left_block.data(), t.data());
    }

    /// Randn on a constant tensor is exactly the constant, seed independent.
    #[test]
    fn randn_constant_degenerates(v in -5.0f32..5.0, seed in 0u64..1000) {
        let t = Tensor::full(Shape::new(1, 2, 4, 5), v);
        let c = RandnCtx { rng: RngStream::new(seed, Purpose::RandnPad), round: 0, sample_base: 0, layer: 0 };
        let padded = pad(&t, PadAmounts::new(2, 2, 2, 2), PaddingScheme::Randn { window: 3 }, Some(c)).unwrap();
        prop_assert!(padded.data().iter().all(|&x| x == v));
    }

    /// Same-mode padding keeps out = ceil(in / stride) per axis.
    #[test]
    fn same_mode_output_size(k in 1usize..=7, s in 1usize..=3, e in 7usize..=64) {
        let (lo, hi) = pad_amounts_for(PadMode::Same, k, s, e);
        let out = (e + lo + hi - k) / s + 1;
        prop_assert_eq!(out, e.div_ceil(s));
        // Extra pixel, when odd, sits on the high side.
        prop_assert!(hi >= lo);
        prop_assert!(hi - lo <= 1);
    }

    /// Full mode pads kernel-1 on both sides regardless of extent.
    #[test]
    fn full_mode_amounts(k in 1usize..=9, e in 1usize..=64) {
        prop_assert_eq!(pad_amounts_for(PadMode::Full, k, 1, e), (k - 1, k - 1));
    }
}

/// Randn draws at identical (seed, tag) are identical regardless of the
/// thread pool executing the padding.
#[test]
fn randn_identical_across_thread_counts() {
    let mut t = Tensor::zeros(Shape::new(3, 2, 6, 6));
    for (i, v) in t.data_mut().iter_mut().enumerate() {
        *v = ((i as f32) * 0.61).sin();
    }
    let c = RandnCtx {
        rng: RngStream::new(11, Purpose::RandnPad),
        round: 4,
        sample_base: 100,
        layer: 2,
    };
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            pad(&t, PadAmounts::new(2, 1, 1, 2), PaddingScheme::Randn { window: 5 }, Some(c))
                .unwrap()
        })
    };
    let a = run(1);
    let b = run(4);
    assert_eq!(a.data(), b.data());
}

/// Scheme `none` on a forward pass shrinks each capture extent by the
/// total kernel overhang of the preceding convolutions.
#[test]
fn none_scheme_shrinks_captures() {
    let arch = ppp_core::arch::mini_vgg();
    let params = ppp_core::params::ParamSet::<f32>::init(&arch, 2).unwrap();
    let input = Tensor::full(Shape::new(1, 3, 128, 128), 0.3);
    let caps = ppp_core::exec::forward_capture(
        &arch,
        &params,
        &input,
        PaddingScheme::None,
        PadCtx::new(0),
    )
    .unwrap();
    let sizes: Vec<usize> = caps.iter().map(|(_, t)| t.shape().h).collect();
    // Each stage: two k3 convs lose 4, pool halves (floor).
    assert_eq!(sizes, vec![62, 29, 12, 4]);
}
