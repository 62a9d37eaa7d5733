//! Diagnostic experiments: the border-handling test with its confound and
//! trajectory probe, the optimization-based positional baseline, and
//! chronological measurement over training.

pub mod bhv;
pub mod chrono;
pub mod posenet;
pub mod stats;
pub mod synth;
pub mod train;

use crate::arch::ArchSpec;
use crate::padding::PaddingScheme;

/// Adapt an architecture to a padding scheme: sampling-based padding must
/// see pre-activation statistics, so it moves to the
/// convolution-normalization-padding-activation order. Other schemes keep
/// the traditional pad-first order.
pub fn arch_for_scheme(arch: ArchSpec, scheme: &PaddingScheme) -> ArchSpec {
    match scheme {
        PaddingScheme::Randn { .. } => arch.with_post_norm_padding(),
        _ => arch,
    }
}
