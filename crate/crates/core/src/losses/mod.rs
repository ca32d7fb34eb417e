//! Sequence losses over alignment lattices.
//!
//! All dynamic programs run in `f64` log space whatever the tensor
//! precision. Unreachable states carry [`NEG_SENTINEL`] instead of a true
//! minus infinity. Blank is vocabulary index [`BLANK`] everywhere.

mod brute;
mod consistency;
mod ctc;
mod prune;
mod transducer;

pub use brute::{brute_force_ctc_nll, brute_force_transducer_nll};
pub use consistency::cr_kl;
pub use ctc::{ctc_min_frames, ctc_nll};
pub use prune::{compute_prune_bounds, simple_joiner_logits, PruneBounds};
pub use transducer::{
    pruned_transducer_nll, transducer_nll, transducer_occupancy_grad, transducer_stats,
    TransducerStats,
};

pub use crate::tensor::kernels::NEG_SENTINEL;

/// Index of the blank symbol in every vocabulary.
pub const BLANK: usize = 0;

#[inline]
pub(crate) fn logadd(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Values below this are treated as unreachable.
pub(crate) const UNREACHABLE: f64 = NEG_SENTINEL / 2.0;

pub(crate) fn check_target(target: &[usize], vocab: usize) -> crate::Result<()> {
    for &token in target {
        if token == BLANK || token >= vocab {
            return Err(crate::Error::Vocab { token, vocab });
        }
    }
    Ok(())
}
