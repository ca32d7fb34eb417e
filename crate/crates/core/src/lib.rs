//! Neural-transducer toolkit for joint speech recognition and translation.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`]: dense tensors with a reverse-mode tape.
//! - [`losses`]: transducer, pruned transducer, CTC and consistency losses,
//!   each with an enumeration oracle.
//! - [`model`]: downsampled encoder blocks, the hierarchical ASR→ST
//!   composition, the stateless convolutional predictor and the joiners.
//! - [`augment`], [`synth`]: masking augmentation and the synthetic
//!   reordering task.
//! - [`train`], [`decode`], [`eval`]: objectives and the optimizer loop,
//!   greedy/beam/streaming decoding, and scoring.
//! - [`config`], [`experiment`]: the flat configuration file and the
//!   command façades used by the `tst` binary.

pub mod augment;
pub mod config;
pub mod decode;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod losses;
pub mod model;
pub mod par;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Graph, Real, Tensor, Var};
