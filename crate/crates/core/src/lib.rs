//! chanforge: position-conditioned MIMO channel synthesis and augmentation.
//!
//! The crate couples a synthetic multipath scene with a conditional
//! denoising-diffusion sampler so scarce position/channel datasets can be
//! boosted with generated channels, then measures how the boosted datasets
//! perform on two downstream tasks (channel compression, beam alignment)
//! against noise- and nearest-neighbor-based augmentation.

pub mod augment;
pub mod channelsim;
pub mod checkpoint;
pub mod diffusion;
pub mod downstream_beam;
pub mod downstream_compress;
pub mod error;
pub mod evaluation;
pub mod numerics;
pub mod rng;

pub use error::{Error, Result};
