//! IPDnet: cascaded full-band/narrow-band recurrent blocks with a
//! convolutional head that emits per-track DP-IPD vectors, plus the
//! permutation-invariant training loop.

pub mod checkpoint;
mod config;
mod error;
pub mod net;
pub mod pit;
pub mod train;

pub use config::{Mode, ModelConfig, Variant};
pub use error::{ModelError, Result};
pub use net::IpdNet;
