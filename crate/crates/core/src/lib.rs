pub mod bessel;
pub mod container;
pub mod dsp;
pub mod error;
pub mod geometry;
pub mod localize;
pub mod metrics;
pub mod simulate;
pub mod targets;
pub mod wav;

pub use error::{CoreError, Result};
