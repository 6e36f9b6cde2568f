//! Minimal dense-tensor numerics with reverse-mode differentiation.
//!
//! A [`Graph`] records operations on [`Tensor`]s as they execute. Trainable
//! weights live in a [`ParamStore`]; [`Graph::backward`] accumulates their
//! gradients, and [`Adam`] applies updates. The same code runs in `f32`
//! (training) and `f64` (gradient checks).

mod adam;
pub mod check;
mod conv;
mod error;
mod graph;
mod lstm;
mod param;
mod scalar;
mod tensor;

pub use adam::Adam;
pub use conv::TimePadding;
pub use error::{AutodiffError, Result};
pub use graph::{Gradients, Graph, Var};
pub use param::{init, Param, ParamId, ParamStore};
pub use scalar::Scalar;
pub use tensor::Tensor;
