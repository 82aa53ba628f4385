//! Dense tensors, reverse-mode differentiation and the Adam optimizer.

mod adam;
mod dense;
mod gradcheck;
pub(crate) mod kernels;
mod params;
mod real;
pub mod rng;
mod tape;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use dense::Tensor;
pub use gradcheck::{grad_check, GradCheckReport};
pub use params::{accumulate_grads, scale_grads, BoundParams, ParamGrads, ParamStore};
pub use real::Real;
pub use tape::{Gradients, Tape, Var};

