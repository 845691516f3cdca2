//! Dense reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation; gradients are recorded back onto the
//! same tape when requested with [`Tape::grad_graph`], so an optimizer update
//! built from them stays differentiable. That is all the machinery the
//! bilevel trainer needs to push the outer loss back through an unrolled
//! inner training run.

mod loss;
mod optim;
mod tape;
mod tensor;

pub use loss::{bce_with_logits, l1_norm, l2_norm_sq, mse};
pub use optim::{sgd_step_differentiable, Adam, AdamConfig, TapeAdam};
pub use tape::{GradientMap, Pattern, Tape, Var};
pub use tensor::Tensor;
