//! Tensor engine: convolution kernels, reverse-mode autodiff and Adam.

mod autograd;
pub mod conv;
pub mod ops;
pub mod optim;
pub mod reference;

pub use autograd::{backward, tape, Var};
pub use conv::{ConvSpec, Geometry};
pub use optim::{adam_step, lr_schedule, AdamConfig, AdamState};
