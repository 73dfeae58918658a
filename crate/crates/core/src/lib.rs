//! Dual-channel 2D/3D pan-sharpening network with spatial-spectral
//! convolutional LSTM fusion, built on a small reverse-mode tensor engine,
//! together with Wald-protocol data simulation and the usual full-reference
//! and reference-free quality metrics.
//!
//! The numeric core is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the scalar for the common cases.

pub mod data;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod model;
pub mod params;
pub mod scalar;
pub mod tensor;

pub use engine::Var;
pub use error::{Error, Result};
pub use params::{Bindings, ParamKind, ParamStore};
pub use scalar::Real;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Var32 = Var<f32>;
pub type Var64 = Var<f64>;
pub type ParamStore32 = ParamStore<f32>;
pub type ParamStore64 = ParamStore<f64>;
pub type Dcnet32 = model::Dcnet<f32>;
pub type Dcnet64 = model::Dcnet<f64>;
