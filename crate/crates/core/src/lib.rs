//! Conditioned latent-diffusion blind face restoration at desk scale.
//!
//! The crate is generic over the floating-point element type ([`Scalar`]):
//! training and inference run in `f32`, gradient checks in `f64`. The
//! aliases below name the two concrete instantiations.

pub mod autodiff;
pub mod degradation;
pub mod diffusion;
pub mod error;
pub mod gradsuite;
pub mod image;
pub mod linalg;
pub mod metrics;
pub mod net;
pub mod params;
pub mod scalar;
pub mod synth;
pub mod tensor;
pub mod training;

pub use autodiff::{Activation, Ewise, Gradients, Graph, Var};
pub use error::{Error, Result};
pub use image::Image8;
pub use params::{ParamStore, Parameter};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Graph32 = Graph<f32>;
pub type Graph64 = Graph<f64>;
