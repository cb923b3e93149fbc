//! Pose-attentional transfer networks (PATN and APATN) built on a small
//! reverse-mode autodiff engine.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision used by the command-line tools and tests.

pub mod adversarial;
pub mod bench;
pub mod error;
pub mod graph;
pub mod kernels;
pub mod metrics;
pub mod model;
pub mod params;
pub mod pose;
pub mod rng;
pub mod scalar;
pub mod strict;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{Gradients, Graph, Mode, OpClass, Var};
pub use params::{ParamId, ParamStore, Parameter};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Graph64 = Graph<f64>;
pub type Graph32 = Graph<f32>;
pub type Generator64 = model::Generator<f64>;
pub type Generator32 = model::Generator<f32>;
pub type ParamStore64 = ParamStore<f64>;
