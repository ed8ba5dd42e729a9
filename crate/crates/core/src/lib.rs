//! Synthesis of adversarial examples that stay adversarial over a
//! distribution of transformations: 2D warps and photometric changes, and
//! renderings of textured 3D meshes.
//!
//! Numeric code is generic over [`Real`] (`f32` or `f64`); the aliases below
//! fix the scalar for common use. Attacks and gradient checks run in `f64`.

pub mod classifier;
pub mod diffmath;
pub mod eot;
pub mod error;
pub mod eval;
pub mod imageio;
pub mod renderer3d;
pub mod rng;
pub mod scalar;
pub mod transform;
pub mod transforms2d;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Tensor64 = diffmath::Tensor<f64>;
pub type Tensor32 = diffmath::Tensor<f32>;
pub type Graph64 = diffmath::Graph<f64>;
pub type Graph32 = diffmath::Graph<f32>;
pub type Model64 = classifier::Model<f64>;
pub type Model32 = classifier::Model<f32>;
pub type CompiledModel64 = classifier::CompiledModel<f64>;
pub type CompiledModel32 = classifier::CompiledModel<f32>;
pub type Dataset64 = classifier::LabeledDataset<f64>;
pub type CoordinateMap64 = renderer3d::CoordinateMap<f64>;
pub type AttackResult64 = eot::AttackResult<f64>;
