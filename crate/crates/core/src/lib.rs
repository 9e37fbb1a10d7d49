//! Light-diffusion toolkit.
//!
//! Everything needed to reproduce the light-diffusion pipeline at desk scale:
//! equirectangular HDR environment maps with a Gini diffuseness measure and
//! cosine-lobe prefiltering ([`envmap`]), a synthetic portrait renderer built
//! on an OLAT light basis ([`renderer`]), specular/shadow map extraction
//! ([`maps`]), Gini-guided external shadow augmentation ([`shadowaug`]),
//! small encoder-decoder networks on a reverse-mode tensor core ([`model`]),
//! and dataset generation plus evaluation metrics ([`pipeline`]).
//!
//! All numeric code is generic over the scalar type via [`scalar::Real`];
//! use the `*32`/`*64` aliases below for the common instantiations.

pub mod envmap;
pub mod error;
pub mod image;
pub mod io;
pub mod maps;
pub mod model;
pub mod pipeline;
pub mod renderer;
pub mod rng;
pub mod scalar;
pub mod shadowaug;
pub mod vec3;

pub use error::{Error, Result};
pub use scalar::Real;

/// Environment map in single precision (training / data generation).
pub type EnvMap32 = envmap::EnvironmentMap<f32>;
/// Environment map in double precision (oracles and gradient checks).
pub type EnvMap64 = envmap::EnvironmentMap<f64>;
pub type Image32 = image::ImageBuffer<f32>;
pub type Image64 = image::ImageBuffer<f64>;
pub type Scalar32 = image::ScalarImage<f32>;
pub type Scalar64 = image::ScalarImage<f64>;
pub type Tensor32 = model::Tensor<f32>;
pub type Tensor64 = model::Tensor<f64>;
pub type Params32 = model::ModelParams<f32>;
pub type Params64 = model::ModelParams<f64>;
