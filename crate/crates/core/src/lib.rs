//! Text-conditioned 3D LUT tone adjustment.
//!
//! An input image is summarized by global color statistics, a backbone
//! predicts basis-LUT weights and per-channel sampling coordinates from them,
//! and a small hyper-network modulates the backbone's heads from the
//! embedding difference between a target description and `"normal photo"`.
//! The fused LUT is applied with trilinear interpolation.
//!
//! Everything numeric is generic over [`Real`] (`f32` or `f64`); the aliases
//! at the crate root pin the common double-precision instantiations.

// `!(x > 0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod corpus;
pub mod embed;
pub mod eval;
pub mod formats;
pub mod error;
pub mod image;
pub mod losses;
pub mod lut;
pub mod network;
pub mod scalar;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Real;

pub type ImageBuffer = image::ImageBuffer<f64>;
pub type ImageBufferF32 = image::ImageBuffer<f32>;
pub type Lut3D = lut::Lut3D<f64>;
pub type Lut3DF32 = lut::Lut3D<f32>;
pub type BasisLutBank = lut::BasisLutBank<f64>;
pub type SamplingCoordinates = lut::SamplingCoordinates<f64>;
pub type LutWeights = lut::LutWeights<f64>;
pub type EmbeddingVector = embed::EmbeddingVector<f64>;
pub type EmbeddingProvider = embed::EmbeddingProvider<f64>;
pub type ModelBundle = network::ModelBundle<f64>;
pub type ModelBundleF32 = network::ModelBundle<f32>;
