//! Latent-space inpainting for camera-controlled video at desk scale.
//!
//! A source clip with known depth is warped along a camera trajectory; the
//! warped clip has holes where nothing was visible. The holes are filled by
//! sampling a rectified-flow prior over latents of a patchwise codec while a
//! proximal conjugate-gradient step keeps the observed latents consistent,
//! weighted by a continuous latent mask.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below name the common instantiations.

pub mod checkpoint;
pub mod cli;
pub mod codec;
pub mod container;
pub mod error;
pub mod flow_prior;
pub mod geometry;
pub mod latent_mask;
pub mod metrics;
pub mod nn;
pub mod scalar;
pub mod solver;
pub mod synthdata;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Video64 = tensor::Video<f64>;
pub type Video32 = tensor::Video<f32>;
pub type Latent64 = tensor::Latent<f64>;
pub type Latent32 = tensor::Latent<f32>;
pub type LatentMask64 = tensor::LatentMask<f64>;
pub type LatentMask32 = tensor::LatentMask<f32>;
pub type DepthMap64 = tensor::DepthMap<f64>;
pub type DepthMap32 = tensor::DepthMap<f32>;
pub type CodecSpec64 = codec::CodecSpec<f64>;
pub type CodecSpec32 = codec::CodecSpec<f32>;
pub type VelocityModel64 = flow_prior::VelocityModel<f64>;
pub type VelocityModel32 = flow_prior::VelocityModel<f32>;
pub type CameraTrajectory64 = geometry::CameraTrajectory<f64>;
pub type CameraTrajectory32 = geometry::CameraTrajectory<f32>;
