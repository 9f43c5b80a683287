//! Neural Gabor splatting on the CPU.
//!
//! Planar Gaussian splats whose color comes from a tiny per-primitive
//! sinusoidal MLP over local surface coordinates and view direction,
//! rendered by a tile-based front-to-back compositor with exact analytic
//! gradients, and densified by projecting band-limited image error back onto
//! the primitives.

// NaN must fail validation, so `!(x > 0.0)` is intended; channel loops index several arrays at once
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod error;
pub mod geometry;
pub mod image;
pub mod primitive;
pub mod render;
pub mod loss;
pub mod autograd;
pub mod gradcheck;
pub mod scene_io;
pub mod spectral;
pub mod densify;
pub mod train;
pub mod config;
pub mod cli;

pub use error::{Error, Result};
