//! Reconstruction of posed, coloured 3D ear meshes from single images by
//! analysis by synthesis.
//!
//! A linear morphable model ([`model`]) is posed with a scaled orthographic
//! camera ([`projection`]), rendered by a differentiable rasterizer
//! ([`raster`]) and fitted to an image by minimising a weighted photometric,
//! landmark and prior loss ([`fitting`]). [`colour_builder`] builds a colour
//! model from annotated photographs, [`dataset`] handles corpora, rotation
//! augmentation and synthetic data, and [`evaluation`] computes normalised
//! landmark error statistics.

pub mod colour_builder;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod fitting;
pub mod image;
pub mod model;
pub mod projection;
pub mod raster;

pub use error::{Error, Result};
pub use fitting::{CodeVector, Decoder, FitReport, LossTerms, LossWeights};
pub use image::Image;
pub use model::{ColourModel, ModelBundle, MorphableModel};
pub use projection::{Pose, ProjectedShape};
pub use raster::{RasterConfig, RasterOutput};
