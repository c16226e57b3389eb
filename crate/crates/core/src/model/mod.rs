//! Statistical shape and colour models.

pub mod earm;
pub mod morphable;
pub mod pca;

pub use earm::ModelBundle;
pub use morphable::{ColourModel, MorphableModel, CANONICAL_FILL, NUM_LANDMARKS};
pub use pca::{build_pca, components_for_coverage, coverage_of, Pca, Retain, WhiteningTransform};
