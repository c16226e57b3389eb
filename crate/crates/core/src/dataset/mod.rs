//! Annotated images, corpus files, rotation augmentation and the synthetic
//! generator.

mod augment;
pub mod io;
pub mod synthetic;

pub use augment::{augment, direction_angle, ear_direction, rotate_item, AugmentConfig};
pub use io::{
    format_pts, load_manifest, parse_pts, read_pts, save_corpus, to_frame, write_pts, FrameTransform, LoadedItem,
    Manifest, ManifestItem, MANIFEST_SCHEMA,
};
pub use synthetic::{
    generate_synthetic_model, render_synthetic_corpus, sample_code_vector, CorpusNoise, SyntheticModelConfig,
    HELIX_INDEX, LOBE_INDEX,
};

use crate::error::{Error, Result};
use crate::fitting::CodeVector;
use crate::image::Image;
use crate::model::NUM_LANDMARKS;

/// Fraction of the image size by which landmarks may lie outside the frame.
pub const LANDMARK_MARGIN: f64 = 0.1;

/// An image with its 55 landmarks in pixel coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnotatedImage {
    pub id: String,
    pub image: Image,
    pub landmarks: Vec<[f64; 2]>,
    /// Generating code vector, for synthetic items.
    pub gt: Option<CodeVector>,
}

impl AnnotatedImage {
    /// Checks the landmark count and that every landmark is finite and within
    /// the image grown by 10% on each side.
    pub fn validate(&self) -> Result<()> {
        if self.landmarks.len() != NUM_LANDMARKS {
            return Err(Error::Corpus(format!(
                "{}: {} landmarks, expected {NUM_LANDMARKS}",
                self.id,
                self.landmarks.len()
            )));
        }
        let (w, h) = (self.image.width() as f64, self.image.height() as f64);
        let (mx, my) = (LANDMARK_MARGIN * w, LANDMARK_MARGIN * h);
        for (i, p) in self.landmarks.iter().enumerate() {
            let inside = p[0] >= -mx && p[0] <= w + mx && p[1] >= -my && p[1] <= h + my;
            if !inside || !p[0].is_finite() || !p[1].is_finite() {
                return Err(Error::Corpus(format!(
                    "{}: landmark {i} at ({}, {}) lies outside the frame margin",
                    self.id, p[0], p[1]
                )));
            }
        }
        Ok(())
    }
}
