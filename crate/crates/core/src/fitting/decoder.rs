use nalgebra::DVector;

use super::CodeVector;
use crate::error::{arg, Result};
use crate::model::morphable::to_rows;
use crate::model::{ColourModel, MorphableModel};
use crate::projection::{project_sop, select_landmarks, Pose, ProjectedShape};
use crate::raster::{rasterize, RasterConfig, RasterOutput};

/// Turns code vectors into meshes, landmarks and images for one frame size.
#[derive(Clone, Copy, Debug)]
pub struct Decoder<'a> {
    pub shape: &'a MorphableModel,
    pub colour: &'a ColourModel,
    pub raster: RasterConfig,
}

/// A decoded code vector.
#[derive(Clone, Debug)]
pub struct Decoded {
    pub vertices: Vec<[f64; 3]>,
    pub colours: Vec<[f64; 3]>,
    pub projected: ProjectedShape,
    /// The pose actually used for projection (scale in pixels per unit).
    pub pixel_pose: Pose,
}

impl<'a> Decoder<'a> {
    pub fn new(shape: &'a MorphableModel, colour: &'a ColourModel, raster: RasterConfig) -> Result<Self> {
        if shape.n_vertices() != colour.n_vertices() {
            return Err(arg(format!(
                "shape model has {} vertices, colour model {}",
                shape.n_vertices(),
                colour.n_vertices()
            )));
        }
        Ok(Self { shape, colour, raster })
    }

    /// Pixels per model unit at relative scale 1.
    pub fn unit_scale(&self) -> f64 {
        self.shape.canonical_scale(self.raster.width, self.raster.height)
    }

    pub fn pixel_pose(&self, pose: &Pose) -> Pose {
        Pose {
            scale: pose.scale * self.unit_scale(),
            ..*pose
        }
    }

    pub fn canonical_pose(&self) -> Pose {
        canonical_pose(self.shape, self.raster.width, self.raster.height)
    }

    /// Mean shape in mean colour at the canonical pose.
    pub fn zero_code(&self) -> CodeVector {
        CodeVector::zeros(self.canonical_pose(), self.shape.k_white(), self.colour.k())
    }

    pub fn check_code(&self, v: &CodeVector) -> Result<()> {
        if v.shape.len() != self.shape.k_white() || v.colour.len() != self.colour.k() {
            return Err(arg(format!(
                "code vector has {}+{} parameters, model expects {}+{}",
                v.shape.len(),
                v.colour.len(),
                self.shape.k_white(),
                self.colour.k()
            )));
        }
        if !v.is_finite() {
            return Err(arg("code vector has non-finite entries"));
        }
        Ok(())
    }

    pub fn decode(&self, v: &CodeVector) -> Result<Decoded> {
        self.check_code(v)?;
        let vertices = self.shape.reconstruct_fast(&v.shape);
        let colours = to_rows(
            &(self.colour.mean_colour() + self.colour.colour_basis() * DVector::from_column_slice(&v.colour)),
        );
        let pixel_pose = self.pixel_pose(&v.pose);
        let projected = project_sop(&vertices, &pixel_pose);
        Ok(Decoded {
            vertices,
            colours,
            projected,
            pixel_pose,
        })
    }

    pub fn render(&self, v: &CodeVector) -> Result<RasterOutput> {
        let d = self.decode(v)?;
        rasterize(&d.projected, &d.colours, self.shape.triangles(), &self.raster)
    }

    pub fn landmarks(&self, v: &CodeVector) -> Result<Vec<[f64; 2]>> {
        let d = self.decode(v)?;
        select_landmarks(&d.projected, self.shape.landmark_indices())
    }
}

/// Relative pose with no rotation, unit scale and the mean-shape centroid at
/// the frame centre.
pub fn canonical_pose(model: &MorphableModel, width: usize, height: usize) -> Pose {
    let s = model.canonical_scale(width, height);
    let c = model.mean_centroid();
    Pose {
        rotation: [0.0; 3],
        translation: [width as f64 / 2.0 - s * c[0], height as f64 / 2.0 - s * c[1]],
        scale: 1.0,
    }
}
