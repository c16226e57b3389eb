use nalgebra::{DMatrix, DVector};

use super::pca::WhiteningTransform;
use crate::error::{arg, Error, Result};

/// Number of semantic landmarks in the annotation scheme.
pub const NUM_LANDMARKS: usize = 55;

/// Fraction of the shorter frame side covered by the mean shape at `f = 1`.
pub const CANONICAL_FILL: f64 = 0.6;

/// A linear 3D shape model: `S = S̄ + U_s · U_w · α_s`.
#[derive(Clone, Debug)]
pub struct MorphableModel {
    mean_shape: DVector<f64>,
    shape_basis: DMatrix<f64>,
    triangles: Vec<[u32; 3]>,
    whitening: WhiteningTransform,
    landmark_indices: Vec<u32>,
    whitened_basis: DMatrix<f64>,
}

impl MorphableModel {
    pub fn new(
        mean_shape: DVector<f64>,
        shape_basis: DMatrix<f64>,
        triangles: Vec<[u32; 3]>,
        whitening: WhiteningTransform,
        landmark_indices: Vec<u32>,
    ) -> Result<Self> {
        let bad = |m: String| Err(Error::ModelConstruction(m));
        if mean_shape.len() % 3 != 0 || mean_shape.len() < 9 {
            return bad(format!("mean shape length {} is not 3N with N >= 3", mean_shape.len()));
        }
        let n = mean_shape.len() / 3;
        if shape_basis.nrows() != 3 * n {
            return bad(format!("shape basis has {} rows, expected {}", shape_basis.nrows(), 3 * n));
        }
        if shape_basis.ncols() != whitening.k_full() {
            return bad(format!(
                "shape basis has {} columns but whitening expects {}",
                shape_basis.ncols(),
                whitening.k_full()
            ));
        }
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i as usize >= n)) {
            return bad(format!("triangle {t:?} references a vertex >= {n}"));
        }
        if landmark_indices.len() != NUM_LANDMARKS {
            return bad(format!(
                "expected {NUM_LANDMARKS} landmark indices, got {}",
                landmark_indices.len()
            ));
        }
        if let Some(i) = landmark_indices.iter().find(|&&i| i as usize >= n) {
            return bad(format!("landmark index {i} >= {n}"));
        }
        if mean_shape.iter().chain(shape_basis.iter()).any(|v| !v.is_finite()) {
            return bad("model contains non-finite values".into());
        }
        check_orthogonal(&shape_basis)?;
        let whitened_basis = &shape_basis * whitening.recover_matrix();
        Ok(Self {
            mean_shape,
            shape_basis,
            triangles,
            whitening,
            landmark_indices,
            whitened_basis,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.mean_shape.len() / 3
    }

    pub fn k_full(&self) -> usize {
        self.shape_basis.ncols()
    }

    pub fn k_white(&self) -> usize {
        self.whitening.k_white()
    }

    pub fn mean_shape(&self) -> &DVector<f64> {
        &self.mean_shape
    }

    pub fn shape_basis(&self) -> &DMatrix<f64> {
        &self.shape_basis
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn whitening(&self) -> &WhiteningTransform {
        &self.whitening
    }

    pub fn landmark_indices(&self) -> &[u32] {
        &self.landmark_indices
    }

    /// `U_s · U_w`, the `3N × k` map from whitened parameters to vertex offsets.
    pub fn whitened_basis(&self) -> &DMatrix<f64> {
        &self.whitened_basis
    }

    /// Vertex positions for whitened parameters `alpha_s`, one row per vertex.
    pub fn reconstruct_shape(&self, alpha_s: &[f64]) -> Result<Vec<[f64; 3]>> {
        check_finite(alpha_s, "shape parameters")?;
        let beta = self.whitening.unwhiten(alpha_s)?;
        let flat = &self.mean_shape + &self.shape_basis * beta;
        Ok(to_rows(&flat))
    }

    /// Same as [`reconstruct_shape`](Self::reconstruct_shape) through the
    /// precomputed whitened basis. Used on the optimisation hot path.
    pub(crate) fn reconstruct_fast(&self, alpha_s: &[f64]) -> Vec<[f64; 3]> {
        let flat = &self.mean_shape + &self.whitened_basis * DVector::from_column_slice(alpha_s);
        to_rows(&flat)
    }

    /// Scale (pixels per model unit) at which the mean shape spans
    /// [`CANONICAL_FILL`] of the shorter side of a `width × height` frame.
    pub fn canonical_scale(&self, width: usize, height: usize) -> f64 {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for v in self.mean_shape.as_slice().chunks_exact(3) {
            for c in 0..2 {
                lo[c] = lo[c].min(v[c]);
                hi[c] = hi[c].max(v[c]);
            }
        }
        let extent = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(f64::MIN_POSITIVE);
        CANONICAL_FILL * width.min(height) as f64 / extent
    }

    /// Centroid of the mean shape.
    pub fn mean_centroid(&self) -> [f64; 3] {
        let mut c = [0.0; 3];
        for v in self.mean_shape.as_slice().chunks_exact(3) {
            for k in 0..3 {
                c[k] += v[k];
            }
        }
        let n = self.n_vertices() as f64;
        c.map(|x| x / n)
    }
}

/// Per-vertex linear colour model `C = C̄ + U_c · α_c` with whitened `α_c`.
#[derive(Clone, Debug, PartialEq)]
pub struct ColourModel {
    mean_colour: DVector<f64>,
    colour_basis: DMatrix<f64>,
    coverage: f64,
}

impl ColourModel {
    pub fn new(mean_colour: DVector<f64>, colour_basis: DMatrix<f64>, coverage: f64) -> Result<Self> {
        if mean_colour.len() % 3 != 0 || mean_colour.is_empty() {
            return Err(Error::ModelConstruction("mean colour length is not 3N".into()));
        }
        if colour_basis.nrows() != mean_colour.len() {
            return Err(Error::ModelConstruction(format!(
                "colour basis has {} rows, expected {}",
                colour_basis.nrows(),
                mean_colour.len()
            )));
        }
        if !(coverage > 0.0 && coverage <= 1.0 + 1e-12) {
            return Err(Error::ModelConstruction(format!("coverage {coverage} outside (0, 1]")));
        }
        if mean_colour.iter().chain(colour_basis.iter()).any(|v| !v.is_finite()) {
            return Err(Error::ModelConstruction("colour model contains non-finite values".into()));
        }
        Ok(Self {
            mean_colour,
            colour_basis,
            coverage: coverage.min(1.0),
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.mean_colour.len() / 3
    }

    pub fn k(&self) -> usize {
        self.colour_basis.ncols()
    }

    pub fn coverage(&self) -> f64 {
        self.coverage
    }

    pub fn mean_colour(&self) -> &DVector<f64> {
        &self.mean_colour
    }

    pub fn colour_basis(&self) -> &DMatrix<f64> {
        &self.colour_basis
    }

    /// Unclamped per-vertex RGB. Clamping happens in the rasterizer so that
    /// gradients see the raw linear value.
    pub fn reconstruct_colour(&self, alpha_c: &[f64]) -> Result<Vec<[f64; 3]>> {
        if alpha_c.len() != self.k() {
            return Err(arg(format!(
                "colour parameters have length {}, expected {}",
                alpha_c.len(),
                self.k()
            )));
        }
        check_finite(alpha_c, "colour parameters")?;
        let flat = &self.mean_colour + &self.colour_basis * DVector::from_column_slice(alpha_c);
        Ok(to_rows(&flat))
    }
}

pub(crate) fn to_rows(flat: &DVector<f64>) -> Vec<[f64; 3]> {
    flat.as_slice()
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect()
}

fn check_finite(v: &[f64], what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(arg(format!("{what} contain non-finite values")))
    }
}

fn check_orthogonal(basis: &DMatrix<f64>) -> Result<()> {
    let gram = basis.tr_mul(basis);
    let k = gram.nrows();
    for i in 0..k {
        for j in (i + 1)..k {
            let denom = (gram[(i, i)] * gram[(j, j)]).sqrt();
            if denom > 0.0 && gram[(i, j)].abs() > 1e-8 * denom {
                return Err(Error::ModelConstruction(format!(
                    "shape basis columns {i} and {j} are not orthogonal"
                )));
            }
        }
    }
    Ok(())
}
