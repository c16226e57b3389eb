//! Per-vertex colour sampling from fitted images and the PCA colour model
//! built from those samples.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::AnnotatedImage;
use crate::error::{arg, Error, Result};
use crate::fitting::{fit_landmarks, LmOptions};
use crate::image::{bilinear_taps, Image};
use crate::model::{build_pca, coverage_of, ColourModel, MorphableModel, Retain};
use crate::projection::{project_sop, Pose, ProjectedShape};
use crate::raster::{edge_fn, rasterize, RasterConfig};

/// Soft-edge width used for the visibility render. Vertices whose bilinear
/// taps touch the soft band around the silhouette are treated as unreliable.
pub const VISIBILITY_EDGE_SIGMA: f64 = 1.0;

/// A vertex counts as occluded when the surface at its position is nearer
/// than its own depth by more than this fraction of the mesh depth range.
pub const OCCLUSION_TOLERANCE: f64 = 0.02;

#[derive(Clone, Debug, PartialEq)]
pub struct VertexColourSample {
    pub colours: Vec<[f64; 3]>,
    /// `true` where the colour was read from the image, `false` where it is
    /// the mean-colour fallback.
    pub valid: Vec<bool>,
}

impl VertexColourSample {
    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

/// Reads a colour for every vertex of a projected mesh.
///
/// A vertex is sampled when it projects inside the image, every bilinear tap
/// around it is fully covered by the mesh (hard coverage and soft mask 1),
/// and the z-buffer surface there is the vertex's own or lies no nearer than
/// the occlusion tolerance. Other vertices get the mean of the sampled ones.
pub fn sample_vertex_colours(image: &Image, proj: &ProjectedShape, triangles: &[[u32; 3]]) -> Result<VertexColourSample> {
    let (w, h) = image.dims();
    let n = proj.len();
    let cfg = RasterConfig {
        width: w,
        height: h,
        edge_sigma: VISIBILITY_EDGE_SIGMA,
        background: [0.0; 3],
    };
    let render = rasterize(proj, &vec![[0.0; 3]; n], triangles, &cfg)?;
    let (dmin, dmax) = proj
        .depth
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &d| (a.min(d), b.max(d)));
    let tol = OCCLUSION_TOLERANCE * (dmax - dmin).max(0.0);

    let mut colours = vec![[0.0; 3]; n];
    let mut valid = vec![false; n];
    let mut in_bounds = 0;
    for v in 0..n {
        let [x, y] = proj.points[v];
        if !(x >= 0.0 && y >= 0.0 && x <= w as f64 && y <= h as f64) {
            continue;
        }
        in_bounds += 1;
        let covered = bilinear_taps(x, y, w, h).iter().all(|&(px, py, wt)| {
            wt == 0.0
                || render.fragments[py * w + px].is_some_and(|f| f.triangle.is_some() && f.mask >= 1.0)
        });
        if !covered {
            continue;
        }
        let px = (x.floor() as usize).min(w - 1);
        let py = (y.floor() as usize).min(h - 1);
        let Some(owner) = render.fragments[py * w + px].and_then(|f| f.triangle) else {
            continue;
        };
        let tri = triangles[owner as usize];
        let visible = tri.contains(&(v as u32)) || {
            let [a, b, c] = tri.map(|i| proj.points[i as usize]);
            let area = edge_fn(a, b, c);
            let w0 = edge_fn(b, c, [x, y]) / area;
            let w1 = edge_fn(c, a, [x, y]) / area;
            let w2 = 1.0 - w0 - w1;
            let [da, db, dc] = tri.map(|i| proj.depth[i as usize]);
            w0 * da + w1 * db + w2 * dc >= proj.depth[v] - tol
        };
        if visible {
            colours[v] = image.sample_clamped(x, y);
            valid[v] = true;
        }
    }
    if in_bounds == 0 {
        return Err(Error::Sampling("every vertex projects outside the image".into()));
    }
    let count = valid.iter().filter(|v| **v).count();
    if count == 0 {
        return Err(Error::Sampling("no vertex is visible".into()));
    }
    let mut mean = [0.0; 3];
    for (c, _) in colours.iter().zip(&valid).filter(|(_, v)| **v) {
        for k in 0..3 {
            mean[k] += c[k] / count as f64;
        }
    }
    for (c, v) in colours.iter_mut().zip(&valid) {
        if !*v {
            *c = mean.map(|m| m.clamp(0.0, 1.0));
        }
    }
    Ok(VertexColourSample { colours, valid })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageBuildEntry {
    pub id: String,
    /// Landmark fit energy in pixels, when the fit ran.
    pub e0: Option<f64>,
    pub valid_vertices: usize,
    /// Why the image was left out, if it was.
    pub skipped: Option<String>,
}

pub const COLOUR_REPORT_SCHEMA: &str = "colour-build/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColourBuildReport {
    pub schema: String,
    pub k_requested: usize,
    /// Components kept: `k_requested` capped at the rank of the samples.
    pub k: usize,
    pub coverage: f64,
    pub images_used: usize,
    pub images: Vec<ImageBuildEntry>,
}

/// Fits landmarks on one image and samples its vertex colours.
pub fn sample_item(model: &MorphableModel, item: &AnnotatedImage, lm: &LmOptions) -> Result<(VertexColourSample, f64)> {
    let (w, h) = item.image.dims();
    let rep = fit_landmarks(model, w, h, &item.landmarks, None, lm)?;
    let pose = Pose {
        scale: rep.code.pose.scale * model.canonical_scale(w, h),
        ..rep.code.pose
    };
    let shape = model.reconstruct_shape(&rep.code.shape)?;
    let proj = project_sop(&shape, &pose);
    let sample = sample_vertex_colours(&item.image, &proj, model.triangles())?;
    Ok((sample, rep.final_terms().landmark))
}

/// PCA over per-image colour samples, keeping `k` components (capped at the
/// sample rank). Failed images (`Err` entries) are skipped; more than half
/// failing is an error.
pub fn assemble_colour_model(
    results: Vec<(String, Result<(VertexColourSample, f64)>)>,
    k: usize,
) -> Result<(ColourModel, ColourBuildReport)> {
    if results.is_empty() {
        return Err(arg("colour corpus is empty"));
    }
    if k == 0 {
        return Err(arg("colour model needs at least one component"));
    }
    let total = results.len();
    let mut entries = Vec::with_capacity(total);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (id, r) in results {
        match r {
            Ok((s, e0)) => {
                entries.push(ImageBuildEntry {
                    id,
                    e0: Some(e0),
                    valid_vertices: s.valid_count(),
                    skipped: None,
                });
                rows.push(s.colours.iter().flatten().copied().collect());
            }
            Err(e) => entries.push(ImageBuildEntry {
                id,
                e0: match &e {
                    Error::Diverged(r) => Some(r.final_terms().landmark),
                    _ => None,
                },
                valid_vertices: 0,
                skipped: Some(e.to_string()),
            }),
        }
    }
    let failed = total - rows.len();
    if 2 * failed > total {
        return Err(Error::Corpus(format!("{failed} of {total} images failed during colour sampling")));
    }
    let d = rows[0].len();
    let samples = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
    let pca = build_pca(&samples, Retain::Coverage(1.0))?;
    let k_eff = k.min(pca.basis.ncols());
    let sigma = DVector::from_iterator(k_eff, pca.variances[..k_eff].iter().map(|v| v.sqrt()));
    let basis = pca.basis.columns(0, k_eff) * DMatrix::from_diagonal(&sigma);
    let coverage = coverage_of(&pca.variances, k_eff);
    let model = ColourModel::new(pca.mean, basis, coverage)?;
    let report = ColourBuildReport {
        schema: COLOUR_REPORT_SCHEMA.into(),
        k_requested: k,
        k: k_eff,
        coverage,
        images_used: rows.len(),
        images: entries,
    };
    Ok((model, report))
}

/// Landmark fit and colour sampling for every image, then PCA.
pub fn build_colour_model(
    corpus: &[AnnotatedImage],
    model: &MorphableModel,
    k: usize,
    lm: &LmOptions,
) -> Result<(ColourModel, ColourBuildReport)> {
    let results = corpus
        .iter()
        .map(|it| (it.id.clone(), sample_item(model, it, lm)))
        .collect();
    assemble_colour_model(results, k)
}
