use nalgebra::{DVector, Matrix3};

use super::decoder::{Decoded, Decoder};
use super::{CodeVector, LossTerms, LossWeights, POSE_DIM};
use crate::error::{arg, Result};
use crate::image::Image;
use crate::model::MorphableModel;
use crate::projection::{project_sop, rotation_derivatives, rotation_from_euler, select_landmarks, Pose};
use crate::raster::{rasterize, rasterize_backward, RasterOutput};

/// Loss value returned when nothing is rendered.
pub const EMPTY_COVERAGE_LOSS: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelLoss {
    pub value: f64,
    /// Number of pixels with coverage above one half.
    pub pixels: usize,
    /// Set when no pixel is covered; `value` is then [`EMPTY_COVERAGE_LOSS`].
    pub degenerate: bool,
}

/// Mean squared error over the RGB channels of pixels whose coverage exceeds 0.5.
pub fn pixel_loss(rendered: &RasterOutput, target: &Image) -> Result<PixelLoss> {
    pixel_loss_impl(rendered, target, None)
}

fn pixel_loss_impl(rendered: &RasterOutput, target: &Image, mut grad: Option<&mut Image>) -> Result<PixelLoss> {
    if rendered.image.dims() != target.dims() {
        return Err(arg(format!(
            "rendered image is {:?} but target is {:?}",
            rendered.image.dims(),
            target.dims()
        )));
    }
    let w = target.width();
    let covered: Vec<usize> = (0..rendered.mask.len())
        .filter(|&i| rendered.mask[i] > 0.5)
        .collect();
    if covered.is_empty() {
        return Ok(PixelLoss {
            value: EMPTY_COVERAGE_LOSS,
            pixels: 0,
            degenerate: true,
        });
    }
    let denom = 3.0 * covered.len() as f64;
    let mut sum = 0.0;
    for &i in &covered {
        let (x, y) = (i % w, i / w);
        let r = rendered.image.pixel(x, y);
        let t = target.pixel(x, y);
        let diff = [r[0] - t[0], r[1] - t[1], r[2] - t[2]];
        sum += diff.iter().map(|d| d * d).sum::<f64>();
        if let Some(g) = grad.as_deref_mut() {
            g.set_pixel(x, y, diff.map(|d| 2.0 * d / denom));
        }
    }
    Ok(PixelLoss {
        value: sum / denom,
        pixels: covered.len(),
        degenerate: false,
    })
}

/// Diagonal of the axis-aligned bounding box of a landmark set.
pub(crate) fn bbox_diagonal(points: &[[f64; 2]]) -> f64 {
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in points {
        for c in 0..2 {
            lo[c] = lo[c].min(p[c]);
            hi[c] = hi[c].max(p[c]);
        }
    }
    ((hi[0] - lo[0]).powi(2) + (hi[1] - lo[1]).powi(2)).sqrt()
}

fn mean_distance(pred: &[[f64; 2]], gt: &[[f64; 2]]) -> Result<f64> {
    if pred.len() != gt.len() || gt.is_empty() {
        return Err(arg(format!(
            "landmark sets have {} and {} points",
            pred.len(),
            gt.len()
        )));
    }
    let sum: f64 = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| ((p[0] - g[0]).powi(2) + (p[1] - g[1]).powi(2)).sqrt())
        .sum();
    Ok(sum / gt.len() as f64)
}

/// Mean per-landmark Euclidean distance divided by the ground-truth bounding
/// box diagonal.
pub fn landmark_loss(pred: &[[f64; 2]], gt: &[[f64; 2]]) -> Result<f64> {
    let d = bbox_diagonal(gt);
    if !(d > 0.0) || !d.is_finite() {
        return Err(arg("ground-truth landmarks have a degenerate bounding box"));
    }
    Ok(mean_distance(pred, gt)? / d)
}

fn landmark_loss_grad(pred: &[[f64; 2]], gt: &[[f64; 2]]) -> Result<(f64, Vec<[f64; 2]>)> {
    let value = landmark_loss(pred, gt)?;
    let scale = 1.0 / (bbox_diagonal(gt) * gt.len() as f64);
    let grad = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| {
            let d = [p[0] - g[0], p[1] - g[1]];
            let n = (d[0] * d[0] + d[1] * d[1]).sqrt();
            if n > 0.0 {
                [d[0] * scale / n, d[1] * scale / n]
            } else {
                [0.0, 0.0]
            }
        })
        .collect();
    Ok((value, grad))
}

/// `E₀`: mean per-landmark pixel distance between the projected model
/// landmarks and `gt`. `pose.scale` is in pixels per model unit.
pub fn landmark_energy(model: &MorphableModel, alpha_s: &[f64], pose: &Pose, gt: &[[f64; 2]]) -> Result<f64> {
    if gt.iter().flatten().any(|v| !v.is_finite()) {
        return Err(arg("ground-truth landmarks contain non-finite values"));
    }
    let s = model.reconstruct_shape(alpha_s)?;
    let x = select_landmarks(&project_sop(&s, pose), model.landmark_indices())?;
    mean_distance(&x, gt)
}

/// Squared Mahalanobis distance in whitened coordinates.
pub fn reg_statistical(alpha_s: &[f64], alpha_c: &[f64]) -> f64 {
    alpha_s.iter().chain(alpha_c).map(|a| a * a).sum()
}

/// Quadratic penalty outside the scale box [0.5, 1.5].
pub fn reg_scale(f: f64) -> f64 {
    if f < 0.5 {
        (0.5 - f).powi(2)
    } else if f > 1.5 {
        (f - 1.5).powi(2)
    } else {
        0.0
    }
}

fn reg_scale_grad(f: f64) -> f64 {
    if f < 0.5 {
        -2.0 * (0.5 - f)
    } else if f > 1.5 {
        2.0 * (f - 1.5)
    } else {
        0.0
    }
}

#[derive(Clone, Debug)]
pub struct LossEval {
    pub terms: LossTerms,
    /// Gradient over the flattened code vector.
    pub gradient: Vec<f64>,
    pub degenerate_coverage: bool,
    /// The render used for the pixel term.
    pub render: RasterOutput,
}

/// Weighted four-term loss and its gradient over the flattened code vector.
pub fn total_loss(
    dec: &Decoder<'_>,
    v: &CodeVector,
    target: &Image,
    gt: Option<&[[f64; 2]]>,
    w: &LossWeights,
) -> Result<LossEval> {
    w.validate()?;
    if w.landmark > 0.0 && gt.is_none() {
        return Err(arg("landmark weight is positive but no ground-truth landmarks were given"));
    }
    if target.dims() != (dec.raster.width, dec.raster.height) {
        return Err(arg("target image does not match the raster size"));
    }
    let decoded = dec.decode(v)?;
    let model = dec.shape;
    let n = model.n_vertices();
    let mut d_points = vec![[0.0; 2]; n];

    let render = rasterize(&decoded.projected, &decoded.colours, model.triangles(), &dec.raster)?;
    let mut d_image = Image::new(dec.raster.width, dec.raster.height);
    let pix = pixel_loss_impl(&render, target, Some(&mut d_image))?;
    let mut d_colours = vec![[0.0; 3]; n];
    if w.pixel > 0.0 && !pix.degenerate {
        for g in d_image.data_mut() {
            *g *= w.pixel;
        }
        let rg = rasterize_backward(
            &render,
            &d_image,
            &decoded.projected,
            &decoded.colours,
            model.triangles(),
            &dec.raster,
        )?;
        d_points = rg.positions;
        d_colours = rg.colours;
    }

    let mut lm_value = 0.0;
    if let Some(gt) = gt {
        let pred = select_landmarks(&decoded.projected, model.landmark_indices())?;
        let (value, grad) = landmark_loss_grad(&pred, gt)?;
        lm_value = value;
        if w.landmark > 0.0 {
            for (&i, g) in model.landmark_indices().iter().zip(&grad) {
                d_points[i as usize][0] += w.landmark * g[0];
                d_points[i as usize][1] += w.landmark * g[1];
            }
        }
    }

    let reg1 = reg_statistical(&v.shape, &v.colour);
    let reg2 = reg_scale(v.pose.scale);
    let terms = LossTerms {
        total: w.pixel * pix.value + w.landmark * lm_value + w.reg_statistical * reg1 + w.reg_scale * reg2,
        pixel: pix.value,
        landmark: lm_value,
        reg_statistical: reg1,
        reg_scale: reg2,
    };

    let mut gradient = vec![0.0; v.len()];
    backprop_points(dec, &decoded, v, &d_points, &mut gradient);
    let ks = v.shape.len();
    let dc_flat = DVector::from_iterator(3 * n, d_colours.iter().flatten().copied());
    let dac = dec.colour.colour_basis().tr_mul(&dc_flat);
    for j in 0..v.colour.len() {
        gradient[POSE_DIM + ks + j] = dac[j];
    }
    for (j, a) in v.shape.iter().chain(&v.colour).enumerate() {
        gradient[POSE_DIM + j] += 2.0 * w.reg_statistical * a;
    }
    gradient[5] += w.reg_scale * reg_scale_grad(v.pose.scale);

    Ok(LossEval {
        terms,
        gradient,
        degenerate_coverage: pix.degenerate,
        render,
    })
}

/// Chains `d loss / d projected points` back to pose and shape parameters,
/// writing into `grad[..POSE_DIM + k_shape]`.
fn backprop_points(dec: &Decoder<'_>, decoded: &Decoded, v: &CodeVector, d_points: &[[f64; 2]], grad: &mut [f64]) {
    let pose = &decoded.pixel_pose;
    let r = rotation_from_euler(pose.rotation);
    let dr = rotation_derivatives(pose.rotation);
    let f = pose.scale;
    let n = d_points.len();

    let mut d_rot = Matrix3::<f64>::zeros();
    let mut d_t = [0.0; 2];
    let mut d_f = 0.0;
    let mut d_s = DVector::<f64>::zeros(3 * n);
    for (i, (dp, s)) in d_points.iter().zip(&decoded.vertices).enumerate() {
        if dp[0] == 0.0 && dp[1] == 0.0 {
            continue;
        }
        d_t[0] += dp[0];
        d_t[1] += dp[1];
        for row in 0..2 {
            let q = r[(row, 0)] * s[0] + r[(row, 1)] * s[1] + r[(row, 2)] * s[2];
            d_f += dp[row] * q;
            for col in 0..3 {
                d_rot[(row, col)] += f * dp[row] * s[col];
            }
        }
        for col in 0..3 {
            d_s[3 * i + col] = f * (r[(0, col)] * dp[0] + r[(1, col)] * dp[1]);
        }
    }
    for k in 0..3 {
        grad[k] = d_rot.component_mul(&dr[k]).sum();
    }
    grad[3] = d_t[0];
    grad[4] = d_t[1];
    grad[5] = d_f * dec.unit_scale();
    let das = dec.shape.whitened_basis().tr_mul(&d_s);
    for j in 0..v.shape.len() {
        grad[POSE_DIM + j] = das[j];
    }
}

impl LossEval {
    pub(crate) fn is_finite(&self) -> bool {
        self.terms.total.is_finite() && self.gradient.iter().all(|g| g.is_finite())
    }
}
