//! Photometric refinement of the full code vector with Adam.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::landmarks::{fit_landmarks, LmOptions};
use super::loss::{pixel_loss, total_loss};
use super::{CodeVector, Decoder, FitReport, LossTerms, LossWeights, POSE_DIM};
use crate::error::{arg, Error, Result};
use crate::image::Image;
use crate::projection::{rotation_from_euler, Pose};

/// Per-group multipliers on the Adam step. A coordinate moves by roughly
/// `learning_rate × scale` per iteration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StepScales {
    pub rotation: f64,
    /// Fraction of the shorter image side.
    pub translation: f64,
    pub scale: f64,
    pub shape: f64,
    pub colour: f64,
}

impl Default for StepScales {
    fn default() -> Self {
        Self {
            rotation: 1.0,
            translation: 0.2,
            scale: 1.0,
            shape: 2.0,
            colour: 2.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamOptions {
    pub max_iterations: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Iterations without a new best before the learning rate is decayed.
    pub patience: usize,
    pub decay: f64,
    /// Early stop when the loss changes by less than `relative_tolerance`
    /// over this many iterations.
    pub window: usize,
    pub relative_tolerance: f64,
    pub step_scales: StepScales,
}

impl Default for AdamOptions {
    fn default() -> Self {
        Self {
            max_iterations: 400,
            learning_rate: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-12,
            patience: 20,
            decay: 0.5,
            window: 20,
            relative_tolerance: 1e-6,
            step_scales: StepScales::default(),
        }
    }
}

impl AdamOptions {
    pub fn validate(&self) -> Result<()> {
        let pos = [self.learning_rate, self.decay, self.step_scales.rotation, self.step_scales.translation];
        if pos.iter().any(|v| !(v.is_finite() && *v > 0.0))
            || !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || !(self.epsilon >= 0.0)
            || self.window == 0
        {
            return Err(arg("invalid optimiser settings"));
        }
        Ok(())
    }
}

/// Smallest relative scale the optimiser may reach; keeps the projection
/// from collapsing through zero.
const MIN_SCALE: f64 = 1e-3;

/// Minimises the weighted loss from `init`, returning the best state seen.
///
/// Each trace entry holds the loss terms of the best state found up to that
/// iteration, so the trace is non-increasing in `total` and ends at the
/// returned code.
pub fn fit_photometric(
    dec: &Decoder<'_>,
    target: &Image,
    gt: Option<&[[f64; 2]]>,
    w: &LossWeights,
    init: &CodeVector,
    opts: &AdamOptions,
) -> Result<FitReport> {
    let start = Instant::now();
    opts.validate()?;
    dec.check_code(init)?;
    let ks = init.shape.len();
    let kc = init.colour.len();
    let n = init.len();

    let side = dec.raster.width.min(dec.raster.height) as f64;
    let sc = &opts.step_scales;
    let scales: Vec<f64> = (0..n)
        .map(|j| match j {
            0..=2 => sc.rotation,
            3 | 4 => sc.translation * side,
            5 => sc.scale,
            j if j < POSE_DIM + ks => sc.shape,
            _ => sc.colour,
        })
        .collect();

    let mut x = init.flatten();
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut lr = opts.learning_rate;

    let eval = |x: &[f64]| -> Result<(CodeVector, super::LossEval)> {
        let code = CodeVector::from_flat(x, ks, kc)?;
        let e = total_loss(dec, &code, target, gt, w)?;
        Ok((code, e))
    };

    let (code0, e0) = eval(&x)?;
    let mut best_code = code0;
    let mut best_terms = e0.terms;
    let mut trace = vec![best_terms];
    let diverged = |code: CodeVector, trace: Vec<LossTerms>, it: usize| {
        Error::Diverged(Box::new(FitReport {
            code,
            trace,
            iterations: it,
            converged: false,
            stop_reason: "non-finite loss".into(),
            elapsed_secs: start.elapsed().as_secs_f64(),
        }))
    };
    if !e0.is_finite() {
        return Err(diverged(best_code, trace, 0));
    }

    let mut history = vec![e0.terms.total];
    let mut grad = e0.gradient;
    let mut since_best = 0;
    let mut iterations = 0;
    let mut converged = false;
    let mut reason = "iteration limit".to_string();

    while iterations < opts.max_iterations {
        iterations += 1;
        let t = iterations as i32;
        let bc1 = 1.0 - opts.beta1.powi(t);
        let bc2 = 1.0 - opts.beta2.powi(t);
        for j in 0..n {
            m[j] = opts.beta1 * m[j] + (1.0 - opts.beta1) * grad[j];
            v[j] = opts.beta2 * v[j] + (1.0 - opts.beta2) * grad[j] * grad[j];
            let mh = m[j] / bc1;
            let vh = v[j] / bc2;
            x[j] -= lr * scales[j] * mh / (vh.sqrt() + opts.epsilon);
        }
        x[5] = x[5].max(MIN_SCALE);

        let (code, e) = eval(&x)?;
        if !e.is_finite() {
            trace.push(best_terms);
            return Err(diverged(best_code, trace, iterations));
        }
        let total = e.terms.total;
        if total < best_terms.total {
            best_terms = e.terms;
            best_code = code;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= opts.patience {
                lr *= opts.decay;
                since_best = 0;
            }
        }
        trace.push(best_terms);
        history.push(total);
        grad = e.gradient;

        if history.len() > opts.window {
            let old = history[history.len() - 1 - opts.window];
            let change = (old - total).abs();
            if change <= opts.relative_tolerance * old.abs() {
                converged = true;
                reason = "relative loss change below tolerance".into();
                break;
            }
        }
        if lr < opts.learning_rate * 1e-6 {
            converged = true;
            reason = "learning rate exhausted".into();
            break;
        }
    }

    Ok(FitReport {
        code: best_code,
        trace,
        iterations,
        converged,
        stop_reason: reason,
        elapsed_secs: start.elapsed().as_secs_f64(),
    })
}

/// Rolls and relative scales tried by [`pose_grid_init`].
pub const GRID_ROLLS_DEG: [f64; 9] = [-60.0, -45.0, -30.0, -15.0, 0.0, 15.0, 30.0, 45.0, 60.0];
pub const GRID_SCALES: [f64; 3] = [0.7, 1.0, 1.3];

/// Pose for the mean shape with the given roll and scale whose rotated
/// centroid sits at the frame centre.
pub fn centred_pose(dec: &Decoder<'_>, rotation: [f64; 3], scale: f64) -> Pose {
    let c = dec.shape.mean_centroid();
    let r = rotation_from_euler(rotation);
    let rc = r * nalgebra::Vector3::new(c[0], c[1], c[2]);
    let f = scale * dec.unit_scale();
    Pose {
        rotation,
        translation: [
            dec.raster.width as f64 / 2.0 - f * rc.x,
            dec.raster.height as f64 / 2.0 - f * rc.y,
        ],
        scale,
    }
}

/// Landmark-free initialisation: the mean shape in mean colour at every grid
/// roll and scale, centred, keeping the lowest pixel loss. Ties keep the
/// earlier grid point.
pub fn pose_grid_init(dec: &Decoder<'_>, target: &Image) -> Result<CodeVector> {
    if target.dims() != (dec.raster.width, dec.raster.height) {
        return Err(arg("target image does not match the raster size"));
    }
    let mut best: Option<(f64, CodeVector)> = None;
    for &roll in &GRID_ROLLS_DEG {
        for &f in &GRID_SCALES {
            let pose = centred_pose(dec, [0.0, 0.0, roll.to_radians()], f);
            let code = CodeVector::zeros(pose, dec.shape.k_white(), dec.colour.k());
            let loss = pixel_loss(&dec.render(&code)?, target)?.value;
            if best.as_ref().is_none_or(|(b, _)| loss < *b) {
                best = Some((loss, code));
            }
        }
    }
    Ok(best.expect("grid is not empty").1)
}

/// Full per-image pipeline: landmark fit for initialisation when landmarks are
/// given, the pose grid otherwise, then photometric refinement.
pub fn fit_image(
    dec: &Decoder<'_>,
    target: &Image,
    gt: Option<&[[f64; 2]]>,
    w: &LossWeights,
    lm: &LmOptions,
    adam: &AdamOptions,
) -> Result<FitReport> {
    let init = match gt {
        Some(gt) => {
            let rep = match fit_landmarks(dec.shape, dec.raster.width, dec.raster.height, gt, None, lm) {
                Ok(r) => r,
                Err(Error::Diverged(r)) => *r,
                Err(e) => return Err(e),
            };
            CodeVector {
                pose: rep.code.pose,
                shape: rep.code.shape,
                colour: vec![0.0; dec.colour.k()],
            }
        }
        None => pose_grid_init(dec, target)?,
    };
    fit_photometric(dec, target, gt, w, &init, adam)
}
