//! Landmark-only fitting of pose and whitened shape by Levenberg–Marquardt.
//!
//! Residuals are the 55×2 differences between projected model landmarks and
//! the targets. The Jacobian is analytic: whitening, shape reconstruction,
//! rotation and scaled orthographic projection are all differentiated in
//! closed form. A trial step is accepted only when it lowers both the sum of
//! squared residuals and `E₀`, so the recorded `E₀` trace never increases.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::loss::bbox_diagonal;
use super::{CodeVector, FitReport, LossTerms, POSE_DIM};
use crate::error::{arg, Error, Result};
use crate::model::MorphableModel;
use crate::projection::{rotation_derivatives, rotation_from_euler, Pose};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Stop when an accepted step changes `E₀` by less than this fraction.
    pub relative_tolerance: f64,
    /// Stop when `‖Jᵀr‖` falls below this.
    pub gradient_tolerance: f64,
    /// Stop when `E₀` (pixels) falls below this.
    pub energy_floor: f64,
    pub initial_damping: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            relative_tolerance: 1e-8,
            gradient_tolerance: 1e-10,
            energy_floor: 1e-10,
            initial_damping: 1e-3,
        }
    }
}

/// Default starting point for a `width × height` frame: zero shape, pose from
/// the landmark bounding box and a 2D Procrustes estimate of the roll.
pub fn default_landmark_init(model: &MorphableModel, width: usize, height: usize, gt: &[[f64; 2]]) -> Result<(Vec<f64>, Pose)> {
    check_targets(model, gt)?;
    let unit = model.canonical_scale(width, height);
    let mean = model.mean_shape().as_slice();
    let m: Vec<[f64; 2]> = model
        .landmark_indices()
        .iter()
        .map(|&i| [unit * mean[3 * i as usize], unit * mean[3 * i as usize + 1]])
        .collect();

    let dm = bbox_diagonal(&m);
    let dg = bbox_diagonal(gt);
    if !(dm > 0.0 && dg > 0.0) {
        return Err(Error::Degenerate("landmark bounding box has zero size".into()));
    }
    let scale = dg / dm;

    let centroid = |v: &[[f64; 2]]| {
        let n = v.len() as f64;
        let s = v.iter().fold([0.0; 2], |a, p| [a[0] + p[0], a[1] + p[1]]);
        [s[0] / n, s[1] / n]
    };
    let cm = centroid(&m);
    let cg = centroid(gt);
    let (mut dot, mut cross) = (0.0, 0.0);
    for (a, b) in m.iter().zip(gt) {
        let a = [a[0] - cm[0], a[1] - cm[1]];
        let b = [b[0] - cg[0], b[1] - cg[1]];
        dot += a[0] * b[0] + a[1] * b[1];
        cross += a[0] * b[1] - a[1] * b[0];
    }
    let roll = cross.atan2(dot);
    let (s, c) = roll.sin_cos();
    let rc = [c * cm[0] - s * cm[1], s * cm[0] + c * cm[1]];
    let pose = Pose {
        rotation: [0.0, 0.0, roll],
        translation: [cg[0] - scale * rc[0], cg[1] - scale * rc[1]],
        scale,
    };
    Ok((vec![0.0; model.k_white()], pose))
}

fn check_targets(model: &MorphableModel, gt: &[[f64; 2]]) -> Result<()> {
    if gt.len() != model.landmark_indices().len() {
        return Err(arg(format!(
            "{} target landmarks for a model with {}",
            gt.len(),
            model.landmark_indices().len()
        )));
    }
    if gt.iter().flatten().any(|v| !v.is_finite()) {
        return Err(arg("target landmarks contain non-finite values"));
    }
    Ok(())
}

struct Problem<'a> {
    model: &'a MorphableModel,
    gt: &'a [[f64; 2]],
    unit: f64,
    /// Mean-shape rows and whitened-basis rows at the landmark vertices.
    mean_rows: Vec<Vector3<f64>>,
    basis_rows: Vec<DMatrix<f64>>,
}

impl<'a> Problem<'a> {
    fn new(model: &'a MorphableModel, gt: &'a [[f64; 2]], unit: f64) -> Self {
        let mean = model.mean_shape();
        let wb = model.whitened_basis();
        let mut mean_rows = Vec::new();
        let mut basis_rows = Vec::new();
        for &i in model.landmark_indices() {
            let r = 3 * i as usize;
            mean_rows.push(Vector3::new(mean[r], mean[r + 1], mean[r + 2]));
            basis_rows.push(wb.rows(r, 3).into_owned());
        }
        Self {
            model,
            gt,
            unit,
            mean_rows,
            basis_rows,
        }
    }

    fn n_params(&self) -> usize {
        POSE_DIM + self.model.k_white()
    }

    fn shape_point(&self, i: usize, alpha: &DVector<f64>) -> Vector3<f64> {
        self.mean_rows[i] + &self.basis_rows[i] * alpha
    }

    fn split(&self, theta: &DVector<f64>) -> ([f64; 3], [f64; 2], f64, DVector<f64>) {
        (
            [theta[0], theta[1], theta[2]],
            [theta[3], theta[4]],
            theta[5] * self.unit,
            theta.rows(POSE_DIM, self.model.k_white()).into_owned(),
        )
    }

    fn residuals(&self, theta: &DVector<f64>) -> DVector<f64> {
        let (rot, t, f, alpha) = self.split(theta);
        let r = rotation_from_euler(rot);
        let mut out = DVector::zeros(2 * self.gt.len());
        for (i, g) in self.gt.iter().enumerate() {
            let q = r * self.shape_point(i, &alpha);
            out[2 * i] = f * q.x + t[0] - g[0];
            out[2 * i + 1] = f * q.y + t[1] - g[1];
        }
        out
    }

    fn jacobian(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        let (rot, _, f, alpha) = self.split(theta);
        let r = rotation_from_euler(rot);
        let dr: [Matrix3<f64>; 3] = rotation_derivatives(rot);
        let k = self.model.k_white();
        let mut j = DMatrix::zeros(2 * self.gt.len(), self.n_params());
        for i in 0..self.gt.len() {
            let s = self.shape_point(i, &alpha);
            let q = r * s;
            for row in 0..2 {
                let ri = 2 * i + row;
                for a in 0..3 {
                    j[(ri, a)] = f * (dr[a] * s)[row];
                }
                j[(ri, 3 + row)] = 1.0;
                j[(ri, 5)] = self.unit * q[row];
                let rrow = r.row(row);
                let b = &self.basis_rows[i];
                for c in 0..k {
                    j[(ri, POSE_DIM + c)] = f * (rrow[0] * b[(0, c)] + rrow[1] * b[(1, c)] + rrow[2] * b[(2, c)]);
                }
            }
        }
        j
    }
}

/// `E₀` from a stacked residual vector.
fn energy(r: &DVector<f64>) -> f64 {
    let n = r.len() / 2;
    (0..n).map(|i| r[2 * i].hypot(r[2 * i + 1])).sum::<f64>() / n as f64
}

/// Fits pose and whitened shape to target landmarks in a `width × height`
/// frame. `init` defaults to [`default_landmark_init`]; its pose uses the
/// relative scale convention of [`CodeVector`].
pub fn fit_landmarks(
    model: &MorphableModel,
    width: usize,
    height: usize,
    gt: &[[f64; 2]],
    init: Option<(Vec<f64>, Pose)>,
    opts: &LmOptions,
) -> Result<FitReport> {
    let start = Instant::now();
    check_targets(model, gt)?;
    let (alpha0, pose0) = match init {
        Some(i) => i,
        None => default_landmark_init(model, width, height, gt)?,
    };
    if alpha0.len() != model.k_white() {
        return Err(arg("initial shape parameters have the wrong length"));
    }
    if !pose0.is_valid() {
        return Err(arg("initial pose is invalid"));
    }
    let unit = model.canonical_scale(width, height);
    let problem = Problem::new(model, gt, unit);

    let code_of = |theta: &DVector<f64>| CodeVector {
        pose: Pose {
            rotation: [theta[0], theta[1], theta[2]],
            translation: [theta[3], theta[4]],
            scale: theta[5],
        },
        shape: theta.as_slice()[POSE_DIM..].to_vec(),
        colour: Vec::new(),
    };
    let terms_of = |e0: f64| LossTerms {
        total: e0,
        landmark: e0,
        ..LossTerms::default()
    };

    let mut theta = DVector::zeros(problem.n_params());
    theta.as_mut_slice()[..3].copy_from_slice(&pose0.rotation);
    theta.as_mut_slice()[3..5].copy_from_slice(&pose0.translation);
    theta[5] = pose0.scale;
    theta.as_mut_slice()[POSE_DIM..].copy_from_slice(&alpha0);

    let mut r = problem.residuals(&theta);
    let mut e0 = energy(&r);
    let mut ssq = r.norm_squared();
    let mut trace = vec![terms_of(e0)];
    let diverged = |theta: &DVector<f64>, trace: Vec<LossTerms>, it: usize| {
        Error::Diverged(Box::new(FitReport {
            code: code_of(theta),
            trace,
            iterations: it,
            converged: false,
            stop_reason: "non-finite residuals".into(),
            elapsed_secs: start.elapsed().as_secs_f64(),
        }))
    };
    if !e0.is_finite() {
        return Err(diverged(&theta, trace, 0));
    }

    let mut damping = opts.initial_damping;
    let mut iterations = 0;
    let mut converged = false;
    let mut reason = "iteration limit".to_string();

    while iterations < opts.max_iterations {
        if e0 < opts.energy_floor {
            converged = true;
            reason = "energy below floor".into();
            break;
        }
        let j = problem.jacobian(&theta);
        let jtr = j.tr_mul(&r);
        if jtr.norm() < opts.gradient_tolerance {
            converged = true;
            reason = "gradient norm below tolerance".into();
            break;
        }
        if damping > 1e16 {
            converged = true;
            reason = "no further decrease possible".into();
            break;
        }
        iterations += 1;
        let jtj = j.tr_mul(&j);
        let mut a = jtj.clone();
        for d in 0..a.nrows() {
            a[(d, d)] += damping * jtj[(d, d)].max(1e-9);
        }
        let step = match a.cholesky() {
            Some(ch) => ch.solve(&(-&jtr)),
            None => {
                damping *= 10.0;
                trace.push(terms_of(e0));
                continue;
            }
        };
        let trial = &theta + &step;
        let r_new = problem.residuals(&trial);
        let e_new = energy(&r_new);
        if !e_new.is_finite() {
            trace.push(terms_of(e0));
            return Err(diverged(&theta, trace, iterations));
        }
        let ssq_new = r_new.norm_squared();
        if ssq_new < ssq && e_new <= e0 {
            let rel = (e0 - e_new) / e0.max(f64::MIN_POSITIVE);
            theta = trial;
            r = r_new;
            e0 = e_new;
            ssq = ssq_new;
            damping = (damping / 10.0).max(1e-12);
            trace.push(terms_of(e0));
            if rel < opts.relative_tolerance {
                converged = true;
                reason = "relative energy change below tolerance".into();
                break;
            }
        } else {
            damping *= 10.0;
            trace.push(terms_of(e0));
        }
    }

    Ok(FitReport {
        code: code_of(&theta),
        trace,
        iterations,
        converged,
        stop_reason: reason,
        elapsed_secs: start.elapsed().as_secs_f64(),
    })
}
