//! Normalised landmark error statistics, CED curves and report files.
//!
//! `report.json` holds an [`EvalReport`] (schema `eval/1`). `ced.csv` has a
//! `threshold,fraction` header and one row per CED sample; `errors.csv` has
//! `id,error` rows. Numbers are written in their shortest round-tripping
//! decimal form. The standard deviation is the population one (divide by n).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{arg, Error, Result};
use crate::fitting::landmark_loss;
use crate::image::Image;

pub const EVAL_SCHEMA: &str = "eval/1";

/// Threshold below which a fit counts as acceptable.
pub const ACCEPT_THRESHOLD: f64 = 0.1;
pub const TIGHT_THRESHOLD: f64 = 0.06;

/// Overlay marker colour, linear RGB.
pub const MARKER_COLOUR: [f64; 3] = [1.0, 0.0, 1.0];

/// Default CED thresholds: 0.00, 0.01, ..., 0.10.
pub fn default_thresholds() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 100.0).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CedPoint {
    pub threshold: f64,
    pub fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema: String,
    pub ids: Vec<String>,
    pub errors: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    pub fraction_below_0_1: f64,
    pub fraction_below_0_06: f64,
    pub ced: Vec<CedPoint>,
}

fn fraction_at_most(sorted: &[f64], t: f64) -> f64 {
    sorted.partition_point(|e| *e <= t) as f64 / sorted.len() as f64
}

impl EvalReport {
    /// Statistics of a list of errors. Every statistic is computed from the
    /// sorted errors so the result does not depend on input order.
    pub fn from_errors(ids: Vec<String>, errors: Vec<f64>, thresholds: &[f64]) -> Result<Self> {
        if errors.is_empty() {
            return Err(arg("cannot evaluate an empty list"));
        }
        if ids.len() != errors.len() {
            return Err(arg("one id per error is required"));
        }
        if errors.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return Err(arg("errors must be finite and non-negative"));
        }
        if thresholds.windows(2).any(|w| !(w[0] < w[1])) || thresholds.iter().any(|t| !t.is_finite()) {
            return Err(arg("CED thresholds must be finite and strictly increasing"));
        }
        let mut sorted = errors.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len() as f64;
        let mean = sorted.iter().sum::<f64>() / n;
        let std = (sorted.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n).sqrt();
        let mid = sorted.len() / 2;
        let median = if sorted.len() % 2 == 1 {
            sorted[mid]
        } else {
            0.5 * (sorted[mid - 1] + sorted[mid])
        };
        Ok(Self {
            schema: EVAL_SCHEMA.into(),
            ids,
            mean,
            std,
            median,
            fraction_below_0_1: fraction_at_most(&sorted, ACCEPT_THRESHOLD),
            fraction_below_0_06: fraction_at_most(&sorted, TIGHT_THRESHOLD),
            ced: thresholds
                .iter()
                .map(|&t| CedPoint {
                    threshold: t,
                    fraction: fraction_at_most(&sorted, t),
                })
                .collect(),
            errors,
        })
    }

    /// Fraction of items with error at most `t`.
    pub fn ced_at(&self, t: f64) -> f64 {
        let mut sorted = self.errors.clone();
        sorted.sort_by(f64::total_cmp);
        fraction_at_most(&sorted, t)
    }

    /// Checks the schema, fraction ranges, CED monotonicity and, when
    /// per-item errors are present, that the stored statistics match them.
    pub fn validate(&self) -> Result<()> {
        if self.schema != EVAL_SCHEMA {
            return Err(arg(format!("unsupported report schema {:?}", self.schema)));
        }
        let fracs = [self.fraction_below_0_1, self.fraction_below_0_06];
        if fracs.iter().chain(self.ced.iter().map(|c| &c.fraction)).any(|f| !(0.0..=1.0).contains(f)) {
            return Err(arg("fractions must lie in [0, 1]"));
        }
        if self.ced.windows(2).any(|w| w[1].threshold <= w[0].threshold || w[1].fraction < w[0].fraction) {
            return Err(arg("CED must be non-decreasing in increasing thresholds"));
        }
        if !self.errors.is_empty() {
            let thresholds: Vec<f64> = self.ced.iter().map(|c| c.threshold).collect();
            let again = Self::from_errors(self.ids.clone(), self.errors.clone(), &thresholds)?;
            if again != *self {
                return Err(arg("stored statistics disagree with the per-item errors"));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialises");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(text).map_err(|e| arg(format!("report JSON: {e}")))?;
        r.validate()?;
        Ok(r)
    }

    pub fn ced_csv(&self) -> String {
        let mut s = String::from("threshold,fraction\n");
        for c in &self.ced {
            s.push_str(&format!("{},{}\n", c.threshold, c.fraction));
        }
        s
    }

    pub fn errors_csv(&self) -> String {
        let mut s = String::from("id,error\n");
        for (id, e) in self.ids.iter().zip(&self.errors) {
            s.push_str(&format!("{id},{e}\n"));
        }
        s
    }
}

/// Per-item normalised landmark error with the default CED thresholds.
/// Items are named by position.
pub fn evaluate(predictions: &[Vec<[f64; 2]>], ground_truth: &[Vec<[f64; 2]>]) -> Result<EvalReport> {
    let ids = (0..predictions.len()).map(|i| i.to_string()).collect();
    evaluate_with(predictions, ground_truth, ids, &default_thresholds())
}

pub fn evaluate_with(
    predictions: &[Vec<[f64; 2]>],
    ground_truth: &[Vec<[f64; 2]>],
    ids: Vec<String>,
    thresholds: &[f64],
) -> Result<EvalReport> {
    if predictions.is_empty() {
        return Err(arg("cannot evaluate an empty list"));
    }
    if predictions.len() != ground_truth.len() {
        return Err(arg(format!(
            "{} predictions for {} ground-truth items",
            predictions.len(),
            ground_truth.len()
        )));
    }
    let errors = predictions
        .iter()
        .zip(ground_truth)
        .map(|(p, g)| landmark_loss(p, g))
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_errors(ids, errors, thresholds)
}

/// Draws a 3×3 [`MARKER_COLOUR`] square centred on the pixel containing each
/// point, clipped to the image.
pub fn draw_overlay(image: &Image, points: &[[f64; 2]]) -> Image {
    let mut out = image.clone();
    let (w, h) = (image.width() as i64, image.height() as i64);
    for p in points {
        if !(p[0].is_finite() && p[1].is_finite()) {
            continue;
        }
        let (cx, cy) = (p[0].floor() as i64, p[1].floor() as i64);
        for y in cy - 1..=cy + 1 {
            for x in cx - 1..=cx + 1 {
                if (0..w).contains(&x) && (0..h).contains(&y) {
                    out.set_pixel(x as usize, y as usize, MARKER_COLOUR);
                }
            }
        }
    }
    out
}

/// An overlay to write alongside a report.
pub struct Overlay<'a> {
    pub id: &'a str,
    pub image: &'a Image,
    pub points: &'a [[f64; 2]],
}

/// Writes `report.json`, `ced.csv`, `errors.csv` and `overlays/<id>.png` into
/// `dir`, returning the written paths.
pub fn emit_report(report: &EvalReport, dir: impl AsRef<Path>, overlays: &[Overlay<'_>]) -> Result<Vec<PathBuf>> {
    report.validate()?;
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for (name, text) in [
        ("report.json", report.to_json()),
        ("ced.csv", report.ced_csv()),
        ("errors.csv", report.errors_csv()),
    ] {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        written.push(p);
    }
    if !overlays.is_empty() {
        let od = dir.join("overlays");
        fs::create_dir_all(&od).map_err(|e| Error::io(&od, e))?;
        for o in overlays {
            let p = od.join(format!("{}.png", o.id));
            draw_overlay(o.image, o.points).write_png(&p)?;
            written.push(p);
        }
    }
    Ok(written)
}
