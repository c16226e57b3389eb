//! Losses and the two optimisers: Levenberg–Marquardt on landmarks alone and
//! a first-order photometric refinement of the full code vector.

mod decoder;
mod landmarks;
mod loss;
mod photometric;

pub use decoder::{canonical_pose, Decoded, Decoder};
pub use landmarks::{default_landmark_init, fit_landmarks, LmOptions};
pub use loss::{
    landmark_energy, landmark_loss, pixel_loss, reg_scale, reg_statistical, total_loss, LossEval,
    PixelLoss,
};
pub use photometric::{
    centred_pose, fit_image, fit_photometric, pose_grid_init, AdamOptions, StepScales, GRID_ROLLS_DEG, GRID_SCALES,
};

use serde::{Deserialize, Serialize};

use crate::error::{arg, Result};
use crate::projection::Pose;

/// The optimisation variable: pose plus whitened shape and colour parameters.
///
/// `pose.scale` is relative to the model's canonical frame scale (see
/// [`Decoder::unit_scale`]), so `1.0` means the mean shape spans 60% of the
/// shorter image side.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodeVector {
    pub pose: Pose,
    pub shape: Vec<f64>,
    pub colour: Vec<f64>,
}

/// Number of pose entries at the start of the flattened code vector:
/// azimuth, elevation, roll, tx, ty, scale.
pub const POSE_DIM: usize = 6;

impl CodeVector {
    pub fn zeros(pose: Pose, k_shape: usize, k_colour: usize) -> Self {
        Self {
            pose,
            shape: vec![0.0; k_shape],
            colour: vec![0.0; k_colour],
        }
    }

    pub fn len(&self) -> usize {
        POSE_DIM + self.shape.len() + self.colour.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn flatten(&self) -> Vec<f64> {
        let p = &self.pose;
        let mut out = Vec::with_capacity(self.len());
        out.extend_from_slice(&p.rotation);
        out.extend_from_slice(&p.translation);
        out.push(p.scale);
        out.extend_from_slice(&self.shape);
        out.extend_from_slice(&self.colour);
        out
    }

    pub fn from_flat(flat: &[f64], k_shape: usize, k_colour: usize) -> Result<Self> {
        if flat.len() != POSE_DIM + k_shape + k_colour {
            return Err(arg(format!(
                "flat code vector has length {}, expected {}",
                flat.len(),
                POSE_DIM + k_shape + k_colour
            )));
        }
        Ok(Self {
            pose: Pose {
                rotation: [flat[0], flat[1], flat[2]],
                translation: [flat[3], flat[4]],
                scale: flat[5],
            },
            shape: flat[POSE_DIM..POSE_DIM + k_shape].to_vec(),
            colour: flat[POSE_DIM + k_shape..].to_vec(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.flatten().iter().all(|v| v.is_finite())
    }
}

/// Weights of the four loss terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub pixel: f64,
    pub landmark: f64,
    pub reg_statistical: f64,
    pub reg_scale: f64,
}

impl LossWeights {
    /// λ_pix = 10, λ_lm = 1, λ_reg1 = 0.05, λ_reg2 = 0.
    pub const WITH_LANDMARKS: Self = Self {
        pixel: 10.0,
        landmark: 1.0,
        reg_statistical: 5e-2,
        reg_scale: 0.0,
    };

    /// λ_pix = 2, λ_lm = 0, λ_reg1 = 0.05, λ_reg2 = 100.
    pub const WITHOUT_LANDMARKS: Self = Self {
        pixel: 2.0,
        landmark: 0.0,
        reg_statistical: 5e-2,
        reg_scale: 100.0,
    };

    pub const PRESET_NAMES: [&'static str; 2] = ["with-landmarks", "without-landmarks"];

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "with-landmarks" => Ok(Self::WITH_LANDMARKS),
            "without-landmarks" => Ok(Self::WITHOUT_LANDMARKS),
            other => Err(arg(format!(
                "unknown weight preset {other:?}; expected one of {:?}",
                Self::PRESET_NAMES
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.pixel, self.landmark, self.reg_statistical, self.reg_scale];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(arg("loss weights must be finite and non-negative"));
        }
        if all.iter().all(|w| *w == 0.0) {
            return Err(arg("at least one loss weight must be positive"));
        }
        Ok(())
    }

    /// Reads weights from TOML. Keys live at the top level or under a
    /// `[weights]` table:
    ///
    /// ```toml
    /// [weights]
    /// preset = "without-landmarks"   # optional starting point
    /// lambda_pix = 2.0               # each key overrides the preset
    /// lambda_lm = 0.0
    /// lambda_reg1 = 0.05
    /// lambda_reg2 = 100.0
    /// ```
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let value: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| arg(format!("weights TOML: {e}")))?;
        let table = match value.get("weights") {
            Some(toml::Value::Table(t)) => t.clone(),
            Some(_) => return Err(arg("`weights` must be a table")),
            None => value,
        };
        Self::from_table(&table)
    }

    pub(crate) fn from_table(table: &toml::Table) -> Result<Self> {
        let mut w = match table.get("preset") {
            Some(toml::Value::String(name)) => Self::preset(name)?,
            Some(_) => return Err(arg("`preset` must be a string")),
            None => Self::WITH_LANDMARKS,
        };
        let num = |key: &str| -> Result<Option<f64>> {
            match table.get(key) {
                None => Ok(None),
                Some(toml::Value::Float(f)) => Ok(Some(*f)),
                Some(toml::Value::Integer(i)) => Ok(Some(*i as f64)),
                Some(_) => Err(arg(format!("`{key}` must be a number"))),
            }
        };
        if let Some(v) = num("lambda_pix")? {
            w.pixel = v;
        }
        if let Some(v) = num("lambda_lm")? {
            w.landmark = v;
        }
        if let Some(v) = num("lambda_reg1")? {
            w.reg_statistical = v;
        }
        if let Some(v) = num("lambda_reg2")? {
            w.reg_scale = v;
        }
        w.validate()?;
        Ok(w)
    }
}

/// Individual loss values at one optimiser iterate.
///
/// For landmark-only fits `total` and `landmark` both hold `E₀` in pixels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub total: f64,
    pub pixel: f64,
    pub landmark: f64,
    pub reg_statistical: f64,
    pub reg_scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub code: CodeVector,
    /// One entry for the initial state and one per iteration.
    pub trace: Vec<LossTerms>,
    pub iterations: usize,
    pub converged: bool,
    pub stop_reason: String,
    /// Wall-clock seconds. Not serialised so that written reports are
    /// reproducible byte for byte.
    #[serde(skip)]
    pub elapsed_secs: f64,
}

impl FitReport {
    pub fn final_terms(&self) -> LossTerms {
        *self.trace.last().expect("trace always holds the initial state")
    }
}
