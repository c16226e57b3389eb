//! Run configuration: an optional TOML file with one table per command,
//! overridden field by field by command-line flags.
//!
//! ```toml
//! seed = 7            # default seed for every command
//! jobs = 4            # default worker count
//!
//! [synth]
//! count = 20
//! [synth.model]
//! n_vertices = 2000
//!
//! [fit]
//! preset = "without-landmarks"
//! [fit.adam]
//! max_iterations = 200
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use earmesh::dataset::{AugmentConfig, CorpusNoise, SyntheticModelConfig};
use earmesh::evaluation::default_thresholds;
use earmesh::fitting::{AdamOptions, LmOptions, LossWeights};
use serde::{Deserialize, Serialize};

use crate::Failure;

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub synth: SynthConfig,
    pub fit: FitConfig,
    #[serde(rename = "build-colour-model")]
    pub colour: ColourConfig,
    pub augment: AugmentCmdConfig,
    pub eval: EvalConfig,
    pub render: RenderConfig,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub count: usize,
    pub width: usize,
    pub height: usize,
    pub model: SyntheticModelConfig,
    pub noise: CorpusNoise,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: None,
            out: None,
            count: 50,
            width: 224,
            height: 224,
            model: SyntheticModelConfig::default(),
            noise: CorpusNoise::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub seed: Option<u64>,
    pub model: Option<PathBuf>,
    /// Single image mode.
    pub image: Option<PathBuf>,
    pub landmarks: Option<PathBuf>,
    /// Batch mode.
    pub manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub preset: String,
    /// Each given weight overrides the preset's.
    pub lambda_pix: Option<f64>,
    pub lambda_lm: Option<f64>,
    pub lambda_reg1: Option<f64>,
    pub lambda_reg2: Option<f64>,
    /// Fitting frame size. Inputs (or their crops) are resampled to it.
    pub width: usize,
    pub height: usize,
    pub edge_sigma: f64,
    pub lm: LmOptions,
    pub adam: AdamOptions,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            seed: None,
            model: None,
            image: None,
            landmarks: None,
            manifest: None,
            out: None,
            preset: "with-landmarks".into(),
            lambda_pix: None,
            lambda_lm: None,
            lambda_reg1: None,
            lambda_reg2: None,
            width: 224,
            height: 224,
            edge_sigma: 1.0,
            lm: LmOptions::default(),
            adam: AdamOptions::default(),
        }
    }
}

impl FitConfig {
    pub fn weights(&self) -> Result<LossWeights, Failure> {
        let mut w = LossWeights::preset(&self.preset)?;
        set(&mut w.pixel, self.lambda_pix);
        set(&mut w.landmark, self.lambda_lm);
        set(&mut w.reg_statistical, self.lambda_reg1);
        set(&mut w.reg_scale, self.lambda_reg2);
        w.validate()?;
        Ok(w)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColourConfig {
    pub seed: Option<u64>,
    pub model: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub k: usize,
    pub lm: LmOptions,
}

impl Default for ColourConfig {
    fn default() -> Self {
        Self {
            seed: None,
            model: None,
            manifest: None,
            out: None,
            k: 40,
            lm: LmOptions::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentCmdConfig {
    pub seed: Option<u64>,
    pub manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub count: usize,
    /// Ear-direction angles are drawn from ±this many degrees.
    pub range: f64,
    pub lobe_index: usize,
    pub helix_index: usize,
}

impl Default for AugmentCmdConfig {
    fn default() -> Self {
        let a = AugmentConfig::default();
        Self {
            seed: None,
            manifest: None,
            out: None,
            count: a.count,
            range: a.max_angle_deg,
            lobe_index: a.lobe_index,
            helix_index: a.helix_index,
        }
    }
}

impl AugmentCmdConfig {
    pub fn augment_config(&self) -> AugmentConfig {
        AugmentConfig {
            count: self.count,
            max_angle_deg: self.range,
            lobe_index: self.lobe_index,
            helix_index: self.helix_index,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub seed: Option<u64>,
    pub pred: Option<PathBuf>,
    pub gt: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub thresholds: Vec<f64>,
    pub overlays: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            seed: None,
            pred: None,
            gt: None,
            out: None,
            thresholds: default_thresholds(),
            overlays: false,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    pub seed: Option<u64>,
    pub model: Option<PathBuf>,
    /// Code vector JSON; the mean shape at the canonical pose when absent.
    pub code: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub width: usize,
    pub height: usize,
    pub edge_sigma: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            seed: None,
            model: None,
            code: None,
            out: None,
            width: 224,
            height: 224,
            edge_sigma: 1.0,
        }
    }
}

/// Overwrites `slot` when a flag was given.
pub fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

/// Like [`set`] for optional config entries.
pub fn set_opt<T>(slot: &mut Option<T>, flag: Option<T>) {
    if flag.is_some() {
        *slot = flag;
    }
}

/// Flag, then command table, then top-level seed, then 0.
pub fn resolve_seed(slot: &mut Option<u64>, flag: Option<u64>, top: Option<u64>) -> u64 {
    let s = flag.or(*slot).or(top).unwrap_or(0);
    *slot = Some(s);
    s
}

pub fn required<'a>(value: &'a Option<PathBuf>, what: &str) -> Result<&'a Path, Failure> {
    value
        .as_deref()
        .ok_or_else(|| Failure::usage(format!("missing {what} (flag or config entry)")))
}

/// TOML rendering of a resolved command configuration under `[name]`.
pub fn to_toml<T: Serialize>(name: &str, cfg: &T) -> Result<String, Failure> {
    let map = std::collections::BTreeMap::from([(name, cfg)]);
    toml::to_string(&map).map_err(|e| Failure::data(format!("config serialisation: {e}")))
}
