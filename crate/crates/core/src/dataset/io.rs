//! Landmark files, corpus manifests and crop handling.
//!
//! A landmark file holds one `x y` pair per line, 55 lines, in pixel
//! coordinates of its image. Blank lines, `#` comments and the
//! `version:` / `n_points:` / `{` / `}` lines of the common `.pts` layout are
//! skipped when reading.
//!
//! A manifest is JSON:
//!
//! ```json
//! {
//!   "schema": "manifest/1",
//!   "items": [
//!     { "id": "synth_00000", "image": "images/synth_00000.png",
//!       "landmarks": "landmarks/synth_00000.pts",
//!       "crop": [x, y, width, height],      // optional
//!       "gt_code": { ... } }                 // optional, synthetic data only
//!   ]
//! }
//! ```
//!
//! Relative paths are resolved against the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::AnnotatedImage;
use crate::error::{arg, Error, Result};
use crate::fitting::CodeVector;
use crate::image::Image;
use crate::model::NUM_LANDMARKS;

pub const MANIFEST_SCHEMA: &str = "manifest/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestItem {
    pub id: String,
    pub image: PathBuf,
    pub landmarks: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crop: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_code: Option<CodeVector>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub items: Vec<ManifestItem>,
}

impl Manifest {
    pub fn new(items: Vec<ManifestItem>) -> Self {
        Self {
            schema: MANIFEST_SCHEMA.into(),
            items,
        }
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::parse(path, e))?;
        if m.schema != MANIFEST_SCHEMA {
            return Err(Error::parse(path, format!("unsupported manifest schema {:?}", m.schema)));
        }
        Ok(m)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self).expect("manifest serialises");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

pub fn parse_pts(text: &str) -> std::result::Result<Vec<[f64; 2]>, String> {
    let mut out = Vec::with_capacity(NUM_LANDMARKS);
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty()
            || line.starts_with('#')
            || line.starts_with("version")
            || line.starts_with("n_points")
            || line == "{"
            || line == "}"
        {
            continue;
        }
        let vals: Vec<&str> = line.split_whitespace().collect();
        if vals.len() != 2 {
            return Err(format!("line {}: expected two numbers", n + 1));
        }
        let parse = |s: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| format!("line {}: bad number {s:?}", n + 1))
        };
        out.push([parse(vals[0])?, parse(vals[1])?]);
    }
    if out.len() != NUM_LANDMARKS {
        return Err(format!("{} points, expected {NUM_LANDMARKS}", out.len()));
    }
    Ok(out)
}

/// Formats points with the shortest round-tripping decimal representation.
pub fn format_pts(points: &[[f64; 2]]) -> String {
    points.iter().map(|p| format!("{} {}\n", p[0], p[1])).collect()
}

pub fn read_pts(path: impl AsRef<Path>) -> Result<Vec<[f64; 2]>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pts(&text).map_err(|m| Error::parse(path, m))
}

pub fn write_pts(path: impl AsRef<Path>, points: &[[f64; 2]]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_pts(points)).map_err(|e| Error::io(path, e))
}

/// A manifest entry loaded from disk, with its optional crop rectangle.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedItem {
    pub item: AnnotatedImage,
    pub crop: Option<[f64; 4]>,
}

/// Reads a manifest and every image and landmark file it lists.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<LoadedItem>> {
    let path = path.as_ref();
    let manifest = Manifest::read(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    manifest
        .items
        .iter()
        .map(|m| {
            let image = Image::read_png(base.join(&m.image))?;
            let landmarks = read_pts(base.join(&m.landmarks))?;
            Ok(LoadedItem {
                item: AnnotatedImage {
                    id: m.id.clone(),
                    image,
                    landmarks,
                    gt: m.gt_code.clone(),
                },
                crop: m.crop,
            })
        })
        .collect()
}

/// Writes `images/<id>.png`, `landmarks/<id>.pts` and `manifest.json` under
/// `dir`, returning the manifest.
pub fn save_corpus(items: &[AnnotatedImage], dir: impl AsRef<Path>) -> Result<Manifest> {
    let dir = dir.as_ref();
    for sub in ["images", "landmarks"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let mut entries = Vec::with_capacity(items.len());
    for it in items {
        let image = PathBuf::from("images").join(format!("{}.png", it.id));
        let landmarks = PathBuf::from("landmarks").join(format!("{}.pts", it.id));
        it.image.write_png(dir.join(&image))?;
        write_pts(dir.join(&landmarks), &it.landmarks)?;
        entries.push(ManifestItem {
            id: it.id.clone(),
            image,
            landmarks,
            crop: None,
            gt_code: it.gt.clone(),
        });
    }
    let manifest = Manifest::new(entries);
    manifest.write(dir.join("manifest.json"))?;
    Ok(manifest)
}

/// Axis-aligned map between original image pixels and a fitting frame:
/// `original = offset + scale ⊙ frame`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameTransform {
    pub offset: [f64; 2],
    pub scale: [f64; 2],
}

impl FrameTransform {
    pub fn to_frame(&self, p: [f64; 2]) -> [f64; 2] {
        [(p[0] - self.offset[0]) / self.scale[0], (p[1] - self.offset[1]) / self.scale[1]]
    }

    pub fn to_original(&self, p: [f64; 2]) -> [f64; 2] {
        [self.offset[0] + self.scale[0] * p[0], self.offset[1] + self.scale[1] * p[1]]
    }
}

/// Crops `item` to `crop` (`[x, y, width, height]`, default the whole image)
/// and resamples it bilinearly to `width × height`. Landmarks follow; the
/// returned transform maps frame coordinates back to the original image.
pub fn to_frame(
    item: &AnnotatedImage,
    crop: Option<[f64; 4]>,
    width: usize,
    height: usize,
) -> Result<(AnnotatedImage, FrameTransform)> {
    let (w0, h0) = item.image.dims();
    let crop = crop.unwrap_or([0.0, 0.0, w0 as f64, h0 as f64]);
    if crop.iter().any(|v| !v.is_finite()) || crop[2] <= 0.0 || crop[3] <= 0.0 || width == 0 || height == 0 {
        return Err(arg(format!("{}: invalid crop rectangle {crop:?}", item.id)));
    }
    let t = FrameTransform {
        offset: [crop[0], crop[1]],
        scale: [crop[2] / width as f64, crop[3] / height as f64],
    };
    let image = if (w0, h0) == (width, height) && t.offset == [0.0, 0.0] && t.scale == [1.0, 1.0] {
        item.image.clone()
    } else {
        Image::from_fn(width, height, |x, y| {
            let p = t.to_original([x as f64 + 0.5, y as f64 + 0.5]);
            item.image.sample_clamped(p[0], p[1])
        })
    };
    let out = AnnotatedImage {
        id: item.id.clone(),
        image,
        landmarks: item.landmarks.iter().map(|&p| t.to_frame(p)).collect(),
        gt: item.gt.clone(),
    };
    Ok((out, t))
}
