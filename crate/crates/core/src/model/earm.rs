//! The `EARM v1` model container.
//!
//! ```text
//! offset  size  content
//! 0       4     magic "EARM"
//! 4       4     u32 LE format version (1)
//! 8       8     u64 LE byte length H of the JSON header
//! 16      H     UTF-8 JSON header (see `Header`)
//! 16+H    ...   data blocks, back to back, in the order listed in `header.blocks`
//! ```
//!
//! Every block is a flat little-endian array: `f64` for `mean_shape` (3N),
//! `shape_basis` (3N·K_full, column-major), `recover_matrix` (K_full·K_white,
//! column-major), `mean_colour` (3N) and `colour_basis` (3N·K_c, column-major);
//! `u32` for `triangles` (3F). The colour blocks are present only when the
//! header's `colour` field is non-null. Readers reject any block whose
//! declared count disagrees with the header dimensions, and any trailing or
//! missing bytes.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::morphable::{ColourModel, MorphableModel};
use super::pca::WhiteningTransform;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"EARM";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColourHeader {
    pub k: usize,
    pub coverage: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockHeader {
    pub name: String,
    pub dtype: String,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format: String,
    pub version: u32,
    pub n_vertices: usize,
    pub k_full: usize,
    pub k_white: usize,
    pub coverage: f64,
    pub n_triangles: usize,
    pub landmark_indices: Vec<u32>,
    pub colour: Option<ColourHeader>,
    pub blocks: Vec<BlockHeader>,
}

/// A shape model plus its optional colour model, as stored on disk.
#[derive(Clone, Debug)]
pub struct ModelBundle {
    pub shape: MorphableModel,
    pub colour: Option<ColourModel>,
}

impl ModelBundle {
    pub fn to_bytes(&self) -> Vec<u8> {
        let s = &self.shape;
        let n = s.n_vertices();
        let mut blocks = vec![
            block("mean_shape", "f64", 3 * n),
            block("shape_basis", "f64", 3 * n * s.k_full()),
            block("recover_matrix", "f64", s.k_full() * s.k_white()),
            block("triangles", "u32", 3 * s.triangles().len()),
        ];
        if let Some(c) = &self.colour {
            blocks.push(block("mean_colour", "f64", 3 * n));
            blocks.push(block("colour_basis", "f64", 3 * n * c.k()));
        }
        let header = Header {
            format: "EARM".into(),
            version: VERSION,
            n_vertices: n,
            k_full: s.k_full(),
            k_white: s.k_white(),
            coverage: s.whitening().coverage(),
            n_triangles: s.triangles().len(),
            landmark_indices: s.landmark_indices().to_vec(),
            colour: self.colour.as_ref().map(|c| ColourHeader {
                k: c.k(),
                coverage: c.coverage(),
            }),
            blocks,
        };
        let json = serde_json::to_vec(&header).expect("header serialises");

        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        put_f64s(&mut out, s.mean_shape().as_slice());
        put_f64s(&mut out, s.shape_basis().as_slice());
        put_f64s(&mut out, s.whitening().recover_matrix().as_slice());
        for t in s.triangles() {
            for i in t {
                out.extend_from_slice(&i.to_le_bytes());
            }
        }
        if let Some(c) = &self.colour {
            put_f64s(&mut out, c.mean_colour().as_slice());
            put_f64s(&mut out, c.colour_basis().as_slice());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fmt = |m: String| Error::ModelFormat(m);
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(fmt("missing EARM magic".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(fmt(format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body_start = 16usize
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| fmt("header length exceeds file size".into()))?;
        let header: Header = serde_json::from_slice(&bytes[16..body_start])
            .map_err(|e| fmt(format!("header JSON: {e}")))?;

        let n = header.n_vertices;
        let mut expected = vec![
            ("mean_shape", "f64", 3 * n),
            ("shape_basis", "f64", 3 * n * header.k_full),
            ("recover_matrix", "f64", header.k_full * header.k_white),
            ("triangles", "u32", 3 * header.n_triangles),
        ];
        if let Some(c) = &header.colour {
            expected.push(("mean_colour", "f64", 3 * n));
            expected.push(("colour_basis", "f64", 3 * n * c.k));
        }
        if header.blocks.len() != expected.len() {
            return Err(fmt(format!(
                "expected {} blocks, header lists {}",
                expected.len(),
                header.blocks.len()
            )));
        }
        for (b, (name, dtype, count)) in header.blocks.iter().zip(&expected) {
            if b.name != *name || b.dtype != *dtype || b.count != *count {
                return Err(fmt(format!(
                    "block {:?} ({}, {}) does not match expected {name} ({dtype}, {count})",
                    b.name, b.dtype, b.count
                )));
            }
        }
        let total: usize = expected
            .iter()
            .map(|(_, d, c)| c * if *d == "u32" { 4 } else { 8 })
            .sum();
        if bytes.len() - body_start != total {
            return Err(fmt(format!(
                "data section is {} bytes, header implies {total}",
                bytes.len() - body_start
            )));
        }

        let mut cur = &bytes[body_start..];
        let mean = DVector::from_vec(take_f64s(&mut cur, 3 * n));
        let basis = DMatrix::from_vec(3 * n, header.k_full, take_f64s(&mut cur, 3 * n * header.k_full));
        let recover = DMatrix::from_vec(
            header.k_full,
            header.k_white,
            take_f64s(&mut cur, header.k_full * header.k_white),
        );
        let tri_flat = take_u32s(&mut cur, 3 * header.n_triangles);
        let triangles = tri_flat.chunks_exact(3).map(|t| [t[0], t[1], t[2]]).collect();

        let whitening = WhiteningTransform::new(recover, header.coverage)?;
        let shape = MorphableModel::new(mean, basis, triangles, whitening, header.landmark_indices)?;
        let colour = match &header.colour {
            Some(c) => {
                let mean_c = DVector::from_vec(take_f64s(&mut cur, 3 * n));
                let basis_c = DMatrix::from_vec(3 * n, c.k, take_f64s(&mut cur, 3 * n * c.k));
                Some(ColourModel::new(mean_c, basis_c, c.coverage)?)
            }
            None => None,
        };
        Ok(Self { shape, colour })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn block(name: &str, dtype: &str, count: usize) -> BlockHeader {
    BlockHeader {
        name: name.into(),
        dtype: dtype.into(),
        count,
    }
}

fn put_f64s(out: &mut Vec<u8>, v: &[f64]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn take_f64s(cur: &mut &[u8], count: usize) -> Vec<f64> {
    let (head, tail) = cur.split_at(count * 8);
    *cur = tail;
    head.chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect()
}

fn take_u32s(cur: &mut &[u8], count: usize) -> Vec<u32> {
    let (head, tail) = cur.split_at(count * 4);
    *cur = tail;
    head.chunks_exact(4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
        .collect()
}
