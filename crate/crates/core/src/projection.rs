//! Pose and scaled orthographic projection.
//!
//! Rotation convention: `R = R_z(roll) · R_y(azimuth) · R_x(elevation)`,
//! right-handed, acting on column vectors. Projection keeps the first two
//! rotated coordinates: `v = f · P_o · R · s + T`. The third rotated
//! coordinate is returned as depth; larger depth is farther from the viewer.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{arg, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    /// Azimuth, elevation, roll in radians.
    pub rotation: [f64; 3],
    /// Image-plane translation in pixels.
    pub translation: [f64; 2],
    /// Scale. Pixels per model unit when handed to [`project_sop`].
    pub scale: f64,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: [0.0; 3],
            translation: [0.0; 2],
            scale: 1.0,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.rotation.iter().chain(&self.translation).all(|v| v.is_finite())
            && self.scale.is_finite()
            && self.scale > 0.0
    }
}

/// Projected 2D vertices plus camera-space depth for z-buffering.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectedShape {
    pub points: Vec<[f64; 2]>,
    pub depth: Vec<f64>,
}

impl ProjectedShape {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn d_rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(0.0, 0.0, 0.0, 0.0, -s, -c, 0.0, c, -s)
}

fn d_rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, 0.0, c, 0.0, 0.0, 0.0, -c, 0.0, -s)
}

fn d_rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0)
}

/// Rotation matrix for (azimuth, elevation, roll).
pub fn rotation_from_euler(r: [f64; 3]) -> Matrix3<f64> {
    let [az, el, roll] = r;
    rot_z(roll) * rot_y(az) * rot_x(el)
}

/// Partial derivatives of [`rotation_from_euler`] with respect to
/// azimuth, elevation and roll, in that order.
pub fn rotation_derivatives(r: [f64; 3]) -> [Matrix3<f64>; 3] {
    let [az, el, roll] = r;
    let (rz, ry, rx) = (rot_z(roll), rot_y(az), rot_x(el));
    [
        rz * d_rot_y(az) * rx,
        rz * ry * d_rot_x(el),
        d_rot_z(roll) * ry * rx,
    ]
}

/// Scaled orthographic projection of every vertex.
pub fn project_sop(vertices: &[[f64; 3]], pose: &Pose) -> ProjectedShape {
    let r = rotation_from_euler(pose.rotation);
    let f = pose.scale;
    let [tx, ty] = pose.translation;
    let mut points = Vec::with_capacity(vertices.len());
    let mut depth = Vec::with_capacity(vertices.len());
    for v in vertices {
        let q = r * Vector3::new(v[0], v[1], v[2]);
        points.push([f * q.x + tx, f * q.y + ty]);
        depth.push(q.z);
    }
    ProjectedShape { points, depth }
}

/// Gathers the landmark rows `points[indices[i]]`.
pub fn select_landmarks(proj: &ProjectedShape, indices: &[u32]) -> Result<Vec<[f64; 2]>> {
    indices
        .iter()
        .map(|&i| {
            proj.points
                .get(i as usize)
                .copied()
                .ok_or_else(|| arg(format!("landmark index {i} out of range for {} vertices", proj.len())))
        })
        .collect()
}
