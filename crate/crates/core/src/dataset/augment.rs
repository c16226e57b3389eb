//! In-plane rotation augmentation driven by the ear direction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::synthetic::{HELIX_INDEX, LOBE_INDEX};
use super::AnnotatedImage;
use crate::error::{arg, Error, Result};
use crate::image::Image;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub count: usize,
    /// Ear-direction angles are drawn uniformly from ±this many degrees.
    pub max_angle_deg: f64,
    pub lobe_index: usize,
    pub helix_index: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            count: 12,
            max_angle_deg: 60.0,
            lobe_index: LOBE_INDEX,
            helix_index: HELIX_INDEX,
        }
    }
}

/// Unit vector from the lobe landmark to the helix landmark.
pub fn ear_direction(landmarks: &[[f64; 2]], lobe: usize, helix: usize) -> Result<[f64; 2]> {
    if lobe == helix || lobe >= landmarks.len() || helix >= landmarks.len() {
        return Err(arg(format!("lobe/helix indices {lobe}/{helix} must be distinct and in range")));
    }
    let d = [landmarks[helix][0] - landmarks[lobe][0], landmarks[helix][1] - landmarks[lobe][1]];
    let n = d[0].hypot(d[1]);
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::Degenerate("lobe and helix landmarks coincide".into()));
    }
    Ok([d[0] / n, d[1] / n])
}

/// Signed angle in radians between a direction and the image's upward axis,
/// positive when the direction leans towards +x.
pub fn direction_angle(d: [f64; 2]) -> f64 {
    d[0].atan2(-d[1])
}

fn rotate_about(p: [f64; 2], c: [f64; 2], angle: f64) -> [f64; 2] {
    let (s, co) = angle.sin_cos();
    let (dx, dy) = (p[0] - c[0], p[1] - c[1]);
    [c[0] + co * dx - s * dy, c[1] + s * dx + co * dy]
}

/// Rotates an item by `angle` radians about the image centre. The ear
/// direction angle grows by `angle`. Pixels are resampled bilinearly with
/// edge-replicate padding; a ground-truth pose is updated to match.
pub fn rotate_item(item: &AnnotatedImage, angle: f64) -> AnnotatedImage {
    let (w, h) = item.image.dims();
    let c = [w as f64 / 2.0, h as f64 / 2.0];
    let image = Image::from_fn(w, h, |x, y| {
        let src = rotate_about([x as f64 + 0.5, y as f64 + 0.5], c, -angle);
        item.image.sample_clamped(src[0], src[1])
    });
    let landmarks = item.landmarks.iter().map(|&p| rotate_about(p, c, angle)).collect();
    let gt = item.gt.as_ref().map(|g| {
        let mut g = g.clone();
        g.pose.rotation[2] += angle;
        g.pose.translation = rotate_about(g.pose.translation, c, angle);
        g
    });
    AnnotatedImage {
        id: item.id.clone(),
        image,
        landmarks,
        gt,
    }
}

/// `cfg.count` rotated copies whose ear-direction angles are independent
/// uniform draws in `±cfg.max_angle_deg`. Output `i` gets id `<id>_rot<i>`.
pub fn augment(item: &AnnotatedImage, cfg: &AugmentConfig, seed: u64) -> Result<Vec<AnnotatedImage>> {
    if cfg.count == 0 {
        return Err(arg("augmentation count must be at least 1"));
    }
    if !(cfg.max_angle_deg.is_finite() && cfg.max_angle_deg >= 0.0) {
        return Err(arg("maximum augmentation angle must be finite and non-negative"));
    }
    let current = direction_angle(ear_direction(&item.landmarks, cfg.lobe_index, cfg.helix_index)?);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max = cfg.max_angle_deg.to_radians();
    Ok((0..cfg.count)
        .map(|i| {
            let target = rng.random_range(-max..=max);
            let mut out = rotate_item(item, target - current);
            out.id = format!("{}_rot{i:02}", item.id);
            out
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn item(w: usize, h: usize) -> AnnotatedImage {
        let landmarks: Vec<[f64; 2]> = (0..55)
            .map(|i| {
                let t = i as f64 * 0.37;
                [w as f64 / 2.0 + 10.0 * t.cos(), h as f64 / 2.0 + 15.0 * t.sin()]
            })
            .collect();
        AnnotatedImage {
            id: "a".into(),
            image: Image::from_fn(w, h, |x, y| [x as f64 / w as f64, y as f64 / h as f64, 0.5]),
            landmarks,
            gt: None,
        }
    }

    #[test]
    fn direction_examples() {
        let mut lm = vec![[0.0; 2]; 55];
        lm[1] = [0.0, -10.0];
        assert_eq!(ear_direction(&lm, 0, 1).unwrap(), [0.0, -1.0]);
        lm[1] = [3.0, -4.0];
        let d = ear_direction(&lm, 0, 1).unwrap();
        assert!((d[0] - 0.6).abs() < 1e-15 && (d[1] + 0.8).abs() < 1e-15);
        lm[1] = [0.0, 0.0];
        assert!(matches!(ear_direction(&lm, 0, 1), Err(Error::Degenerate(_))));
        assert!(ear_direction(&lm, 2, 2).is_err());
        assert!(ear_direction(&lm, 0, 55).is_err());
        assert_eq!(direction_angle([0.0, -1.0]), 0.0);
    }

    #[test]
    fn direction_is_equivariant_on_a_grid() {
        let it = item(64, 64);
        let d0 = direction_angle(ear_direction(&it.landmarks, 3, 17).unwrap());
        for k in 0..24 {
            let a = (k as f64 * 15.0 - 180.0).to_radians();
            let r = rotate_item(&it, a);
            let d = direction_angle(ear_direction(&r.landmarks, 3, 17).unwrap());
            let diff = (d - d0 - a).rem_euclid(std::f64::consts::TAU);
            assert!(diff.min(std::f64::consts::TAU - diff) < 1e-12, "k={k}");
        }
    }

    #[test]
    fn zero_rotation_is_identity() {
        let it = item(40, 30);
        let r = rotate_item(&it, 0.0);
        assert_eq!(r.landmarks, it.landmarks);
        for (a, b) in r.image.data().iter().zip(it.image.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn augment_hits_range_and_is_deterministic() {
        let it = item(48, 48);
        let cfg = AugmentConfig {
            lobe_index: 3,
            helix_index: 17,
            ..Default::default()
        };
        let a = augment(&it, &cfg, 9).unwrap();
        let b = augment(&it, &cfg, 9).unwrap();
        assert_eq!(a.len(), 12);
        assert_eq!(a, b);
        for o in &a {
            let ang = direction_angle(ear_direction(&o.landmarks, 3, 17).unwrap()).to_degrees();
            assert!((-60.0 - 1e-9..=60.0 + 1e-9).contains(&ang));
            assert_eq!(o.landmarks.len(), 55);
            assert!(o.id.starts_with("a_rot"));
        }
        assert!(augment(&it, &AugmentConfig { count: 0, ..cfg }, 1).is_err());
    }

    proptest! {
        #[test]
        fn landmarks_match_point_rotation(angle in -3.2f64..3.2) {
            let it = item(50, 70);
            let r = rotate_item(&it, angle);
            let (s, c) = angle.sin_cos();
            for (p, q) in it.landmarks.iter().zip(&r.landmarks) {
                let (dx, dy) = (p[0] - 25.0, p[1] - 35.0);
                let e = [25.0 + c * dx - s * dy, 35.0 + s * dx + c * dy];
                prop_assert!((e[0] - q[0]).abs() < 1e-9 && (e[1] - q[1]).abs() < 1e-9);
            }
        }
    }
}
