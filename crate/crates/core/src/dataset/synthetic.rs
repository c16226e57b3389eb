//! Synthetic ear-like morphable model and ground-truth corpus.
//!
//! # Base surface
//!
//! A `rows × cols` grid over `(u, v) ∈ [-1, 1]²` is mapped onto the unit disk
//! with the elliptical square-to-disk map `x = u·√(1 − v²/2)`,
//! `y = v·√(1 − u²/2)`, then scaled to `X = 0.32·x`, `Y = 0.5·y` (so the mean
//! shape is one unit tall, y pointing down the image). With
//! `ρ² = x² + y²` the depth (positive away from the camera) is
//!
//! ```text
//! z = -0.12·√(1 − ρ²)                        half-ellipsoid bulge
//!     - 0.05·exp(-((ρ − 0.88)/0.07)²)         helix ridge along the rim
//!     + 0.10·exp(-‖(X, Y) − (0.03, 0.05)‖²/0.12²)   concha depression
//!     + 0.15·X²                               backward bend
//! ```
//!
//! `rows = ⌈√n⌉` and `cols = ⌈n/rows⌉`, so the vertex count is `n` rounded up
//! to a full grid. Each grid cell is split into two triangles.
//!
//! # Shape and colour spaces
//!
//! Deformation columns are random combinations of separable cosine modes
//! `cos(aπ(x+1)/2)·cos(bπ(y+1)/2)` with weights falling as `1/(1 + a² + b²)`,
//! drawn independently for each coordinate and orthonormalised by QR. Column
//! `j` gets standard deviation `σ₁·ρʲ` with `σ₁ = leading_sigma·√N`. The
//! colour basis is built the same way over RGB.
//!
//! The base surface is about one unit tall. With the default
//! `leading_sigma = 0.0173` a unit draw of the first shape mode moves each
//! coordinate by 1% of the ear height in RMS, roughly what a 60 mm ear with a
//! leading eigenvalue of 8×10³ mm² over 7111 vertices gives. The default decay
//! 0.866 puts a quarter of the variance in that mode.
//!
//! The mean colour is a skin tone, darker inside the concha and slightly
//! brighter on the helix ridge.
//!
//! # Landmarks
//!
//! 55 points are placed on the base surface at fixed elliptical polar
//! coordinates `(ρ, θ)` with `X = 0.32ρ·cos θ`, `Y = 0.5ρ·sin θ` and snapped
//! to the nearest unused vertex:
//!
//! | indices | region     | placement                                      |
//! |---------|------------|------------------------------------------------|
//! | 0–19    | helix      | ρ = 0.92, θ from −150° over the top to +60°     |
//! | 20–29   | antihelix  | ρ = 0.6, θ from −120° to +40°                   |
//! | 30–39   | concha     | ring of radius 0.09 × 0.12 around the concha    |
//! | 40–44   | tragus     | X = −0.26, Y from 0 to 0.15                     |
//! | 45–54   | lobe       | ρ ∈ {0.85, 0.7}, θ ∈ 70°…120°                   |

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::AnnotatedImage;
use crate::error::{arg, Error, Result};
use crate::fitting::{centred_pose, CodeVector, Decoder};
use crate::model::pca::fix_sign;
use crate::model::{ColourModel, ModelBundle, MorphableModel, WhiteningTransform, NUM_LANDMARKS};
use crate::projection::Pose;
use crate::raster::RasterConfig;

/// Default landmark indices for [`super::ear_direction`]: the lowest lobe
/// point and the topmost helix point of the table above.
pub const LOBE_INDEX: usize = 47;
pub const HELIX_INDEX: usize = 5;

const HALF_WIDTH: f64 = 0.32;
const HALF_HEIGHT: f64 = 0.5;
const CONCHA: [f64; 2] = [0.03, 0.05];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticModelConfig {
    /// Minimum vertex count; rounded up to a full grid.
    pub n_vertices: usize,
    pub k_full: usize,
    /// Whitened shape dimensions kept (capped at `k_full`).
    pub k_white: usize,
    pub k_colour: usize,
    /// Geometric decay ρ of the standard deviations.
    pub decay: f64,
    /// Leading shape standard deviation divided by `√N`.
    pub leading_sigma: f64,
    /// Leading colour standard deviation divided by `√(3N)`.
    pub colour_sigma: f64,
}

impl Default for SyntheticModelConfig {
    fn default() -> Self {
        Self {
            n_vertices: 1600,
            k_full: 60,
            k_white: 40,
            k_colour: 40,
            decay: 0.866,
            leading_sigma: 0.0173,
            colour_sigma: 0.04,
        }
    }
}

/// Grid dimensions used for `n` requested vertices.
pub fn grid_dims(n: usize) -> (usize, usize) {
    let rows = (n as f64).sqrt().ceil() as usize;
    (rows, n.div_ceil(rows))
}

fn depth(x: f64, y: f64) -> f64 {
    let (xs, ys) = (x / HALF_WIDTH, y / HALF_HEIGHT);
    let rho = (xs * xs + ys * ys).sqrt().min(1.0);
    let dc = (x - CONCHA[0]).powi(2) + (y - CONCHA[1]).powi(2);
    -0.12 * (1.0 - rho * rho).sqrt() - 0.05 * (-((rho - 0.88) / 0.07).powi(2)).exp()
        + 0.10 * (-dc / 0.0144).exp()
        + 0.15 * x * x
}

fn landmark_targets() -> Vec<[f64; 2]> {
    let polar = |rho: f64, deg: f64| {
        let t = deg.to_radians();
        [HALF_WIDTH * rho * t.cos(), HALF_HEIGHT * rho * t.sin()]
    };
    let mut out = Vec::with_capacity(NUM_LANDMARKS);
    for i in 0..20 {
        out.push(polar(0.92, -150.0 + 210.0 * i as f64 / 19.0));
    }
    for i in 0..10 {
        out.push(polar(0.6, -120.0 + 160.0 * i as f64 / 9.0));
    }
    for i in 0..10 {
        let t = (36.0 * i as f64).to_radians();
        out.push([CONCHA[0] + 0.09 * t.cos(), CONCHA[1] + 0.12 * t.sin()]);
    }
    for i in 0..5 {
        out.push([-0.26, 0.15 * i as f64 / 4.0]);
    }
    for rho in [0.85, 0.7] {
        for i in 0..5 {
            out.push(polar(rho, 70.0 + 12.5 * i as f64));
        }
    }
    out
}

/// Random smooth fields over the base positions, `channels` values per
/// vertex, orthonormalised. Returns `3N × k` (or `channels·N × k`).
fn smooth_basis(xy: &[[f64; 2]], channels: usize, k: usize, rng: &mut ChaCha8Rng) -> Result<DMatrix<f64>> {
    let n = xy.len();
    let rows = channels * n;
    if k > rows {
        return Err(arg(format!("{k} basis columns requested for {rows} coordinates")));
    }
    let mut order = 3;
    while channels * order * order < 2 * k {
        order += 1;
    }
    // Mode values per vertex, shared by all columns.
    let mut modes = Vec::with_capacity(order * order);
    for a in 0..order {
        for b in 0..order {
            let w = 1.0 / (1.0 + (a * a + b * b) as f64);
            let vals: Vec<f64> = xy
                .iter()
                .map(|p| {
                    let u = (p[0] / HALF_WIDTH).clamp(-1.0, 1.0);
                    let v = (p[1] / HALF_HEIGHT).clamp(-1.0, 1.0);
                    w * (a as f64 * std::f64::consts::PI * (u + 1.0) / 2.0).cos()
                        * (b as f64 * std::f64::consts::PI * (v + 1.0) / 2.0).cos()
                })
                .collect();
            modes.push(vals);
        }
    }
    let mut raw = DMatrix::zeros(rows, k);
    for j in 0..k {
        for c in 0..channels {
            for m in &modes {
                let coef: f64 = rng.sample(StandardNormal);
                for (i, val) in m.iter().enumerate() {
                    raw[(channels * i + c, j)] += coef * val;
                }
            }
        }
    }
    let q = raw.qr().q();
    let mut basis = DMatrix::zeros(rows, k);
    for j in 0..k {
        let mut col: DVector<f64> = q.column(j).into_owned();
        fix_sign(&mut col);
        basis.set_column(j, &col);
    }
    Ok(basis)
}

/// Builds the synthetic shape and colour model described in the module docs.
pub fn generate_synthetic_model(cfg: &SyntheticModelConfig, seed: u64) -> Result<ModelBundle> {
    if cfg.n_vertices < 100 {
        return Err(arg("synthetic model needs at least 100 vertices"));
    }
    if cfg.k_full == 0 || cfg.k_colour == 0 || cfg.k_white == 0 {
        return Err(arg("basis sizes must be positive"));
    }
    if !(cfg.decay > 0.0 && cfg.decay <= 1.0) || !(cfg.leading_sigma > 0.0) || !(cfg.colour_sigma > 0.0) {
        return Err(arg("decay must lie in (0, 1] and sigmas must be positive"));
    }
    let (rows, cols) = grid_dims(cfg.n_vertices);
    let n = rows * cols;

    let mut xy = Vec::with_capacity(n);
    for r in 0..rows {
        let v = -1.0 + 2.0 * r as f64 / (rows - 1) as f64;
        for c in 0..cols {
            let u = -1.0 + 2.0 * c as f64 / (cols - 1) as f64;
            let x = u * (1.0 - v * v / 2.0).sqrt();
            let y = v * (1.0 - u * u / 2.0).sqrt();
            xy.push([HALF_WIDTH * x, HALF_HEIGHT * y]);
        }
    }
    let mean_shape = DVector::from_iterator(3 * n, xy.iter().flat_map(|p| [p[0], p[1], depth(p[0], p[1])]));

    let mut triangles = Vec::with_capacity(2 * (rows - 1) * (cols - 1));
    for r in 0..rows - 1 {
        for c in 0..cols - 1 {
            let i = (r * cols + c) as u32;
            let right = i + 1;
            let down = i + cols as u32;
            triangles.push([i, right, down + 1]);
            triangles.push([i, down + 1, down]);
        }
    }

    let mut landmarks: Vec<u32> = Vec::with_capacity(NUM_LANDMARKS);
    let mut used = vec![false; n];
    for t in landmark_targets() {
        let best = (0..n)
            .filter(|&i| !used[i])
            .min_by(|&a, &b| {
                let da = (xy[a][0] - t[0]).powi(2) + (xy[a][1] - t[1]).powi(2);
                let db = (xy[b][0] - t[0]).powi(2) + (xy[b][1] - t[1]).powi(2);
                da.total_cmp(&db)
            })
            .expect("more vertices than landmarks");
        used[best] = true;
        landmarks.push(best as u32);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape_basis = smooth_basis(&xy, 3, cfg.k_full, &mut rng)?;
    let sigma1 = cfg.leading_sigma * (n as f64).sqrt();
    let variances: Vec<f64> = (0..cfg.k_full).map(|j| (sigma1 * cfg.decay.powi(j as i32)).powi(2)).collect();
    let whitening = WhiteningTransform::from_variances(&variances, cfg.k_white.min(cfg.k_full))?;
    let shape = MorphableModel::new(mean_shape, shape_basis, triangles, whitening, landmarks)?;

    let colour_basis = smooth_basis(&xy, 3, cfg.k_colour, &mut rng)?;
    let csigma1 = cfg.colour_sigma * ((3 * n) as f64).sqrt();
    let scaled = DMatrix::from_fn(3 * n, cfg.k_colour, |i, j| {
        colour_basis[(i, j)] * csigma1 * cfg.decay.powi(j as i32)
    });
    let mean_colour = DVector::from_iterator(
        3 * n,
        xy.iter().flat_map(|p| {
            let dc = (p[0] - CONCHA[0]).powi(2) + (p[1] - CONCHA[1]).powi(2);
            let (xs, ys) = (p[0] / HALF_WIDTH, p[1] / HALF_HEIGHT);
            let rho = (xs * xs + ys * ys).sqrt().min(1.0);
            let shade = 1.0 - 0.45 * (-dc / 0.0144).exp() + 0.12 * (-((rho - 0.88) / 0.07).powi(2)).exp()
                - 0.15 * rho * rho;
            [0.78 * shade, 0.52 * shade, 0.42 * shade]
        }),
    );
    let colour = ColourModel::new(mean_colour, scaled, 1.0)?;
    Ok(ModelBundle {
        shape,
        colour: Some(colour),
    })
}

/// Noise settings for [`render_synthetic_corpus`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusNoise {
    /// Standard deviation of the whitened parameter draws (before
    /// truncation at ±2.5).
    pub param_sigma: f64,
    /// Gaussian noise added to every pixel channel (result clamped to [0, 1]).
    pub pixel_sigma: f64,
    /// Gaussian noise added to every landmark coordinate, in pixels.
    pub landmark_sigma: f64,
}

impl Default for CorpusNoise {
    fn default() -> Self {
        Self {
            param_sigma: 1.0,
            pixel_sigma: 0.0,
            landmark_sigma: 0.0,
        }
    }
}

/// Truncation bound for parameter draws.
pub const PARAM_TRUNCATION: f64 = 2.5;
/// Pose ranges of corpus draws.
pub const MAX_ROLL_DEG: f64 = 30.0;
pub const MAX_TILT_DEG: f64 = 15.0;
pub const SCALE_RANGE: [f64; 2] = [0.8, 1.2];
/// Maximum centre offset as a fraction of the frame size.
pub const MAX_SHIFT: f64 = 0.05;

fn truncated_normal(rng: &mut impl Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    loop {
        let z: f64 = rng.sample(StandardNormal);
        let v = sigma * z;
        if v.abs() <= PARAM_TRUNCATION {
            return v;
        }
    }
}

/// Draws a code vector: parameters from a normal truncated at ±2.5, azimuth
/// and elevation within ±15°, roll within ±30°, relative scale in
/// [0.8, 1.2] and the mean-shape centroid within 5% of the frame centre.
pub fn sample_code_vector(dec: &Decoder<'_>, param_sigma: f64, rng: &mut impl Rng) -> CodeVector {
    let tilt = MAX_TILT_DEG.to_radians();
    let roll = MAX_ROLL_DEG.to_radians();
    let rotation = [
        rng.random_range(-tilt..=tilt),
        rng.random_range(-tilt..=tilt),
        rng.random_range(-roll..=roll),
    ];
    let scale = rng.random_range(SCALE_RANGE[0]..=SCALE_RANGE[1]);
    let shift = [
        rng.random_range(-MAX_SHIFT..=MAX_SHIFT) * dec.raster.width as f64,
        rng.random_range(-MAX_SHIFT..=MAX_SHIFT) * dec.raster.height as f64,
    ];
    let shape = (0..dec.shape.k_white()).map(|_| truncated_normal(rng, param_sigma)).collect();
    let colour = (0..dec.colour.k()).map(|_| truncated_normal(rng, param_sigma)).collect();
    let centred = centred_pose(dec, rotation, scale);
    CodeVector {
        pose: Pose {
            translation: [centred.translation[0] + shift[0], centred.translation[1] + shift[1]],
            ..centred
        },
        shape,
        colour,
    }
}

/// Renders `count` items with ground-truth code vectors. Item `i` depends only
/// on `seed` and `i`.
pub fn render_synthetic_corpus(
    bundle: &ModelBundle,
    raster: &RasterConfig,
    count: usize,
    noise: &CorpusNoise,
    seed: u64,
) -> Result<Vec<AnnotatedImage>> {
    if count == 0 {
        return Err(arg("corpus size must be at least 1"));
    }
    if [noise.param_sigma, noise.pixel_sigma, noise.landmark_sigma]
        .iter()
        .any(|s| !(s.is_finite() && *s >= 0.0))
    {
        return Err(arg("noise levels must be finite and non-negative"));
    }
    let colour = bundle
        .colour
        .as_ref()
        .ok_or_else(|| Error::Corpus("model has no colour component".into()))?;
    let dec = Decoder::new(&bundle.shape, colour, *raster)?;
    (0..count).map(|i| render_item(&dec, noise, seed, i)).collect()
}

/// One corpus item; see [`render_synthetic_corpus`].
pub fn render_item(dec: &Decoder<'_>, noise: &CorpusNoise, seed: u64, index: usize) -> Result<AnnotatedImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    for _ in 0..1000 {
        let code = sample_code_vector(dec, noise.param_sigma, &mut rng);
        let mut landmarks = dec.landmarks(&code)?;
        let mut image = dec.render(&code)?.image;
        if noise.pixel_sigma > 0.0 {
            for v in image.data_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *v = (*v + noise.pixel_sigma * z).clamp(0.0, 1.0);
            }
        }
        if noise.landmark_sigma > 0.0 {
            for p in &mut landmarks {
                for c in p.iter_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    *c += noise.landmark_sigma * z;
                }
            }
        }
        let item = AnnotatedImage {
            id: format!("synth_{index:05}"),
            image,
            landmarks,
            gt: Some(code),
        };
        if item.validate().is_ok() {
            return Ok(item);
        }
    }
    Err(Error::Corpus(format!("could not place item {index} inside the frame")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fitting::{total_loss, LossWeights};
    use crate::model::coverage_of;
    use crate::projection::{project_sop, select_landmarks};

    fn small() -> SyntheticModelConfig {
        SyntheticModelConfig {
            n_vertices: 400,
            ..Default::default()
        }
    }

    #[test]
    fn vertex_count_rounds_up() {
        assert_eq!(grid_dims(100), (10, 10));
        assert_eq!(grid_dims(101), (11, 10));
        let b = generate_synthetic_model(
            &SyntheticModelConfig {
                n_vertices: 150,
                ..small()
            },
            1,
        )
        .unwrap();
        assert_eq!(b.shape.n_vertices(), 13 * 12);
        assert!(generate_synthetic_model(&SyntheticModelConfig { n_vertices: 99, ..small() }, 1).is_err());
    }

    #[test]
    fn deterministic_bytes() {
        let a = generate_synthetic_model(&small(), 3).unwrap().to_bytes();
        let b = generate_synthetic_model(&small(), 3).unwrap().to_bytes();
        let c = generate_synthetic_model(&small(), 4).unwrap().to_bytes();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn mean_mesh_has_no_degenerate_triangles() {
        for n in [100, 400, 1600] {
            let b = generate_synthetic_model(&SyntheticModelConfig { n_vertices: n, ..small() }, 2).unwrap();
            let m = b.shape.mean_shape();
            for t in b.shape.triangles() {
                let p = |i: u32| nalgebra::Vector3::new(m[3 * i as usize], m[3 * i as usize + 1], m[3 * i as usize + 2]);
                let area = 0.5 * (p(t[1]) - p(t[0])).cross(&(p(t[2]) - p(t[0]))).norm();
                assert!(area > 1e-10, "n={n} area={area}");
            }
        }
    }

    #[test]
    fn spectrum_coverage_at_forty() {
        let cfg = SyntheticModelConfig::default();
        let sigma1 = cfg.leading_sigma;
        let variances: Vec<f64> = (0..cfg.k_full).map(|j| (sigma1 * cfg.decay.powi(j as i32)).powi(2)).collect();
        let total: f64 = variances.iter().sum();
        let head: f64 = variances[..40].iter().sum();
        assert!(head / total >= 0.98);
        assert!((coverage_of(&variances, 40) - head / total).abs() < 1e-15);
        let b = generate_synthetic_model(&small(), 1).unwrap();
        assert!(b.shape.whitening().coverage() >= 0.98);
        assert_eq!(b.shape.k_white(), 40);
    }

    #[test]
    fn bases_are_orthonormal() {
        let b = generate_synthetic_model(&small(), 9).unwrap();
        let u = b.shape.shape_basis();
        let g = u.tr_mul(u);
        assert!((g - DMatrix::identity(u.ncols(), u.ncols())).amax() < 1e-10);
    }

    #[test]
    fn landmarks_are_distinct_and_semantic() {
        let b = generate_synthetic_model(&small(), 1).unwrap();
        let mut idx = b.shape.landmark_indices().to_vec();
        idx.sort();
        idx.dedup();
        assert_eq!(idx.len(), NUM_LANDMARKS);
        let m = b.shape.mean_shape();
        let y = |l: usize| m[3 * b.shape.landmark_indices()[l] as usize + 1];
        // Helix top is above the lobe bottom in a y-down frame.
        assert!(y(HELIX_INDEX) < -0.4);
        assert!(y(LOBE_INDEX) > 0.35);
    }

    #[test]
    fn corpus_landmarks_match_projection_and_fit_at_truth_is_zero() {
        let b = generate_synthetic_model(&small(), 1).unwrap();
        let cfg = RasterConfig::with_size(64, 64);
        let items = render_synthetic_corpus(&b, &cfg, 4, &CorpusNoise::default(), 5).unwrap();
        let dec = Decoder::new(&b.shape, b.colour.as_ref().unwrap(), cfg).unwrap();
        for it in &items {
            it.validate().unwrap();
            let gt = it.gt.as_ref().unwrap();
            let s = b.shape.reconstruct_shape(&gt.shape).unwrap();
            let lm = select_landmarks(&project_sop(&s, &dec.pixel_pose(&gt.pose)), b.shape.landmark_indices()).unwrap();
            for (p, q) in lm.iter().zip(&it.landmarks) {
                assert!((p[0] - q[0]).abs() < 1e-9 && (p[1] - q[1]).abs() < 1e-9);
            }
            let w = LossWeights {
                reg_statistical: 0.0,
                ..LossWeights::WITH_LANDMARKS
            };
            let e = total_loss(&dec, gt, &it.image, Some(&it.landmarks), &w).unwrap();
            assert!(e.terms.total < 1e-20, "{}", e.terms.total);
        }
        let again = render_item(&dec, &CorpusNoise::default(), 5, 2).unwrap();
        assert_eq!(again.image, items[2].image);
    }

    #[test]
    fn parameter_draws_are_centred_and_truncated() {
        let b = generate_synthetic_model(&small(), 1).unwrap();
        let dec = Decoder::new(&b.shape, b.colour.as_ref().unwrap(), RasterConfig::with_size(64, 64)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let draws: Vec<CodeVector> = (0..1000).map(|_| sample_code_vector(&dec, 1.0, &mut rng)).collect();
        let k = draws[0].shape.len() + draws[0].colour.len();
        for j in 0..k {
            let vals: Vec<f64> = draws
                .iter()
                .map(|d| d.shape.iter().chain(&d.colour).nth(j).copied().unwrap())
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 0.1, "dim {j} mean {mean}");
            assert!(vals.iter().all(|v| v.abs() <= PARAM_TRUNCATION));
        }
        for d in &draws {
            assert!(d.pose.rotation[2].abs() <= MAX_ROLL_DEG.to_radians());
            assert!((SCALE_RANGE[0]..=SCALE_RANGE[1]).contains(&d.pose.scale));
        }
    }
}
