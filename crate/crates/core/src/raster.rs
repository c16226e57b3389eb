//! Differentiable software rasterizer for per-vertex coloured triangle meshes.
//!
//! Forward pass:
//!
//! * Hard coverage. Each pixel centre is tested against every triangle whose
//!   bounding box contains it, using screen-space edge functions with a
//!   top-left fill rule. The covering fragment with the smallest interpolated
//!   depth wins; on exact depth ties the lower triangle index wins. The pixel
//!   colour is the barycentric blend of the owner's vertex colours, clamped to
//!   [0, 1].
//! * Soft silhouette. With `edge_sigma > 0`, every pixel within
//!   `BAND_SIGMAS · edge_sigma` of a silhouette edge gets a coverage weight
//!   `m = g(d)` where `d` is the signed distance to the nearest silhouette
//!   edge (positive inside) and `g` is a logistic curve of width `edge_sigma`,
//!   renormalised so it reaches exactly 0 and 1 at the band limits. The pixel
//!   becomes `m · colour + (1 - m) · background`. Outside pixels take their
//!   colour from the edge, interpolated at the closest point.
//!
//! Silhouette edges are mesh edges with a single adjacent triangle, or whose
//! two adjacent triangles project with opposite orientation (fold contours).
//!
//! The backward pass differentiates through barycentric weights, the soft
//! coverage weight and the edge colour interpolation. Depth ordering is hard
//! and carries no gradient; neither does the background.

use serde::{Deserialize, Serialize};

use crate::error::{arg, Result};
use crate::image::Image;
use crate::projection::ProjectedShape;

/// Half-width of the soft band in units of `edge_sigma`.
pub const BAND_SIGMAS: f64 = 4.0;

const DEGENERATE_AREA: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RasterConfig {
    pub width: usize,
    pub height: usize,
    /// Soft-edge falloff in pixels; 0 gives hard rasterization.
    pub edge_sigma: f64,
    pub background: [f64; 3],
}

impl Default for RasterConfig {
    fn default() -> Self {
        Self {
            width: 224,
            height: 224,
            edge_sigma: 1.0,
            background: [0.0; 3],
        }
    }
}

impl RasterConfig {
    pub fn with_size(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(arg("raster size must be at least 1x1"));
        }
        if !(self.edge_sigma >= 0.0 && self.edge_sigma.is_finite()) {
            return Err(arg(format!("edge_sigma {} must be >= 0", self.edge_sigma)));
        }
        Ok(())
    }

    fn band(&self) -> f64 {
        BAND_SIGMAS * self.edge_sigma
    }
}

/// The silhouette edge nearest to a pixel centre, within the soft band.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeHit {
    pub a: u32,
    pub b: u32,
    /// Position of the closest point along `a → b`, in [0, 1].
    pub t: f64,
    /// Unsigned distance from the pixel centre, pixels.
    pub distance: f64,
}

/// Everything the backward pass needs to know about one pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Fragment {
    /// Owning triangle when the pixel centre is hard-covered.
    pub triangle: Option<u32>,
    /// Barycentric weights of the owner's vertices (in triangle order).
    pub bary: [f64; 3],
    pub edge: Option<EdgeHit>,
    pub mask: f64,
}

#[derive(Clone, Debug)]
pub struct RasterOutput {
    pub image: Image,
    /// Coverage weight per pixel, row-major.
    pub mask: Vec<f64>,
    /// `None` where nothing influences the pixel.
    pub fragments: Vec<Option<Fragment>>,
}

impl RasterOutput {
    pub fn width(&self) -> usize {
        self.image.width()
    }

    pub fn height(&self) -> usize {
        self.image.height()
    }

    /// Owning triangle of every pixel, for ownership comparisons.
    pub fn owners(&self) -> Vec<Option<u32>> {
        self.fragments
            .iter()
            .map(|f| f.and_then(|f| f.triangle))
            .collect()
    }

    pub fn covered_pixels(&self) -> usize {
        self.fragments
            .iter()
            .filter(|f| f.map_or(false, |f| f.triangle.is_some()))
            .count()
    }
}

/// Gradients of `Σ d_image ⊙ image` with respect to the rasterizer inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct RasterGradients {
    pub positions: Vec<[f64; 2]>,
    /// Always zero: the z-buffer is hard.
    pub depth: Vec<f64>,
    pub colours: Vec<[f64; 3]>,
}

/// Edge function: twice the signed area of `(a, b, p)`; positive when `p` is
/// inside a positively oriented triangle.
#[inline]
pub(crate) fn edge_fn(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// Top-left rule for a positively oriented edge `a → b` (y down).
#[inline]
pub(crate) fn is_top_left(a: [f64; 2], b: [f64; 2]) -> bool {
    let dx = b[0] - a[0];
    let dy = b[1] - a[1];
    (dy == 0.0 && dx > 0.0) || dy < 0.0
}

#[inline]
fn inside(e: f64, top_left: bool) -> bool {
    e > 0.0 || (e == 0.0 && top_left)
}

#[inline]
fn pixel_centre(x: usize, y: usize) -> [f64; 2] {
    [x as f64 + 0.5, y as f64 + 0.5]
}

/// Pixel index range whose centres may fall in `[lo, hi]`.
fn pixel_span(lo: f64, hi: f64, n: usize) -> Option<(usize, usize)> {
    let first = (lo - 0.5).ceil().max(0.0);
    let last = (hi - 0.5).floor().min(n as f64 - 1.0);
    if !(first <= last) {
        return None;
    }
    Some((first as usize, last as usize))
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Coverage weight and its derivative for a signed distance.
fn soft_mask(signed: f64, sigma: f64) -> (f64, f64) {
    let band = BAND_SIGMAS * sigma;
    if signed >= band {
        return (1.0, 0.0);
    }
    if signed <= -band {
        return (0.0, 0.0);
    }
    let lo = logistic(-BAND_SIGMAS);
    let norm = 1.0 - 2.0 * lo;
    let s = logistic(signed / sigma);
    ((s - lo) / norm, s * (1.0 - s) / (sigma * norm))
}

/// Closest point on segment `a → b` to `p`: returns `(t, distance)`.
fn segment_closest(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> (f64, f64) {
    let e = [b[0] - a[0], b[1] - a[1]];
    let len2 = e[0] * e[0] + e[1] * e[1];
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * e[0] + (p[1] - a[1]) * e[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let q = [a[0] + t * e[0], a[1] + t * e[1]];
    (t, ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt())
}

/// Mesh edges on the projected silhouette, sorted by vertex pair.
pub fn silhouette_edges(points: &[[f64; 2]], triangles: &[[u32; 3]]) -> Vec<(u32, u32)> {
    let mut half: Vec<(u32, u32, i8)> = Vec::with_capacity(triangles.len() * 3);
    for t in triangles {
        let [a, b, c] = t.map(|i| points[i as usize]);
        let area = edge_fn(a, b, c);
        if !(area.abs() > DEGENERATE_AREA) {
            continue;
        }
        let sign = if area > 0.0 { 1 } else { -1 };
        for (i, j) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
            if i != j {
                half.push((i.min(j), i.max(j), sign));
            }
        }
    }
    half.sort_unstable();
    let mut out = Vec::new();
    let mut k = 0;
    while k < half.len() {
        let (i, j, _) = half[k];
        let mut end = k;
        while end < half.len() && half[end].0 == i && half[end].1 == j {
            end += 1;
        }
        let group = &half[k..end];
        let mixed = group.iter().any(|g| g.2 != group[0].2);
        if group.len() == 1 || (group.len() == 2 && mixed) {
            out.push((i, j));
        }
        k = end;
    }
    out
}

fn check_inputs(
    proj: &ProjectedShape,
    colours: &[[f64; 3]],
    triangles: &[[u32; 3]],
    cfg: &RasterConfig,
) -> Result<()> {
    cfg.validate()?;
    if proj.points.len() != colours.len() || proj.depth.len() != colours.len() {
        return Err(arg(format!(
            "{} projected vertices but {} colours",
            proj.points.len(),
            colours.len()
        )));
    }
    let n = colours.len();
    if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i as usize >= n)) {
        return Err(arg(format!("triangle {t:?} references a vertex >= {n}")));
    }
    Ok(())
}

/// Barycentric colour, written relative to the first vertex so that a
/// constant-colour triangle reproduces its colour bit-exactly.
#[inline]
pub(crate) fn blend(bary: [f64; 3], colours: &[[f64; 3]], tri: &[u32; 3]) -> [f64; 3] {
    let [c0, c1, c2] = tri.map(|i| colours[i as usize]);
    [0, 1, 2].map(|ch| c0[ch] + bary[1] * (c1[ch] - c0[ch]) + bary[2] * (c2[ch] - c0[ch]))
}

/// Renders the projected mesh.
pub fn rasterize(
    proj: &ProjectedShape,
    colours: &[[f64; 3]],
    triangles: &[[u32; 3]],
    cfg: &RasterConfig,
) -> Result<RasterOutput> {
    check_inputs(proj, colours, triangles, cfg)?;
    let (w, h) = (cfg.width, cfg.height);
    let pts = &proj.points;

    let mut zbuf = vec![f64::INFINITY; w * h];
    let mut owner: Vec<Option<(u32, [f64; 3])>> = vec![None; w * h];

    for (ti, tri) in triangles.iter().enumerate() {
        let [a, b, c] = tri.map(|i| pts[i as usize]);
        let area = edge_fn(a, b, c);
        if !(area.abs() > DEGENERATE_AREA) || !area.is_finite() {
            continue;
        }
        // Positively oriented copy for the fill rule.
        let (p0, p1, p2) = if area > 0.0 { (a, b, c) } else { (a, c, b) };
        let tl = [is_top_left(p1, p2), is_top_left(p2, p0), is_top_left(p0, p1)];
        let xs = [a[0], b[0], c[0]];
        let ys = [a[1], b[1], c[1]];
        let min = |v: [f64; 3]| v[0].min(v[1]).min(v[2]);
        let max = |v: [f64; 3]| v[0].max(v[1]).max(v[2]);
        let (Some((x0, x1)), Some((y0, y1))) = (
            pixel_span(min(xs), max(xs), w),
            pixel_span(min(ys), max(ys), h),
        ) else {
            continue;
        };
        let z = tri.map(|i| proj.depth[i as usize]);
        for py in y0..=y1 {
            for px in x0..=x1 {
                let p = pixel_centre(px, py);
                let e = [edge_fn(p1, p2, p), edge_fn(p2, p0, p), edge_fn(p0, p1, p)];
                if !(inside(e[0], tl[0]) && inside(e[1], tl[1]) && inside(e[2], tl[2])) {
                    continue;
                }
                let bary = [
                    edge_fn(b, c, p) / area,
                    edge_fn(c, a, p) / area,
                    edge_fn(a, b, p) / area,
                ];
                let depth = bary[0] * z[0] + bary[1] * z[1] + bary[2] * z[2];
                let idx = py * w + px;
                if depth < zbuf[idx] {
                    zbuf[idx] = depth;
                    owner[idx] = Some((ti as u32, bary));
                }
            }
        }
    }

    // Nearest silhouette edge inside the band, for every pixel.
    let mut nearest: Vec<Option<EdgeHit>> = vec![None; w * h];
    if cfg.edge_sigma > 0.0 {
        let band = cfg.band();
        for (ea, eb) in silhouette_edges(pts, triangles) {
            let a = pts[ea as usize];
            let b = pts[eb as usize];
            let (Some((x0, x1)), Some((y0, y1))) = (
                pixel_span(a[0].min(b[0]) - band, a[0].max(b[0]) + band, w),
                pixel_span(a[1].min(b[1]) - band, a[1].max(b[1]) + band, h),
            ) else {
                continue;
            };
            for py in y0..=y1 {
                for px in x0..=x1 {
                    let (t, d) = segment_closest(a, b, pixel_centre(px, py));
                    if d >= band {
                        continue;
                    }
                    let slot = &mut nearest[py * w + px];
                    if slot.map_or(true, |s| d < s.distance) {
                        *slot = Some(EdgeHit {
                            a: ea,
                            b: eb,
                            t,
                            distance: d,
                        });
                    }
                }
            }
        }
    }

    let bg = cfg.background;
    let mut image = Image::filled(w, h, bg);
    let mut mask = vec![0.0; w * h];
    let mut fragments: Vec<Option<Fragment>> = vec![None; w * h];
    for idx in 0..w * h {
        let (x, y) = (idx % w, idx / w);
        let frag = match (owner[idx], nearest[idx]) {
            (Some((ti, bary)), edge) => {
                let col = blend(bary, colours, &triangles[ti as usize]).map(|v| v.clamp(0.0, 1.0));
                let m = match edge {
                    Some(e) => soft_mask(e.distance, cfg.edge_sigma).0,
                    None => 1.0,
                };
                image.set_pixel(x, y, mix(col, bg, m));
                Fragment {
                    triangle: Some(ti),
                    bary,
                    edge,
                    mask: m,
                }
            }
            (None, Some(e)) => {
                let m = soft_mask(-e.distance, cfg.edge_sigma).0;
                if m <= 0.0 {
                    continue;
                }
                let ca = colours[e.a as usize];
                let cb = colours[e.b as usize];
                let col = [0, 1, 2].map(|ch| ((1.0 - e.t) * ca[ch] + e.t * cb[ch]).clamp(0.0, 1.0));
                image.set_pixel(x, y, mix(col, bg, m));
                Fragment {
                    triangle: None,
                    bary: [0.0; 3],
                    edge: Some(e),
                    mask: m,
                }
            }
            (None, None) => continue,
        };
        mask[idx] = frag.mask;
        fragments[idx] = Some(frag);
    }

    Ok(RasterOutput {
        image,
        mask,
        fragments,
    })
}

#[inline]
fn mix(col: [f64; 3], bg: [f64; 3], m: f64) -> [f64; 3] {
    [0, 1, 2].map(|c| m * col[c] + (1.0 - m) * bg[c])
}

/// Backpropagates `d_image` through a previous [`rasterize`] call with the
/// same inputs.
pub fn rasterize_backward(
    out: &RasterOutput,
    d_image: &Image,
    proj: &ProjectedShape,
    colours: &[[f64; 3]],
    triangles: &[[u32; 3]],
    cfg: &RasterConfig,
) -> Result<RasterGradients> {
    check_inputs(proj, colours, triangles, cfg)?;
    if d_image.dims() != (cfg.width, cfg.height) || out.image.dims() != (cfg.width, cfg.height) {
        return Err(arg("gradient image size does not match the raster configuration"));
    }
    let n = colours.len();
    let mut grads = RasterGradients {
        positions: vec![[0.0; 2]; n],
        depth: vec![0.0; n],
        colours: vec![[0.0; 3]; n],
    };
    let pts = &proj.points;
    let bg = cfg.background;
    let w = cfg.width;

    for (idx, frag) in out.fragments.iter().enumerate() {
        let Some(frag) = frag else { continue };
        let (x, y) = (idx % w, idx / w);
        let g = d_image.pixel(x, y);
        if g == [0.0; 3] {
            continue;
        }
        let p = pixel_centre(x, y);
        let m = frag.mask;

        let (raw, dcol_scale) = match frag.triangle {
            Some(ti) => (blend(frag.bary, colours, &triangles[ti as usize]), m),
            None => {
                let e = frag.edge.expect("exterior fragments carry an edge");
                let ca = colours[e.a as usize];
                let cb = colours[e.b as usize];
                ([0, 1, 2].map(|ch| (1.0 - e.t) * ca[ch] + e.t * cb[ch]), m)
            }
        };
        let col = raw.map(|v| v.clamp(0.0, 1.0));
        let dcol = [0, 1, 2].map(|ch| {
            if (0.0..=1.0).contains(&raw[ch]) {
                dcol_scale * g[ch]
            } else {
                0.0
            }
        });

        match frag.triangle {
            Some(ti) => {
                let tri = triangles[ti as usize];
                let [a, b, c] = tri.map(|i| pts[i as usize]);
                let area = edge_fn(a, b, c);
                // d E_i / d vertex_j with E_0 = E(b, c, p), E_1 = E(c, a, p), E_2 = E(a, b, p).
                let mut ge = [[[0.0; 2]; 3]; 3];
                ge[0][1] = [c[1] - p[1], p[0] - c[0]];
                ge[0][2] = [p[1] - b[1], b[0] - p[0]];
                ge[1][2] = [a[1] - p[1], p[0] - a[0]];
                ge[1][0] = [p[1] - c[1], c[0] - p[0]];
                ge[2][0] = [b[1] - p[1], p[0] - b[0]];
                ge[2][1] = [p[1] - a[1], a[0] - p[0]];
                let mut ga = [[0.0; 2]; 3];
                for j in 0..3 {
                    for k in 0..2 {
                        ga[j][k] = ge[0][j][k] + ge[1][j][k] + ge[2][j][k];
                    }
                }
                for i in 0..3 {
                    let ci = colours[tri[i] as usize];
                    let mut dw = 0.0;
                    for ch in 0..3 {
                        grads.colours[tri[i] as usize][ch] += frag.bary[i] * dcol[ch];
                        dw += ci[ch] * dcol[ch];
                    }
                    if dw == 0.0 {
                        continue;
                    }
                    for j in 0..3 {
                        for k in 0..2 {
                            let dwi = (ge[i][j][k] - frag.bary[i] * ga[j][k]) / area;
                            grads.positions[tri[j] as usize][k] += dw * dwi;
                        }
                    }
                }
            }
            None => {
                let e = frag.edge.expect("exterior fragments carry an edge");
                let ca = colours[e.a as usize];
                let cb = colours[e.b as usize];
                let mut dt = 0.0;
                for ch in 0..3 {
                    grads.colours[e.a as usize][ch] += (1.0 - e.t) * dcol[ch];
                    grads.colours[e.b as usize][ch] += e.t * dcol[ch];
                    dt += (cb[ch] - ca[ch]) * dcol[ch];
                }
                if dt != 0.0 && e.t > 0.0 && e.t < 1.0 {
                    let a = pts[e.a as usize];
                    let b = pts[e.b as usize];
                    let ev = [b[0] - a[0], b[1] - a[1]];
                    let len2 = ev[0] * ev[0] + ev[1] * ev[1];
                    let pa = [p[0] - a[0], p[1] - a[1]];
                    for k in 0..2 {
                        let dta = (-ev[k] - pa[k] + 2.0 * e.t * ev[k]) / len2;
                        let dtb = (pa[k] - 2.0 * e.t * ev[k]) / len2;
                        grads.positions[e.a as usize][k] += dt * dta;
                        grads.positions[e.b as usize][k] += dt * dtb;
                    }
                }
            }
        }

        // Coverage weight through the signed distance to the edge.
        if let Some(e) = frag.edge {
            let dm: f64 = (0..3).map(|ch| g[ch] * (col[ch] - bg[ch])).sum();
            let sign = if frag.triangle.is_some() { 1.0 } else { -1.0 };
            let (_, slope) = soft_mask(sign * e.distance, cfg.edge_sigma);
            let dd = dm * slope * sign;
            if dd != 0.0 && e.distance > 0.0 {
                let a = pts[e.a as usize];
                let b = pts[e.b as usize];
                let q = [a[0] + e.t * (b[0] - a[0]), a[1] + e.t * (b[1] - a[1])];
                let u = [(p[0] - q[0]) / e.distance, (p[1] - q[1]) / e.distance];
                // d dist / d q = -u; q moves with a by (1 - t) and with b by t.
                for k in 0..2 {
                    grads.positions[e.a as usize][k] -= dd * u[k] * (1.0 - e.t);
                    grads.positions[e.b as usize][k] -= dd * u[k] * e.t;
                }
            }
        }
    }
    Ok(grads)
}
