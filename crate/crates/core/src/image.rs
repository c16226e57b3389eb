//! Linear-RGB float images and 8-bit sRGB PNG I/O.
//!
//! Pixel `(x, y)` covers the square `[x, x+1) × [y, y+1)`; its centre sits at
//! `(x + 0.5, y + 0.5)`. The origin is the top-left corner, y grows downwards.

use std::path::Path;

use crate::error::{arg, Error, Result};

/// An RGB image stored row-major, three `f64` channels per pixel, linear light.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, [0.0; 3])
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(arg(format!(
                "image buffer has {} values, expected {}x{}x3",
                data.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Bilinear lookup at a continuous position in pixel coordinates.
    ///
    /// Returns `None` when the position lies outside `[0, width] × [0, height]`.
    /// Inside that rectangle, taps beyond the outermost pixel centres are
    /// clamped to the edge.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Option<[f64; 3]> {
        if !(x >= 0.0 && y >= 0.0 && x <= self.width as f64 && y <= self.height as f64) {
            return None;
        }
        Some(self.sample_clamped(x, y))
    }

    /// Bilinear lookup with edge-replicate padding everywhere.
    pub fn sample_clamped(&self, x: f64, y: f64) -> [f64; 3] {
        let taps = bilinear_taps(x, y, self.width, self.height);
        let mut out = [0.0; 3];
        for (px, py, w) in taps {
            let p = self.pixel(px, py);
            for c in 0..3 {
                out[c] += w * p[c];
            }
        }
        out
    }

    /// Reads an 8-bit PNG and converts sRGB to linear.
    pub fn read_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path)
            .map_err(|e| Error::parse(path, e))?
            .to_rgb8();
        let (w, h) = img.dimensions();
        let data = img.as_raw().iter().map(|&v| srgb_to_linear(v)).collect();
        Ok(Self {
            width: w as usize,
            height: h as usize,
            data,
        })
    }

    /// Writes an 8-bit sRGB PNG. Values are clamped to [0, 1] first.
    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes: Vec<u8> = self.data.iter().map(|&v| linear_to_srgb(v)).collect();
        let buf = image::RgbImage::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("buffer length matches dimensions");
        buf.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| match e {
                image::ImageError::IoError(io) => Error::io(path, io),
                other => Error::Image(other),
            })
    }

    /// Round-trips the image through 8-bit sRGB quantisation.
    pub fn quantized(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .map(|&v| srgb_to_linear(linear_to_srgb(v)))
                .collect(),
        }
    }
}

/// The four (pixel, weight) taps of a bilinear lookup with edge clamping.
pub(crate) fn bilinear_taps(x: f64, y: f64, width: usize, height: usize) -> [(usize, usize, f64); 4] {
    let fx = (x - 0.5).clamp(0.0, (width - 1) as f64);
    let fy = (y - 0.5).clamp(0.0, (height - 1) as f64);
    let x0 = fx.floor() as usize;
    let y0 = fy.floor() as usize;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let tx = fx - x0 as f64;
    let ty = fy - y0 as f64;
    [
        (x0, y0, (1.0 - tx) * (1.0 - ty)),
        (x1, y0, tx * (1.0 - ty)),
        (x0, y1, (1.0 - tx) * ty),
        (x1, y1, tx * ty),
    ]
}

pub fn srgb_to_linear(v: u8) -> f64 {
    let c = v as f64 / 255.0;
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

pub fn linear_to_srgb(v: f64) -> u8 {
    let c = v.clamp(0.0, 1.0);
    let s = if c <= 0.003_130_8 {
        12.92 * c
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    };
    (s * 255.0).round().clamp(0.0, 255.0) as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn srgb_round_trip_is_exact_on_bytes() {
        for v in 0..=255u8 {
            assert_eq!(linear_to_srgb(srgb_to_linear(v)), v);
        }
    }

    #[test]
    fn bilinear_at_pixel_centre_is_exact() {
        let img = Image::from_fn(4, 3, |x, y| [x as f64, y as f64, (x * y) as f64]);
        assert_eq!(img.sample_bilinear(2.5, 1.5), Some([2.0, 1.0, 2.0]));
        let mid = img.sample_bilinear(2.0, 1.5).unwrap();
        assert!((mid[0] - 1.5).abs() < 1e-15);
        assert!(img.sample_bilinear(-0.1, 1.0).is_none());
        assert!(img.sample_bilinear(4.1, 1.0).is_none());
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let img = Image::from_fn(5, 4, |x, y| [x as f64 / 4.0, y as f64 / 3.0, 0.25]);
        img.write_png(&path).unwrap();
        let back = Image::read_png(&path).unwrap();
        assert_eq!(back, img.quantized());
    }
}
