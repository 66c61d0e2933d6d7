//! Grayscale conversion, denoising, resizing, and normalization.

use serde::{Deserialize, Serialize};

use super::image::{ColorImage, GrayImage};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Per-pixel channel mean, rounded half up.
pub fn to_grayscale(img: &ColorImage) -> Result<GrayImage> {
    if img.channels != 3 {
        return Err(Error::Dimension(format!(
            "to_grayscale expects 3 channels, got {}",
            img.channels
        )));
    }
    let pixels = img
        .data
        .chunks_exact(3)
        .map(|p| {
            let s = p[0] as u32 + p[1] as u32 + p[2] as u32;
            // floor(s/3 + 1/2)
            ((2 * s + 3) / 6) as u8
        })
        .collect();
    GrayImage::new(img.width, img.height, pixels)
}

/// 3x3 median filter; out-of-range neighbours are clamped to the border.
pub fn denoise_median3(img: &GrayImage) -> Result<GrayImage> {
    let (w, h) = (img.width(), img.height());
    if w < 3 || h < 3 {
        return Err(Error::Dimension(format!(
            "median filter needs at least 3x3, got {w}x{h}"
        )));
    }
    let mut out = vec![0u8; w * h];
    let mut window = [0u8; 9];
    for y in 0..h {
        for x in 0..w {
            let mut i = 0;
            for dy in [-1isize, 0, 1] {
                let sy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                for dx in [-1isize, 0, 1] {
                    let sx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                    window[i] = img.get(sx, sy);
                    i += 1;
                }
            }
            window.sort_unstable();
            out[y * w + x] = window[4];
        }
    }
    GrayImage::new(w, h, out)
}

/// Bilinear resampling with half-pixel centers and edge clamping. Returns an
/// exact copy when the size is unchanged.
pub fn resize_bilinear(img: &GrayImage, width: usize, height: usize) -> Result<GrayImage> {
    if width == 0 || height == 0 {
        return Err(Error::Dimension(format!("resize target {width}x{height} is empty")));
    }
    let (sw, sh) = (img.width(), img.height());
    if (sw, sh) == (width, height) {
        return Ok(img.clone());
    }
    let sx_scale = sw as f64 / width as f64;
    let sy_scale = sh as f64 / height as f64;
    let mut out = Vec::with_capacity(width * height);
    for y in 0..height {
        let fy = ((y as f64 + 0.5) * sy_scale - 0.5).clamp(0.0, (sh - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(sh - 1);
        let ty = fy - y0 as f64;
        for x in 0..width {
            let fx = ((x as f64 + 0.5) * sx_scale - 0.5).clamp(0.0, (sw - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(sw - 1);
            let tx = fx - x0 as f64;
            let top = img.get(x0, y0) as f64 * (1.0 - tx) + img.get(x1, y0) as f64 * tx;
            let bot = img.get(x0, y1) as f64 * (1.0 - tx) + img.get(x1, y1) as f64 * tx;
            let v = top * (1.0 - ty) + bot * ty;
            out.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    GrayImage::new(width, height, out)
}

/// Maps bytes to `[0, 1]` as a `1 x H x W` tensor.
pub fn normalize<T: Real>(img: &GrayImage) -> Tensor<T> {
    let data = img.pixels().iter().map(|&v| T::lit(v as f64 / 255.0)).collect();
    Tensor::from_parts(vec![1, img.height(), img.width()], data)
}

/// Image preparation applied before the network sees a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct Preprocess {
    pub denoise: bool,
    /// `(width, height)`; `None` keeps the source size.
    pub resize: Option<(usize, usize)>,
}

impl Preprocess {
    pub fn apply(&self, img: &GrayImage) -> Result<GrayImage> {
        let mut img = if self.denoise {
            denoise_median3(img)?
        } else {
            img.clone()
        };
        if let Some((w, h)) = self.resize {
            img = resize_bilinear(&img, w, h)?;
        }
        Ok(img)
    }
}
