use std::f64::consts::PI;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::glyphs::{GlyphAtlas, GLYPH_H, GLYPH_W};
use super::{CANVAS_H, CANVAS_W, LABEL_LEN};
use crate::datapipe::GrayImage;
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const BACKGROUND_LEVEL: u8 = 235;
pub const PEPPER_MEAN: f64 = 40.0;
pub const SLOT_W: usize = CANVAS_W / LABEL_LEN;

/// Glyph bitmap pixels per canvas pixel.
const GLYPH_SCALE: f64 = 36.0 / GLYPH_H as f64;
/// Horizontal period of the sinusoidal shear, one cycle per slot.
const WARP_WAVELENGTH: f64 = SLOT_W as f64;

fn atlas() -> &'static GlyphAtlas {
    static ATLAS: OnceLock<GlyphAtlas> = OnceLock::new();
    ATLAS.get_or_init(GlyphAtlas::builtin)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistortionSpec {
    pub rotation_max_deg: f64,
    pub warp_amplitude: f64,
    pub pepper_density: f64,
    pub noise_sigma: f64,
    pub text_gray_level: u8,
    pub overlap_px: u32,
}

impl Default for DistortionSpec {
    fn default() -> Self {
        Self {
            rotation_max_deg: 15.0,
            warp_amplitude: 2.0,
            pepper_density: 0.05,
            noise_sigma: 20.0,
            text_gray_level: 60,
            overlap_px: 2,
        }
    }
}

impl DistortionSpec {
    /// No distortion at all: clean glyphs at the default gray level.
    pub fn zero() -> Self {
        Self {
            rotation_max_deg: 0.0,
            warp_amplitude: 0.0,
            pepper_density: 0.0,
            noise_sigma: 0.0,
            overlap_px: 0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")))
            }
        };
        nonneg("rotation_max_deg", self.rotation_max_deg)?;
        nonneg("warp_amplitude", self.warp_amplitude)?;
        nonneg("noise_sigma", self.noise_sigma)?;
        if !(0.0..1.0).contains(&self.pepper_density) {
            return Err(Error::Config(format!(
                "pepper_density must lie in [0, 1), got {}",
                self.pepper_density
            )));
        }
        if self.overlap_px as usize >= SLOT_W {
            return Err(Error::Config(format!(
                "overlap_px must be below the slot width {SLOT_W}, got {}",
                self.overlap_px
            )));
        }
        Ok(())
    }
}

/// Realized generation parameters. Fields are optional so that datasets
/// produced elsewhere can still be loaded; analysis requires all of them.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SampleMeta {
    /// Signed per-character rotation in degrees.
    pub rotations: Option<[f64; LABEL_LEN]>,
    /// Fraction of canvas pixels replaced by pepper noise.
    pub pepper_density: Option<f64>,
    pub gray_level: Option<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptchaSample {
    pub id: usize,
    pub image: GrayImage,
    pub label: String,
    pub meta: SampleMeta,
}

/// Each position drawn uniformly from `symbols`.
pub fn sample_text(symbols: &[char], length: usize, rng: &mut Rng) -> String {
    (0..length).map(|_| symbols[rng.below(symbols.len())]).collect()
}

pub fn check_renderable(symbols: impl IntoIterator<Item = char>) -> Result<()> {
    for c in symbols {
        if atlas().get(c).is_none() {
            return Err(Error::Rendering(format!("no glyph for symbol {c:?}")));
        }
    }
    Ok(())
}

pub fn render_captcha(text: &str, spec: &DistortionSpec, rng: &mut Rng) -> Result<CaptchaSample> {
    spec.validate()?;
    let chars: Vec<char> = text.chars().collect();
    if chars.len() != LABEL_LEN {
        return Err(Error::Validation(format!(
            "captcha text {text:?} must have {LABEL_LEN} characters"
        )));
    }
    let glyphs = chars
        .iter()
        .map(|&c| {
            atlas()
                .get(c)
                .ok_or_else(|| Error::Rendering(format!("no glyph for symbol {c:?}")))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut alpha = vec![0.0f64; CANVAS_W * CANVAS_H];
    let mut rotations = [0.0; LABEL_LEN];
    let reach = GLYPH_SCALE * ((GLYPH_W * GLYPH_W + GLYPH_H * GLYPH_H) as f64).sqrt() / 2.0
        + spec.warp_amplitude
        + 2.0;

    for (i, glyph) in glyphs.iter().enumerate() {
        let deg = rng.uniform(-spec.rotation_max_deg, spec.rotation_max_deg);
        let phase = rng.uniform(0.0, 2.0 * PI);
        rotations[i] = deg;
        let (sin, cos) = deg.to_radians().sin_cos();
        let cx = SLOT_W as f64 * (i as f64 + 0.5) - (i as f64) * spec.overlap_px as f64;
        let cy = CANVAS_H as f64 / 2.0;

        let x_lo = (cx - reach).floor().max(0.0) as usize;
        let x_hi = ((cx + reach).ceil() as usize).min(CANVAS_W);
        for px in x_lo..x_hi {
            let dx = px as f64 + 0.5 - cx;
            let shift = spec.warp_amplitude * (2.0 * PI * dx / WARP_WAVELENGTH + phase).sin();
            for py in 0..CANVAS_H {
                let dy = py as f64 + 0.5 - shift - cy;
                // Inverse rotation into glyph space.
                let u = cos * dx + sin * dy;
                let v = -sin * dx + cos * dy;
                let gx = u / GLYPH_SCALE + GLYPH_W as f64 / 2.0 - 0.5;
                let gy = v / GLYPH_SCALE + GLYPH_H as f64 / 2.0 - 0.5;
                let a = glyph.sample_bilinear(gx, gy);
                let cell = &mut alpha[py * CANVAS_W + px];
                if a > *cell {
                    *cell = a;
                }
            }
        }
    }

    let bg = BACKGROUND_LEVEL as f64;
    let ink = spec.text_gray_level as f64;
    let mut pixels: Vec<u8> = alpha
        .iter()
        .map(|&a| (bg * (1.0 - a) + ink * a).round().clamp(0.0, 255.0) as u8)
        .collect();

    let total = CANVAS_W * CANVAS_H;
    let count = (spec.pepper_density * total as f64).round() as usize;
    if count > 0 {
        // Partial Fisher-Yates: the first `count` slots are distinct pixels.
        let mut order: Vec<usize> = (0..total).collect();
        for k in 0..count {
            let j = k + rng.below(total - k);
            order.swap(k, j);
            let v = rng.normal(PEPPER_MEAN, spec.noise_sigma).round().clamp(0.0, 255.0);
            pixels[order[k]] = v as u8;
        }
    }

    Ok(CaptchaSample {
        id: 0,
        image: GrayImage::new(CANVAS_W, CANVAS_H, pixels)?,
        label: text.to_string(),
        meta: SampleMeta {
            rotations: Some(rotations),
            pepper_density: Some(count as f64 / total as f64),
            gray_level: Some(spec.text_gray_level),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capgen::Charset;

    #[test]
    fn single_symbol_charset_is_forced() {
        assert_eq!(sample_text(&['a'], 5, &mut Rng::new(3)), "aaaaa");
    }

    #[test]
    fn seed_42_golden_text() {
        let cs = Charset::default();
        assert_eq!(sample_text(cs.symbols(), 5, &mut Rng::new(42)), GOLDEN_TEXT_SEED_42);
    }

    const GOLDEN_TEXT_SEED_42: &str = "8o5yr";
    const GOLDEN_CRC_SEED_7: u32 = 3_831_305_545;

    #[test]
    fn symbol_frequencies_are_uniform() {
        let cs = Charset::default();
        let k = cs.len();
        let draws = 100_000;
        let mut counts = vec![0usize; k];
        let mut rng = Rng::new(11);
        for _ in 0..draws / 5 {
            for c in sample_text(cs.symbols(), 5, &mut rng).chars() {
                counts[cs.index_of(c).unwrap()] += 1;
            }
        }
        let p = 1.0 / k as f64;
        let mean = draws as f64 * p;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for (i, &c) in counts.iter().enumerate() {
            assert!(
                (c as f64 - mean).abs() <= 3.0 * sigma,
                "symbol {i}: {c} draws vs expected {mean}"
            );
        }
    }

    #[test]
    fn zero_spec_is_clean_and_repeatable() {
        let spec = DistortionSpec::zero();
        let a = render_captcha("ab123", &spec, &mut Rng::new(1)).unwrap();
        let b = render_captcha("ab123", &spec, &mut Rng::new(99)).unwrap();
        assert_eq!(a.image, b.image);
        assert_eq!(a.meta.rotations, Some([0.0; 5]));
        assert_eq!(a.meta.pepper_density, Some(0.0));
        let px = a.image.pixels();
        assert!(px.iter().all(|&v| (60..=235).contains(&v)));
        assert!(px.contains(&60));
        assert!(px.contains(&235));
    }

    #[test]
    fn image_has_canvas_dims() {
        let s = render_captcha("zz9z0", &DistortionSpec::default(), &mut Rng::new(5)).unwrap();
        assert_eq!((s.image.width(), s.image.height()), (CANVAS_W, CANVAS_H));
        assert_eq!(s.label, "zz9z0");
    }

    #[test]
    fn pepper_fraction_on_invisible_text() {
        let spec = DistortionSpec {
            pepper_density: 0.1,
            text_gray_level: BACKGROUND_LEVEL,
            ..DistortionSpec::zero()
        };
        let s = render_captcha("00000", &spec, &mut Rng::new(8)).unwrap();
        let dark = s.image.pixels().iter().filter(|&&v| v != BACKGROUND_LEVEL).count();
        let frac = dark as f64 / (CANVAS_W * CANVAS_H) as f64;
        assert!((frac - 0.1).abs() <= 0.01, "fraction {frac}");
        assert_eq!(s.meta.pepper_density, Some(0.1));
    }

    #[test]
    fn rotations_stay_within_bound() {
        let spec = DistortionSpec { rotation_max_deg: 10.0, ..DistortionSpec::default() };
        let mut rng = Rng::new(4);
        for _ in 0..50 {
            let s = render_captcha("12345", &spec, &mut rng).unwrap();
            assert!(s.meta.rotations.unwrap().iter().all(|r| r.abs() <= 10.0));
        }
    }

    #[test]
    fn rotation_changes_pixels() {
        let flat = render_captcha("77777", &DistortionSpec::zero(), &mut Rng::new(2)).unwrap();
        let spec = DistortionSpec { rotation_max_deg: 30.0, ..DistortionSpec::zero() };
        let tilted = render_captcha("77777", &spec, &mut Rng::new(2)).unwrap();
        assert_ne!(flat.image, tilted.image);
    }

    #[test]
    fn default_spec_golden_checksum() {
        let s = render_captcha("3a8b9", &DistortionSpec::default(), &mut Rng::new(7)).unwrap();
        assert_eq!(crc32fast::hash(s.image.pixels()), GOLDEN_CRC_SEED_7);
    }

    #[test]
    fn unknown_symbol_is_a_rendering_error() {
        let err = render_captcha("ab#12", &DistortionSpec::zero(), &mut Rng::new(1)).unwrap_err();
        assert!(matches!(err, Error::Rendering(_)));
        assert!(render_captcha("ab12", &DistortionSpec::zero(), &mut Rng::new(1)).is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(DistortionSpec::default().validate().is_ok());
        let bad = DistortionSpec { pepper_density: 1.0, ..DistortionSpec::default() };
        assert!(bad.validate().is_err());
        let bad = DistortionSpec { rotation_max_deg: -1.0, ..DistortionSpec::default() };
        assert!(bad.validate().is_err());
    }
}
