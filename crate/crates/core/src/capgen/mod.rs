//! Deterministic synthetic text-CAPTCHA generation.

mod charset;
mod dataset;
mod glyphs;
mod render;

pub use charset::{Charset, ALPHANUMERIC, DIGITS};
pub use dataset::{generate_dataset, label_capacity, MAX_LABEL_RETRIES};
pub use glyphs::{Glyph, GlyphAtlas, GLYPH_H, GLYPH_W};
pub use render::{
    render_captcha, sample_text, CaptchaSample, DistortionSpec, SampleMeta, BACKGROUND_LEVEL,
    PEPPER_MEAN, SLOT_W,
};

pub const LABEL_LEN: usize = 5;
pub const CANVAS_W: usize = 200;
pub const CANVAS_H: usize = 50;
