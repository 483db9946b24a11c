//! Gradient-and-highlight colorization of grayscale glyphs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::raster::Image;

use super::GlyphImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Vertical,
    Horizontal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColorGradientSpec {
    pub color_top: [f32; 3],
    pub color_bottom: [f32; 3],
    pub axis: Axis,
    pub highlight_strength: f32,
}

impl ColorGradientSpec {
    pub fn flat(color: [f32; 3]) -> Self {
        ColorGradientSpec {
            color_top: color,
            color_bottom: color,
            axis: Axis::Vertical,
            highlight_strength: 0.0,
        }
    }

    pub fn is_valid(&self) -> bool {
        let unit = |v: f32| (0.0..=1.0).contains(&v);
        self.color_top
            .iter()
            .chain(&self.color_bottom)
            .all(|&v| unit(v))
            && unit(self.highlight_strength)
    }
}

/// Highlight ramp covers this top fraction of the ink bounding box.
pub const HIGHLIGHT_FRACTION: f32 = 0.35;

/// Lowest value a drawn color component can take, so ink stays visible on black.
const MIN_COMPONENT: f64 = 0.15;

/// Per-font seed: the first 8 bytes (little endian) of
/// `SHA-256("ldn-font" || seed as u64 LE || font_id as UTF-8)`.
pub fn font_seed(seed: u64, font_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(b"ldn-font");
    h.update(seed.to_le_bytes());
    h.update(font_id.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// Draws a gradient spec from `ChaCha8Rng::seed_from_u64(font_seed)`.
///
/// Draw order, each `gen::<f64>()` in `[0,1)`: top r,g,b, bottom r,g,b (each
/// mapped to `0.15 + 0.85·u`), axis (`u < 0.5` ⇒ vertical), highlight strength.
pub fn draw_gradient_spec(font_seed: u64) -> ColorGradientSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(font_seed);
    let mut comp = || (MIN_COMPONENT + (1.0 - MIN_COMPONENT) * rng.gen::<f64>()) as f32;
    let color_top = [comp(), comp(), comp()];
    let color_bottom = [comp(), comp(), comp()];
    let axis = if rng.gen::<f64>() < 0.5 {
        Axis::Vertical
    } else {
        Axis::Horizontal
    };
    let highlight_strength = rng.gen::<f64>() as f32;
    ColorGradientSpec {
        color_top,
        color_bottom,
        axis,
        highlight_strength,
    }
}

/// Colorizes a grayscale glyph on a black background.
///
/// The color at each pixel interpolates `color_top → color_bottom` across the
/// ink bounding box along `axis`; a highlight brightens toward white by
/// `highlight_strength` at the top of the box, fading out at
/// [`HIGHLIGHT_FRACTION`] of its height. The result is scaled by the gray value
/// so antialiased edges stay soft; the ink channel is kept unchanged.
pub fn apply_color_gradient(
    glyph: &GlyphImage,
    spec: &ColorGradientSpec,
    threshold: f32,
) -> GlyphImage {
    let ink = &glyph.ink;
    let (w, h) = (ink.width(), ink.height());
    let mut rgb = Image::new(w, h, 3);
    if let Some(b) = ink.ink_bbox(threshold) {
        let span = |lo: i32, n: i32| (lo as f32, (n - 1).max(1) as f32);
        let (y0, hy) = span(b.y, b.h);
        let (x0, hx) = span(b.x, b.w);
        for y in 0..h {
            let v = ((y as f32 - y0) / hy).clamp(0.0, 1.0);
            let ramp = (1.0 - v / HIGHLIGHT_FRACTION).max(0.0) * spec.highlight_strength;
            for x in 0..w {
                let g = ink.get(x, y, 0);
                if g == 0.0 {
                    continue;
                }
                let t = match spec.axis {
                    Axis::Vertical => v,
                    Axis::Horizontal => ((x as f32 - x0) / hx).clamp(0.0, 1.0),
                };
                let px = rgb.pixel_mut(x, y);
                for c in 0..3 {
                    let base = spec.color_top[c] + (spec.color_bottom[c] - spec.color_top[c]) * t;
                    let lit = base + ramp * (1.0 - base);
                    px[c] = (g * lit).clamp(0.0, 1.0);
                }
            }
        }
    }
    GlyphImage {
        ch: glyph.ch,
        font_id: glyph.font_id.clone(),
        ink: glyph.ink.clone(),
        rgb: Some(rgb),
    }
}
