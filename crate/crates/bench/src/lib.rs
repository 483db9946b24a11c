//! Deterministic inputs shared by the benchmarks.

use ldn_core::dataset::{
    apply_color_gradient, bundled_font, ColorGradientSpec, DatasetConfig, FontGlyphs,
};
use ldn_core::glyph::{assemble_input, GlyphStack};
use ldn_core::inpaint::{mask_region, MaskedImage, RegionMask};
use ldn_core::{Image, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniform noise in [0, 1).
pub fn noise_image(w: usize, h: usize, channels: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_fn(w, h, channels, |_, _, _| rng.gen())
}

/// An RGB square with a centered hole of half its side.
pub fn masked_square(side: usize, fill: f32, seed: u64) -> Result<MaskedImage> {
    let img = noise_image(side, side, 3, seed);
    mask_region(&img, &RegionMask::centered(side, side, side / 2), fill)
}

/// Glyphs of the bundled sans font at `size` pixels.
pub fn sans_glyphs(size: usize) -> Result<FontGlyphs> {
    let mut cfg = DatasetConfig::default();
    cfg.geometry.size = size;
    FontGlyphs::render(&bundled_font("DejaVuSans"), &cfg)
}

/// A network input with the first `n` glyphs observed.
pub fn observed_stack(font: &FontGlyphs, n: usize) -> Result<GlyphStack> {
    assemble_input(&font.glyphs[..n])
}

/// The same font with a flat ink color, as ornamentation exemplars.
pub fn colorized(font: &FontGlyphs, color: [f32; 3]) -> FontGlyphs {
    let spec = ColorGradientSpec::flat(color);
    let mut out = font.clone();
    out.glyphs = font
        .glyphs
        .iter()
        .map(|g| apply_color_gradient(g, &spec, 0.5))
        .collect();
    out.gradient = Some(spec);
    out
}
