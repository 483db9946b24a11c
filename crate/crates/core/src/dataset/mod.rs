//! Glyph datasets (grayscale and gradient-colorized) and synthetic scenes.

mod backgrounds;
mod font;
mod gradient;
mod manifest;
mod scene;

pub use backgrounds::{procedural_background, training_backgrounds, BackgroundKind};
pub use font::{
    bundled_font, bundled_font_dir, discover_fonts, expand_fonts, rasterize_glyph, FontSource,
    GlyphGeometry, LoadedFont, SynthStyle, VARIANTS,
};
pub use gradient::{
    apply_color_gradient, draw_gradient_spec, font_seed, Axis, ColorGradientSpec,
    HIGHLIGHT_FRACTION,
};
pub use manifest::{
    build_font_dataset, load_font_glyphs, BuildReport, DatasetConfig, DatasetHeader,
    DatasetManifest, FontGlyphs, ManifestRecord, Reject, Split, HEADER_FILE, MANIFEST_FILE,
    SCHEMA_VERSION,
};
pub use scene::{synth_scene, SceneSample, SceneSpec};

use crate::raster::Image;

/// One character raster. `ink` is the single-channel coverage (ink high on a
/// zero background); colorized glyphs additionally carry premultiplied `rgb`.
#[derive(Debug, Clone, PartialEq)]
pub struct GlyphImage {
    pub ch: char,
    pub font_id: String,
    pub ink: Image,
    pub rgb: Option<Image>,
}

impl GlyphImage {
    pub fn gray(ch: char, font_id: impl Into<String>, ink: Image) -> Self {
        GlyphImage {
            ch,
            font_id: font_id.into(),
            ink,
            rgb: None,
        }
    }

    pub fn size(&self) -> usize {
        self.ink.width()
    }

    pub fn is_color(&self) -> bool {
        self.rgb.is_some()
    }

    /// The displayed raster: `rgb` for color glyphs, otherwise `ink`.
    pub fn pixels(&self) -> &Image {
        self.rgb.as_ref().unwrap_or(&self.ink)
    }

    /// Fraction of pixels whose ink is above `threshold`.
    pub fn ink_coverage(&self, threshold: f32) -> f64 {
        let n = self.ink.data().iter().filter(|&&v| v > threshold).count();
        n as f64 / self.ink.data().len() as f64
    }

    pub fn ink_mask(&self, threshold: f32) -> Vec<bool> {
        crate::raster::binarize(&self.ink, threshold)
    }
}
