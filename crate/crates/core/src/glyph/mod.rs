//! Few-shot glyph style transfer: a shape network completing a 62-slot glyph
//! stack from a few observed letters, and a per-slot ornamentation network
//! that colors the completed shapes after the observed exemplars.

mod net;
mod orna;
mod sampler;
mod train;

pub use net::{predict_glyph_shapes, GlyphNet, GlyphNetConfig};
pub use orna::{
    adapt_ornanet, exemplar_field, ornament, AdaptConfig, ExemplarField, GlyphDiscriminator,
    OrnaNet, OrnaNetConfig,
};
pub use sampler::{HiddenSlotDraw, HiddenSlotSampler, ObservedRange};
pub use train::{
    finetune_pipeline, finetune_pipeline_with, finetune_step_grads, pretrain_glyphnet,
    pretrain_glyphnet_with, FinetuneConfig, FinetuneOutput, FinetuneReport, GlyphLossReport,
    JointGrads, PretrainConfig,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::charset::{char_index, CharSet, NUM_CHARS};
use crate::dataset::{GlyphGeometry, GlyphImage};
use crate::error::{dim_err, Error, Result};
use crate::raster::{otsu_threshold, Image, Rect};

/// 62 glyph slots indexed by [`char_index`]. `ink` holds the shape channel of
/// every slot; `rgb` (premultiplied on black) is present for color stacks.
/// Unobserved slots are all zero.
#[derive(Debug, Clone, PartialEq)]
pub struct GlyphStack {
    pub size: usize,
    pub observed: [bool; NUM_CHARS],
    pub ink: Vec<Image>,
    pub rgb: Option<Vec<Image>>,
}

impl GlyphStack {
    pub fn empty(size: usize, color: bool) -> Self {
        GlyphStack {
            size,
            observed: [false; NUM_CHARS],
            ink: vec![Image::new(size, size, 1); NUM_CHARS],
            rgb: color.then(|| vec![Image::new(size, size, 3); NUM_CHARS]),
        }
    }

    pub fn observed_count(&self) -> usize {
        self.observed.iter().filter(|&&o| o).count()
    }

    pub fn observed_chars(&self) -> Vec<char> {
        CharSet
            .chars()
            .zip(self.observed)
            .filter_map(|(c, o)| o.then_some(c))
            .collect()
    }

    pub fn is_color(&self) -> bool {
        self.rgb.is_some()
    }

    /// Reads one slot back as a glyph.
    pub fn glyph(&self, ch: char, font_id: &str) -> Result<GlyphImage> {
        let i = char_index(ch)?;
        Ok(GlyphImage {
            ch,
            font_id: font_id.to_string(),
            ink: self.ink[i].clone(),
            rgb: self.rgb.as_ref().map(|r| r[i].clone()),
        })
    }

    /// Keeps only the slots in `keep` observed (used to hide slots of a full
    /// alphabet); the others are zeroed.
    pub fn restrict(&self, keep: &[usize]) -> GlyphStack {
        let mut out = GlyphStack::empty(self.size, self.is_color());
        for &i in keep {
            out.observed[i] = self.observed[i];
            out.ink[i] = self.ink[i].clone();
            if let (Some(dst), Some(src)) = (out.rgb.as_mut(), self.rgb.as_ref()) {
                dst[i] = src[i].clone();
            }
        }
        out
    }

    /// `[62·size²]` slot-major ink values (one network input item).
    pub fn ink_planes(&self) -> Vec<f32> {
        self.ink
            .iter()
            .flat_map(|im| im.data().iter().copied())
            .collect()
    }
}

/// Places each glyph at its [`char_index`] slot. Color glyphs (all or none)
/// make a color stack.
pub fn assemble_input(glyphs: &[GlyphImage]) -> Result<GlyphStack> {
    let first = glyphs
        .first()
        .ok_or_else(|| Error::Invalid("no observed glyphs to assemble".into()))?;
    let size = first.size();
    let color = first.is_color();
    let mut stack = GlyphStack::empty(size, color);
    for g in glyphs {
        let i = char_index(g.ch)?;
        if stack.observed[i] {
            return Err(Error::Invalid(format!("glyph {:?} given twice", g.ch)));
        }
        if g.ink.width() != size || g.ink.height() != size || g.ink.channels() != 1 {
            return Err(dim_err(format!("glyph {:?} is not {size}x{size}x1", g.ch)));
        }
        if g.is_color() != color {
            return Err(Error::Invalid("mix of color and grayscale glyphs".into()));
        }
        stack.observed[i] = true;
        stack.ink[i] = g.ink.clone();
        if let (Some(dst), Some(rgb)) = (stack.rgb.as_mut(), g.rgb.as_ref()) {
            if rgb.width() != size || rgb.height() != size || rgb.channels() != 3 {
                return Err(dim_err(format!(
                    "color of glyph {:?} is not {size}x{size}x3",
                    g.ch
                )));
            }
            dst[i] = rgb.clone();
        }
    }
    Ok(stack)
}

/// Mean unpremultiplied color over the pixels where `ink > threshold`.
pub fn mean_ink_color(ink: &Image, rgb: &Image, threshold: f32) -> Option<[f32; 3]> {
    let mut s = [0.0f64; 3];
    let mut n = 0usize;
    for (i, &a) in ink.data().iter().enumerate() {
        if a > threshold {
            for c in 0..3 {
                s[c] += (rgb.data()[i * 3 + c] / a).min(1.0) as f64;
            }
            n += 1;
        }
    }
    (n > 0).then(|| s.map(|v| (v / n as f64) as f32))
}

/// Crops each character box and fits its ink box into a glyph cell exactly
/// as [`crate::dataset::rasterize_glyph`] does. `ink` is the estimated
/// coverage (pixels outside the character's own box count as background);
/// `rgb` is the ink color unmixed from the background, premultiplied by the
/// coverage. Repeated symbols keep their first occurrence.
pub fn extract_source_glyphs(
    image: &Image,
    char_boxes: &[Rect],
    text: &str,
    geom: &GlyphGeometry,
) -> Result<BTreeMap<char, GlyphImage>> {
    if image.channels() != 3 {
        return Err(dim_err("glyph extraction needs an RGB image"));
    }
    let chars: Vec<char> = text.chars().collect();
    if chars.len() != char_boxes.len() {
        return Err(Error::Invalid(format!(
            "{} characters but {} character boxes",
            chars.len(),
            char_boxes.len()
        )));
    }
    let lum = image.luminance();
    let mut out = BTreeMap::new();
    for (&ch, &b) in chars.iter().zip(char_boxes) {
        char_index(ch)?;
        if b.is_empty() {
            return Err(Error::Invalid(format!("empty box for {ch:?}")));
        }
        if !image.bounds().contains_rect(&b) {
            return Err(Error::Invalid(format!(
                "box {b:?} for {ch:?} is outside the {}x{} image",
                image.width(),
                image.height()
            )));
        }
        if out.contains_key(&ch) {
            continue;
        }
        let (alpha, bg) = ink_coverage(image, &lum, b);
        let (cols, rows) = (b.w as usize, b.h as usize);
        let col_max: Vec<f32> = (0..cols)
            .map(|x| (0..rows).map(|y| alpha.get(x, y, 0)).fold(0.0, f32::max))
            .collect();
        let row_max: Vec<f32> = (0..rows)
            .map(|y| (0..cols).map(|x| alpha.get(x, y, 0)).fold(0.0, f32::max))
            .collect();
        let (x0, x1) = subpixel_extent(&col_max)
            .ok_or_else(|| Error::Invalid(format!("no ink found in the box for {ch:?}")))?;
        let (y0, y1) = subpixel_extent(&row_max).expect("ink present");
        let window = geom.fit_window(b.x as f64 + x0, b.y as f64 + y0, x1 - x0, y1 - y0);
        // Coverage outside the box belongs to neighbors and counts as background.
        let full = Image::from_fn(image.width(), image.height(), 1, |x, y, _| {
            if b.contains_point(x as i32, y as i32) {
                alpha.get(x - b.x as usize, y - b.y as usize, 0)
            } else {
                0.0
            }
        });
        let ink = full.resample_window(window, geom.size, geom.size);
        let color = image.resample_window(window, geom.size, geom.size);
        // Unmix the ink color from the background: p = a·c + (1 − a)·bg.
        let rgb = Image::from_fn(geom.size, geom.size, 3, |x, y, c| {
            let a = ink.get(x, y, 0);
            if a <= 0.0 {
                return 0.0;
            }
            let ink_c = ((color.get(x, y, c) - (1.0 - a) * bg[c]) / a.max(0.25)).clamp(0.0, 1.0);
            a * ink_c
        });
        out.insert(
            ch,
            GlyphImage {
                ch,
                font_id: "scene".into(),
                ink,
                rgb: Some(rgb),
            },
        );
    }
    Ok(out)
}

/// Provenance of a style transfer.
/// Ink coverage in `[0,1]` over box `b` and the background color. Otsu's
/// threshold over the box grown by a two-pixel ring separates the classes;
/// the ring (not the tight box border, which can be mostly ink, e.g. 'I')
/// decides which class is background. Coverage is the luminance position
/// between the background level and the extreme ink level.
fn ink_coverage(image: &Image, lum: &Image, b: Rect) -> (Image, [f32; 3]) {
    let grown = Rect::new(b.x - 2, b.y - 2, b.w + 4, b.h + 4).intersect(&image.bounds());
    let patch = lum.crop(grown).expect("inside image");
    let t = otsu_threshold(patch.data());
    let (w, h) = (grown.w as usize, grown.h as usize);
    let ring: Vec<(usize, usize)> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .filter(|&(x, y)| !b.contains_point(grown.x + x as i32, grown.y + y as i32))
        .collect();
    let hi = ring
        .iter()
        .filter(|&&(x, y)| patch.get(x, y, 0) > t)
        .count();
    let ink_is_dark = 2 * hi > ring.len();
    let is_bg = |v: f32| (v > t) == ink_is_dark;
    let bg_px: Vec<(usize, usize)> = ring
        .iter()
        .copied()
        .filter(|&(x, y)| is_bg(patch.get(x, y, 0)))
        .collect();
    let mut bg = [0.0f32; 3];
    let mut bg_lum = 0.0f32;
    if bg_px.is_empty() {
        bg_lum = t;
    } else {
        for &(x, y) in &bg_px {
            let (gx, gy) = (grown.x as usize + x, grown.y as usize + y);
            for c in 0..3 {
                bg[c] += image.get(gx, gy, c) / bg_px.len() as f32;
            }
            bg_lum += patch.get(x, y, 0) / bg_px.len() as f32;
        }
    }
    let inner = lum.crop(b).expect("inside image");
    let mut ink_vals: Vec<f32> = inner
        .data()
        .iter()
        .copied()
        .filter(|&v| !is_bg(v))
        .collect();
    ink_vals.sort_by(f32::total_cmp);
    // Extreme ink level: 5% into the ink class from its far end, which
    // ignores antialiased edge pixels and isolated noise.
    let ink_lum = match ink_vals.len() {
        0 => t,
        n if ink_is_dark => ink_vals[n / 20],
        n => ink_vals[n - 1 - n / 20],
    };
    let span = ink_lum - bg_lum;
    let alpha = if span.abs() < 1e-6 {
        inner.map(|v| (!is_bg(v)) as u8 as f32)
    } else {
        inner.map(|v| ((v - bg_lum) / span).clamp(0.0, 1.0))
    };
    (alpha, bg)
}

/// Edge coordinates of the inked span along one axis, refined by the partial
/// coverage of the outermost inked lines.
pub(crate) fn subpixel_extent(line_max: &[f32]) -> Option<(f64, f64)> {
    const MIN: f32 = 0.05;
    let first = line_max.iter().position(|&v| v > MIN)?;
    let last = line_max.iter().rposition(|&v| v > MIN)?;
    Some((
        first as f64 + 1.0 - line_max[first] as f64,
        last as f64 + line_max[last] as f64,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferProvenance {
    pub source: String,
    pub seeds: Vec<u64>,
    pub checkpoints: Vec<String>,
}

/// Completed shape and color stacks for one source style.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleTransferResult {
    /// 62 predicted masks, `size×size×1`.
    pub shapes: Vec<Image>,
    /// 62 premultiplied colors, `size×size×3`; zero wherever the shape is below threshold.
    pub colors: Vec<Image>,
    pub observed: [bool; NUM_CHARS],
    pub provenance: TransferProvenance,
}

impl StyleTransferResult {
    pub fn glyph(&self, ch: char) -> Result<GlyphImage> {
        let i = char_index(ch)?;
        Ok(GlyphImage {
            ch,
            font_id: self.provenance.source.clone(),
            ink: self.shapes[i].clone(),
            rgb: Some(self.colors[i].clone()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{bundled_font, rasterize_glyph, LoadedFont};

    fn g(ch: char, v: f32) -> GlyphImage {
        GlyphImage::gray(ch, "f", Image::filled(8, 8, &[v]))
    }

    #[test]
    fn assemble_places_by_index() {
        let s = assemble_input(&[g('A', 0.7)]).unwrap();
        assert!(s.observed[10]);
        assert_eq!(s.observed_count(), 1);
        assert_eq!(s.ink[10], Image::filled(8, 8, &[0.7]));
        assert!(s
            .ink
            .iter()
            .enumerate()
            .all(|(i, im)| i == 10 || im.data().iter().all(|&v| v == 0.0)));
        assert_eq!(s.glyph('A', "f").unwrap(), g('A', 0.7));
    }

    #[test]
    fn assemble_full_and_four() {
        let all: Vec<_> = CharSet.chars().map(|c| g(c, 0.5)).collect();
        assert_eq!(assemble_input(&all).unwrap().observed_count(), 62);
        let four: Vec<_> = "Hope".chars().map(|c| g(c, 0.5)).collect();
        let s = assemble_input(&four).unwrap();
        assert_eq!(s.observed_count(), 4);
        assert_eq!(s.observed_chars(), vec!['H', 'e', 'o', 'p']);
    }

    #[test]
    fn assemble_errors() {
        assert!(assemble_input(&[]).is_err());
        assert!(assemble_input(&[g('A', 0.1), g('A', 0.2)]).is_err());
        let small = GlyphImage::gray('B', "f", Image::new(4, 4, 1));
        assert!(matches!(
            assemble_input(&[g('A', 0.1), small]),
            Err(Error::Dimension(_))
        ));
    }

    fn scene() -> (crate::dataset::SceneSample, LoadedFont) {
        use crate::dataset::{procedural_background, synth_scene, BackgroundKind, SceneSpec};
        let font = LoadedFont::load(&bundled_font("DejaVuSans")).unwrap();
        let bg = procedural_background(BackgroundKind::Flat, 200, 90, 3);
        let spec = SceneSpec {
            text: "AbA7".into(),
            origin: (12, 10),
            scale: 48.0,
            spacing: 4.0,
            seed: 1,
            ink: None,
        };
        (synth_scene(&bg, &font, &spec).unwrap(), font)
    }

    #[test]
    fn extracted_glyphs_match_reference_rasterization() {
        let (s, font) = scene();
        let geom = GlyphGeometry::default();
        let got = extract_source_glyphs(&s.image, &s.char_boxes, &s.text, &geom).unwrap();
        assert_eq!(got.keys().copied().collect::<String>(), "7Ab");
        for (ch, glyph) in &got {
            let reference = rasterize_glyph(&font, *ch, &geom).unwrap();
            let iou = crate::raster::mask_iou(&glyph.ink_mask(0.5), &reference.ink_mask(0.5));
            assert!(iou >= 0.8, "{ch}: IoU {iou}");
            let c = mean_ink_color(&glyph.ink, glyph.rgb.as_ref().unwrap(), 0.5).unwrap();
            for k in 0..3 {
                assert!((c[k] - s.ink[k]).abs() < 0.1, "{ch}: {c:?} vs {:?}", s.ink);
            }
        }
    }

    #[test]
    fn extraction_errors() {
        let (s, _) = scene();
        let geom = GlyphGeometry::default();
        let mut boxes = s.char_boxes.clone();
        boxes[0] = Rect::new(190, 80, 20, 20);
        assert!(extract_source_glyphs(&s.image, &boxes, &s.text, &geom).is_err());
        assert!(extract_source_glyphs(&s.image, &s.char_boxes[..2], &s.text, &geom).is_err());
        boxes[0] = Rect::new(5, 5, 0, 4);
        assert!(extract_source_glyphs(&s.image, &boxes, &s.text, &geom).is_err());
    }
}
