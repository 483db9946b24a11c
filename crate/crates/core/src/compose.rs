//! Text replacement in a scene: target-character layout, alpha compositing
//! and the end-to-end edit (restore the word's background, complete the
//! source glyph stack, color it, lay out and composite the target text).

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::charset::{char_index, validate_text};
use crate::dataset::{rasterize_glyph, GlyphGeometry, GlyphImage, LoadedFont, SceneSample};
use crate::error::{dim_err, Error, Result};
use crate::eval::{ssim, Checkpoint};
use crate::glyph::{
    adapt_ornanet, assemble_input, extract_source_glyphs, mean_ink_color, ornament,
    predict_glyph_shapes, subpixel_extent, AdaptConfig, GlyphNet, OrnaNet,
};
use crate::inpaint::{inpaint_region, InpaintModel};
use crate::nn::FlushDenormals;
use crate::raster::{mask_iou, Image, Rect};

/// Default horizontal overflow allowed past the right edge of the word box,
/// as a fraction of its width.
pub const DEFAULT_SLACK: f64 = 0.1;

/// Cell of one target character.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub ch: char,
    pub rect: Rect,
    /// Uniform downscale applied to the source cell metrics (1 when the text fits).
    pub scale: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Lays the target text out with the source's metrics.
///
/// Equal-length texts reuse the source boxes. Otherwise every cell gets the
/// median source width and height, consecutive cells are separated by the
/// median source gap, the first cell starts at the first source box and all
/// cells sit on the median source bottom. When the run would end more than
/// `slack · word_box.w` past the right edge of the word box, all metrics are
/// scaled by the largest `s < 1` that fits; `s < 0.5` is a layout error.
pub fn layout_targets(
    word_box: Rect,
    char_boxes: &[Rect],
    source_text: &str,
    target_text: &str,
    slack: f64,
) -> Result<Vec<Placement>> {
    validate_text(source_text)?;
    validate_text(target_text)?;
    let n_src = source_text.chars().count();
    if n_src != char_boxes.len() {
        return Err(Error::Invalid(format!(
            "{n_src} source characters but {} character boxes",
            char_boxes.len()
        )));
    }
    if char_boxes.iter().any(|b| b.is_empty()) || word_box.is_empty() {
        return Err(Error::Invalid("empty box".into()));
    }
    if !(slack >= 0.0) {
        return Err(Error::Invalid(format!("slack {slack} must be nonnegative")));
    }
    if target_text.chars().count() == n_src {
        return Ok(target_text
            .chars()
            .zip(char_boxes)
            .map(|(ch, &rect)| Placement {
                ch,
                rect,
                scale: 1.0,
            })
            .collect());
    }
    let w = median(char_boxes.iter().map(|b| b.w as f64).collect());
    let h = median(char_boxes.iter().map(|b| b.h as f64).collect());
    let bottom = median(char_boxes.iter().map(|b| b.bottom() as f64).collect());
    let gap = if n_src > 1 {
        median(
            char_boxes
                .windows(2)
                .map(|p| (p[1].x - p[0].right()) as f64)
                .collect(),
        )
    } else {
        0.0
    };
    let n = target_text.chars().count() as f64;
    let extent = n * w + (n - 1.0) * gap;
    let x0 = char_boxes[0].x as f64;
    let available = word_box.right() as f64 + slack * word_box.w as f64 - x0;
    let s = (available / extent).min(1.0);
    if !(s >= 0.5) {
        return Err(Error::Layout {
            required: 0.5 * extent,
            available,
        });
    }
    let top = (bottom - h * s).round() as i32;
    Ok(target_text
        .chars()
        .enumerate()
        .map(|(i, ch)| {
            let left = x0 + i as f64 * (w + gap) * s;
            let (l, r) = (left.round() as i32, (left + w * s).round() as i32);
            Placement {
                ch,
                rect: Rect::new(l, top, (r - l).max(1), (bottom as i32 - top).max(1)),
                scale: s,
            }
        })
        .collect())
}

/// Unpremultiplied color of every pixel of `glyph`. Pixels without color
/// information (no ink, or premultiplied black) take the glyph's mean color.
fn glyph_color(glyph: &GlyphImage) -> Result<Image> {
    let rgb = glyph
        .rgb
        .as_ref()
        .ok_or_else(|| Error::Invalid(format!("glyph {:?} has no color", glyph.ch)))?;
    let (ink, g) = (&glyph.ink, glyph.size());
    let has_color = |x, y| ink.get(x, y, 0) > 0.0 && (0..3).any(|c| rgb.get(x, y, c) > 0.0);
    let mut sum = [0.0f64; 3];
    let mut n = 0usize;
    for y in 0..g {
        for x in 0..g {
            if has_color(x, y) {
                for c in 0..3 {
                    sum[c] += (rgb.get(x, y, c) / ink.get(x, y, 0)).min(1.0) as f64;
                }
                n += 1;
            }
        }
    }
    let fill = sum.map(|v| if n > 0 { (v / n as f64) as f32 } else { 0.0 });
    Ok(Image::from_fn(g, g, 3, |x, y, c| {
        if has_color(x, y) {
            (rgb.get(x, y, c) / ink.get(x, y, 0)).min(1.0)
        } else {
            fill[c]
        }
    }))
}

/// Blends `color` under coverage `mask` (both glyph-sized) into `out`, the
/// glyph cell mapped onto the continuous `window`. Only pixels of `clip`
/// whose centers fall inside the window change.
fn composite_window(
    out: &mut Image,
    color: &Image,
    mask: &Image,
    window: (f64, f64, f64, f64),
    clip: Rect,
) {
    let (x0, y0, x1, y1) = window;
    let (g_w, g_h) = (mask.width() as f64, mask.height() as f64);
    let clip = clip.intersect(&out.bounds());
    if clip.is_empty() || x1 <= x0 || y1 <= y0 {
        return;
    }
    for py in clip.y..clip.bottom() {
        let v = (py as f64 + 0.5 - y0) / (y1 - y0) * g_h;
        if !(0.0..g_h).contains(&v) {
            continue;
        }
        for px in clip.x..clip.right() {
            let u = (px as f64 + 0.5 - x0) / (x1 - x0) * g_w;
            if !(0.0..g_w).contains(&u) {
                continue;
            }
            let a = mask.sample(u - 0.5, v - 0.5, 0);
            if a <= 0.0 {
                continue;
            }
            let p = out.pixel_mut(px as usize, py as usize);
            for (c, dst) in p.iter_mut().enumerate() {
                let gc = color.sample(u - 0.5, v - 0.5, c);
                *dst = (1.0 - a) * *dst + a * gc;
            }
        }
    }
}

/// `(1 − α)·background + α·color` inside the placement, where `α` is `mask`
/// and `color` the glyph's unpremultiplied color, both bilinearly resampled
/// onto the placement rectangle. Everything else is returned unchanged.
pub fn composite(
    background: &Image,
    glyph: &GlyphImage,
    mask: &Image,
    placement: &Placement,
) -> Result<Image> {
    if background.channels() != 3 {
        return Err(dim_err("compositing needs an RGB background"));
    }
    if mask.channels() != 1 || mask.width() != glyph.size() || mask.height() != glyph.size() {
        return Err(dim_err(format!(
            "mask is {}x{}x{}, glyph is {}px",
            mask.width(),
            mask.height(),
            mask.channels(),
            glyph.size()
        )));
    }
    let r = placement.rect;
    if r.is_empty() || !background.bounds().contains_rect(&r) {
        return Err(Error::Invalid(format!(
            "placement {r:?} is outside the {}x{} image",
            background.width(),
            background.height()
        )));
    }
    let color = glyph_color(glyph)?;
    let mut out = background.clone();
    let window = (r.x as f64, r.y as f64, r.right() as f64, r.bottom() as f64);
    composite_window(&mut out, &color, mask, window, r);
    Ok(out)
}

/// Where a glyph cell lands when its ink box is fit into `rect` with its
/// aspect preserved, centered horizontally and resting on the bottom edge.
fn letterbox(mask: &Image, rect: Rect) -> Option<(f64, f64, f64, f64)> {
    let g = mask.width();
    let col_max: Vec<f32> = (0..g)
        .map(|x| (0..g).map(|y| mask.get(x, y, 0)).fold(0.0, f32::max))
        .collect();
    let row_max: Vec<f32> = (0..g)
        .map(|y| (0..g).map(|x| mask.get(x, y, 0)).fold(0.0, f32::max))
        .collect();
    let (ix0, ix1) = subpixel_extent(&col_max)?;
    let (iy0, iy1) = subpixel_extent(&row_max)?;
    let k = (rect.w as f64 / (ix1 - ix0)).min(rect.h as f64 / (iy1 - iy0));
    let left = rect.x as f64 + (rect.w as f64 - (ix1 - ix0) * k) / 2.0 - ix0 * k;
    let top = rect.bottom() as f64 - iy1 * k;
    Some((left, top, left + g as f64 * k, top + g as f64 * k))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditRequest {
    pub image: Image,
    pub word_box: Rect,
    pub char_boxes: Vec<Rect>,
    pub source_text: String,
    pub target_text: String,
}

impl EditRequest {
    pub fn validate(&self) -> Result<()> {
        if self.image.channels() != 3 || !self.image.in_unit_range() {
            return Err(Error::Invalid("edit image must be RGB in [0,1]".into()));
        }
        validate_text(&self.source_text)?;
        validate_text(&self.target_text)?;
        if self.target_text.is_empty() {
            return Err(Error::Invalid("target text is empty".into()));
        }
        if self.source_text.chars().count() != self.char_boxes.len() {
            return Err(Error::Invalid(format!(
                "{} source characters but {} character boxes",
                self.source_text.chars().count(),
                self.char_boxes.len()
            )));
        }
        let bounds = self.image.bounds();
        for b in std::iter::once(&self.word_box).chain(&self.char_boxes) {
            if b.is_empty() || !bounds.contains_rect(b) {
                return Err(Error::Invalid(format!(
                    "box {b:?} is empty or outside the {}x{} image",
                    self.image.width(),
                    self.image.height()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EditConfig {
    /// Scene-time fitting of the color network to the extracted exemplars.
    pub adapt: AdaptConfig,
    pub slack: f64,
}

impl Default for EditConfig {
    fn default() -> Self {
        EditConfig {
            adapt: AdaptConfig::default(),
            slack: DEFAULT_SLACK,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditAudit {
    pub placements: Vec<Placement>,
    /// Checkpoint ids by role (`inpaint`, `glyph`, `orna`).
    pub checkpoints: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    /// Symbols whose glyphs were taken from the scene.
    pub observed: String,
    /// Color loss of the scene adaptation at its first and last step.
    pub adapt_loss: Option<(f64, f64)>,
    pub stage_timings: Vec<StageTiming>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditedImage {
    pub image: Image,
    /// The inpainted word box, before any glyph was composited.
    pub restored_background: Image,
    pub audit: EditAudit,
}

struct Stages(Vec<StageTiming>);

impl Stages {
    fn run<T>(&mut self, stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let r = f().map_err(|e| e.in_stage(stage));
        self.0.push(StageTiming {
            stage: stage.into(),
            seconds: t.elapsed().as_secs_f64(),
        });
        r
    }
}

/// Replaces the source text of `request` with its target text.
///
/// Stages, in order: loading the checkpoints, extracting the source glyphs
/// from the scene, inpainting the whole word box, completing the glyph stack,
/// adapting the color network to the scene and coloring the stack, layout
/// and compositing. Errors carry the stage name (`module::operation`). Pixels
/// outside the word box are returned bit-identical; glyphs are clipped to it.
///
/// The pipeline itself is deterministic: `seed` is recorded in the audit and
/// names the run, but no stage draws random numbers.
pub fn edit_text(
    request: &EditRequest,
    inpaint_ckpt: &Checkpoint,
    glyph_ckpt: &Checkpoint,
    orna_ckpt: &Checkpoint,
    config: &EditConfig,
    seed: u64,
) -> Result<EditedImage> {
    let _ftz = FlushDenormals::new();
    let mut st = Stages(Vec::new());
    st.run("compositor_pipeline::request", || request.validate())?;
    let (inpainter, glyph_net, orna_net) = st.run("eval_harness::load_checkpoint", || {
        let i = InpaintModel::<f32>::from_checkpoint(inpaint_ckpt)?;
        let g = GlyphNet::<f32>::from_checkpoint(glyph_ckpt)?;
        let o = OrnaNet::<f32>::from_checkpoint(orna_ckpt)?;
        if g.config.glyph_size != o.config.glyph_size {
            return Err(Error::Incompatible(format!(
                "{}px glyph network with a {}px ornament network",
                g.config.glyph_size, o.config.glyph_size
            )));
        }
        Ok((i, g, o))
    })?;
    let g = glyph_net.config.glyph_size;
    let geom = GlyphGeometry {
        size: g,
        ..GlyphGeometry::default()
    };
    let exemplars = st.run("glyph_transfer::extract_source_glyphs", || {
        let glyphs = extract_source_glyphs(
            &request.image,
            &request.char_boxes,
            &request.source_text,
            &geom,
        )?;
        assemble_input(&glyphs.into_values().collect::<Vec<_>>())
    })?;
    let restored = st.run("background_restorer::inpaint_region", || {
        inpaint_region(&inpainter, &request.image, request.word_box)
    })?;
    let shapes = st.run("glyph_transfer::predict_glyph_shapes", || {
        predict_glyph_shapes(&glyph_net, &exemplars)
    })?;
    let (colors, adapt_loss) = st.run("glyph_transfer::ornament", || {
        let (adapted, losses) = adapt_ornanet(&orna_net, &exemplars, &config.adapt)?;
        let colors = ornament(&adapted, &shapes, &exemplars)?;
        Ok((colors, losses.first().copied().zip(losses.last().copied())))
    })?;
    let placements = st.run("compositor_pipeline::layout_targets", || {
        layout_targets(
            request.word_box,
            &request.char_boxes,
            &request.source_text,
            &request.target_text,
            config.slack,
        )
    })?;
    let image = st.run("compositor_pipeline::composite", || {
        let mut out = restored.clone();
        let fallback = mean_color(&exemplars.ink, exemplars.rgb.as_deref().unwrap_or(&[]));
        for p in &placements {
            let slot = char_index(p.ch)?;
            let mask = &shapes[slot];
            let glyph = GlyphImage {
                ch: p.ch,
                font_id: "edit".into(),
                ink: mask.clone(),
                rgb: Some(colors[slot].clone()),
            };
            let mut color = glyph_color(&glyph)?;
            if mean_ink_color(mask, &colors[slot], orna_net.config.threshold).is_none() {
                color = Image::filled(g, g, &fallback);
            }
            if let Some(window) = letterbox(mask, p.rect) {
                composite_window(&mut out, &color, mask, window, request.word_box);
            }
        }
        Ok(out)
    })?;
    debug_assert!(outside_unchanged(&request.image, &image, request.word_box));
    let restored_background = restored.crop(request.word_box)?;
    let mut checkpoints = BTreeMap::new();
    checkpoints.insert("inpaint".to_string(), inpaint_ckpt.id());
    checkpoints.insert("glyph".to_string(), glyph_ckpt.id());
    checkpoints.insert("orna".to_string(), orna_ckpt.id());
    let mut seeds = BTreeMap::new();
    seeds.insert("edit".to_string(), seed);
    seeds.insert("inpaint".to_string(), inpaint_ckpt.meta.seed);
    seeds.insert("glyph".to_string(), glyph_ckpt.meta.seed);
    seeds.insert("orna".to_string(), orna_ckpt.meta.seed);
    Ok(EditedImage {
        image,
        restored_background,
        audit: EditAudit {
            placements,
            checkpoints,
            seeds,
            observed: exemplars.observed_chars().into_iter().collect(),
            adapt_loss,
            stage_timings: st.0,
        },
    })
}

fn mean_color(ink: &[Image], rgb: &[Image]) -> [f32; 3] {
    let cols: Vec<[f32; 3]> = ink
        .iter()
        .zip(rgb)
        .filter_map(|(a, c)| mean_ink_color(a, c, 0.5))
        .collect();
    if cols.is_empty() {
        return [0.0; 3];
    }
    let mut m = [0.0f32; 3];
    for c in &cols {
        for k in 0..3 {
            m[k] += c[k] / cols.len() as f32;
        }
    }
    m
}

fn outside_unchanged(a: &Image, b: &Image, r: Rect) -> bool {
    (0..a.height()).all(|y| {
        (0..a.width())
            .all(|x| r.contains_point(x as i32, y as i32) || a.pixel(x, y) == b.pixel(x, y))
    })
}

/// Ground-truth scores of an edit of a synthetic scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditScores {
    /// Pixels outside the word box that differ from the input.
    pub outside_changed: usize,
    /// SSIM between the luminance of the restored word box and of the true
    /// background there.
    pub background_ssim: f64,
    /// Per distinct target symbol: IoU of the binarized ink extracted from
    /// the edited image at its placement against the reference rasterization
    /// of that symbol in the scene's font.
    pub ink_iou: Vec<(char, f64)>,
}

pub fn score_edit(
    scene: &SceneSample,
    edited: &EditedImage,
    font: &LoadedFont,
    target_text: &str,
    geom: &GlyphGeometry,
) -> Result<EditScores> {
    scene
        .image
        .check_same_shape(&edited.image, "edited image")?;
    let wb = scene.word_box;
    let mut outside_changed = 0;
    for y in 0..scene.image.height() {
        for x in 0..scene.image.width() {
            if !wb.contains_point(x as i32, y as i32)
                && scene.image.pixel(x, y) != edited.image.pixel(x, y)
            {
                outside_changed += 1;
            }
        }
    }
    let truth = scene.background.crop(wb)?.luminance();
    let background_ssim = ssim(&edited.restored_background.luminance(), &truth)?;
    let rects: Vec<Rect> = edited
        .audit
        .placements
        .iter()
        .map(|p| p.rect.intersect(&wb))
        .collect();
    let glyphs = extract_source_glyphs(&edited.image, &rects, target_text, geom)?;
    let ink_iou = glyphs
        .iter()
        .map(|(&ch, g)| {
            let reference = rasterize_glyph(font, ch, geom)?;
            Ok((
                ch,
                mask_iou(
                    &g.ink_mask(geom.threshold),
                    &reference.ink_mask(geom.threshold),
                ),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EditScores {
        outside_changed,
        background_ssim,
        ink_iou,
    })
}
