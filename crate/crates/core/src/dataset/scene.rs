//! Synthetic scenes: a word rendered onto a background with known boxes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::charset::validate_text;
use crate::error::{Error, Result};
use crate::raster::{Image, Rect};

use super::font::{ascent_px, render_scene_glyph, LoadedFont};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub text: String,
    /// Top-left of the line box; the baseline sits one ascent below it.
    pub origin: (i32, i32),
    /// Em size in pixels.
    pub scale: f32,
    /// Horizontal gap in pixels between consecutive character boxes.
    pub spacing: f32,
    pub seed: u64,
    /// Ink color; drawn from `seed` (contrasting with the background) if absent.
    #[serde(default)]
    pub ink: Option<[f32; 3]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSample {
    pub image: Image,
    /// The background the word was composited onto.
    pub background: Image,
    pub word_box: Rect,
    pub char_boxes: Vec<Rect>,
    pub text: String,
    pub font_id: String,
    pub ink: [f32; 3],
}

fn mean_color(img: &Image) -> [f32; 3] {
    let mut m = [0.0f64; 3];
    for p in img.data().chunks(3) {
        for c in 0..3 {
            m[c] += p[c] as f64;
        }
    }
    let n = (img.width() * img.height()).max(1) as f64;
    [(m[0] / n) as f32, (m[1] / n) as f32, (m[2] / n) as f32]
}

fn luma(c: [f32; 3]) -> f32 {
    0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]
}

/// Ink color whose luminance differs from the background mean by at least 0.4.
fn contrasting_ink(bg: [f32; 3], rng: &mut ChaCha8Rng) -> [f32; 3] {
    let dark = luma(bg) > 0.5;
    loop {
        let c = [rng.gen::<f32>(), rng.gen::<f32>(), rng.gen::<f32>()];
        if (luma(c) - luma(bg)).abs() >= 0.4 && (luma(c) < luma(bg)) == dark {
            return c;
        }
    }
}

/// Renders `spec.text` in `font` onto `background` (RGB).
///
/// Character boxes are the tight boxes of nonzero coverage; consecutive boxes
/// are separated by `spacing` (rounded to whole pixels). The word box is the
/// union of the character boxes grown by 15% of their height, clipped to the
/// image. Pixels outside the character boxes are left bit-identical.
pub fn synth_scene(background: &Image, font: &LoadedFont, spec: &SceneSpec) -> Result<SceneSample> {
    validate_text(&spec.text)?;
    if background.channels() != 3 {
        return Err(Error::Dimension("scene backgrounds must be RGB".into()));
    }
    if !(spec.scale > 0.0) {
        return Err(Error::Invalid(format!(
            "scale {} must be positive",
            spec.scale
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let ink = spec
        .ink
        .unwrap_or_else(|| contrasting_ink(mean_color(background), &mut rng));

    let baseline = spec.origin.1 as f32 + ascent_px(font, spec.scale);
    let frac = baseline - baseline.floor();
    let mut placed = Vec::new();
    let mut pen = spec.origin.0 as f32;
    for (i, ch) in spec.text.chars().enumerate() {
        let g = render_scene_glyph(font, ch, spec.scale, frac)?;
        let left = if i == 0 {
            pen.round()
        } else {
            (pen + spec.spacing).round()
        };
        let dx = left as i32 - g.tight.x;
        let dy = (baseline - g.baseline).round() as i32;
        let bx = Rect::new(g.tight.x + dx, g.tight.y + dy, g.tight.w, g.tight.h);
        pen = bx.right() as f32;
        placed.push((g, dx, dy, bx));
    }

    let ink_box = placed
        .iter()
        .map(|p| p.3)
        .reduce(|a, b| a.union(&b))
        .expect("text is non-empty");
    let bounds = background.bounds();
    if !bounds.contains_rect(&ink_box) {
        let (required, available) = if ink_box.x < 0 || ink_box.right() > bounds.w {
            (ink_box.right().max(bounds.w) - ink_box.x.min(0), bounds.w)
        } else {
            (ink_box.bottom().max(bounds.h) - ink_box.y.min(0), bounds.h)
        };
        return Err(Error::Layout {
            required: required as f64,
            available: available as f64,
        });
    }

    let mut image = background.clone();
    for (g, dx, dy, bx) in &placed {
        for y in bx.y..bx.bottom() {
            for x in bx.x..bx.right() {
                let a = g.coverage.get((x - dx) as usize, (y - dy) as usize, 0);
                if a <= 0.0 {
                    continue;
                }
                let px = image.pixel_mut(x as usize, y as usize);
                for c in 0..3 {
                    px[c] = px[c] * (1.0 - a) + ink[c] * a;
                }
            }
        }
    }

    let grow = (0.15 * ink_box.h as f32).round() as i32;
    let word_box = Rect::new(
        ink_box.x - grow,
        ink_box.y - grow,
        ink_box.w + 2 * grow,
        ink_box.h + 2 * grow,
    )
    .intersect(&bounds);
    Ok(SceneSample {
        image,
        background: background.clone(),
        word_box,
        char_boxes: placed.into_iter().map(|p| p.3).collect(),
        text: spec.text.clone(),
        font_id: font.id().to_string(),
        ink,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::font::bundled_font;

    fn sans() -> LoadedFont {
        LoadedFont::load(&bundled_font("DejaVuSans")).unwrap()
    }

    fn spec(text: &str) -> SceneSpec {
        SceneSpec {
            text: text.into(),
            origin: (20, 30),
            scale: 48.0,
            spacing: 6.0,
            seed: 1,
            ink: None,
        }
    }

    #[test]
    fn empty_text_is_rejected() {
        let bg = Image::filled(200, 100, &[0.5; 3]);
        assert!(synth_scene(&bg, &sans(), &spec("")).is_err());
    }

    #[test]
    fn changes_stay_inside_char_boxes() {
        let bg = Image::filled(200, 100, &[0.5; 3]);
        let s = synth_scene(&bg, &sans(), &spec("A1")).unwrap();
        assert_eq!(s.char_boxes.len(), 2);
        let mut changed = 0;
        for y in 0..100 {
            for x in 0..200 {
                let inside = s.char_boxes.iter().any(|b| b.contains_point(x, y));
                let same =
                    s.image.pixel(x as usize, y as usize) == bg.pixel(x as usize, y as usize);
                assert!(inside || same, "pixel ({x},{y}) changed outside the boxes");
                changed += (!same) as usize;
            }
        }
        assert!(changed > 100);
        for b in &s.char_boxes {
            assert!(s.word_box.contains_rect(b));
        }
        assert!(bg.bounds().contains_rect(&s.word_box));
    }

    #[test]
    fn overflow_is_layout_error() {
        let bg = Image::filled(60, 100, &[0.5; 3]);
        match synth_scene(&bg, &sans(), &spec("WWW")) {
            Err(Error::Layout {
                required,
                available,
            }) => {
                assert_eq!(available, 60.0);
                assert!(required > 60.0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ink_contrasts_with_background() {
        for seed in 0..20 {
            let bg = Image::filled(200, 100, &[0.9, 0.85, 0.8]);
            let s = synth_scene(&bg, &sans(), &SceneSpec { seed, ..spec("E5") }).unwrap();
            assert!(luma(s.ink) < luma([0.9, 0.85, 0.8]) - 0.39);
        }
    }
}
