//! Font sources and glyph rasterization.
//!
//! A [`FontSource`] is a font file plus an optional synthetic style (slant,
//! horizontal stretch, stroke weight), which lets two vendored files stand in
//! for a family of distinct fonts.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use ab_glyph::{Font, FontArc, OutlineCurve};
use ab_glyph_rasterizer::{point, Point, Rasterizer};
use serde::{Deserialize, Serialize};

use crate::charset::char_index;
use crate::error::{Error, Result};
use crate::raster::{Image, Rect};

use super::GlyphImage;

/// Synthetic restyling applied to the outline before rasterization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthStyle {
    /// Horizontal shear per unit of height (positive leans right).
    pub slant: f32,
    /// Horizontal scale factor.
    pub width: f32,
    /// Stroke thickening radius as a fraction of the em.
    pub weight: f32,
}

impl Default for SynthStyle {
    fn default() -> Self {
        SynthStyle {
            slant: 0.0,
            width: 1.0,
            weight: 0.0,
        }
    }
}

/// Named style variants used to widen a small set of font files.
pub const VARIANTS: [(&str, SynthStyle); 10] = [
    (
        "regular",
        SynthStyle {
            slant: 0.0,
            width: 1.0,
            weight: 0.0,
        },
    ),
    (
        "oblique",
        SynthStyle {
            slant: 0.22,
            width: 1.0,
            weight: 0.0,
        },
    ),
    (
        "condensed",
        SynthStyle {
            slant: 0.0,
            width: 0.78,
            weight: 0.0,
        },
    ),
    (
        "bold",
        SynthStyle {
            slant: 0.0,
            width: 1.0,
            weight: 0.035,
        },
    ),
    (
        "bold-oblique",
        SynthStyle {
            slant: 0.22,
            width: 1.0,
            weight: 0.035,
        },
    ),
    (
        "extended",
        SynthStyle {
            slant: 0.0,
            width: 1.25,
            weight: 0.0,
        },
    ),
    (
        "backslant",
        SynthStyle {
            slant: -0.16,
            width: 1.0,
            weight: 0.0,
        },
    ),
    (
        "bold-condensed",
        SynthStyle {
            slant: 0.0,
            width: 0.78,
            weight: 0.035,
        },
    ),
    (
        "oblique-extended",
        SynthStyle {
            slant: 0.22,
            width: 1.25,
            weight: 0.0,
        },
    ),
    (
        "bold-extended",
        SynthStyle {
            slant: 0.0,
            width: 1.25,
            weight: 0.035,
        },
    ),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FontSource {
    pub id: String,
    pub path: PathBuf,
    #[serde(default)]
    pub style: SynthStyle,
}

impl FontSource {
    pub fn from_file(path: impl Into<PathBuf>) -> Self {
        let path = path.into();
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "font".into());
        FontSource {
            id,
            path,
            style: SynthStyle::default(),
        }
    }

    pub fn with_variant(&self, name: &str, style: SynthStyle) -> Self {
        FontSource {
            id: if name == "regular" {
                self.id.clone()
            } else {
                format!("{}-{}", self.id, name)
            },
            path: self.path.clone(),
            style,
        }
    }
}

/// Font files (`.ttf`/`.otf`) in `dir`, sorted by file name.
pub fn discover_fonts(dir: &Path) -> Result<Vec<FontSource>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = p
            .extension()
            .map(|e| e.to_string_lossy().to_ascii_lowercase())
            .unwrap_or_default();
        if ext == "ttf" || ext == "otf" {
            paths.push(p);
        }
    }
    paths.sort();
    Ok(paths.into_iter().map(FontSource::from_file).collect())
}

/// Expands `base` fonts to `n` sources, cycling files fastest and then the
/// [`VARIANTS`] table, so the first `base.len()` entries are the plain files.
pub fn expand_fonts(base: &[FontSource], n: usize) -> Result<Vec<FontSource>> {
    if base.is_empty() {
        return Err(Error::Invalid("no font files given".into()));
    }
    let max = base.len() * VARIANTS.len();
    if n > max {
        return Err(Error::Invalid(format!(
            "{n} fonts requested but only {max} distinct sources exist ({} files x {} variants)",
            base.len(),
            VARIANTS.len()
        )));
    }
    Ok((0..n)
        .map(|i| {
            let (name, style) = VARIANTS[i / base.len()];
            base[i % base.len()].with_variant(name, style)
        })
        .collect())
}

/// Font bundled with the crate, by file stem (`DejaVuSans`, `DejaVuSerif`).
pub fn bundled_font(stem: &str) -> FontSource {
    FontSource::from_file(bundled_font_dir().join(format!("{stem}.ttf")))
}

pub fn bundled_font_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("assets")
        .join("fonts")
}

/// A parsed font with its synthetic style.
#[derive(Clone)]
pub struct LoadedFont {
    source: FontSource,
    font: Arc<FontArc>,
}

impl std::fmt::Debug for LoadedFont {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LoadedFont")
            .field("source", &self.source)
            .finish()
    }
}

/// Outline in font units with y pointing down, after the synthetic transform.
struct GlyphOutline {
    curves: Vec<OutlineCurve>,
    min: Point,
    max: Point,
}

impl LoadedFont {
    pub fn load(source: &FontSource) -> Result<Self> {
        let bytes = std::fs::read(&source.path).map_err(|e| Error::io(&source.path, e))?;
        let font = FontArc::try_from_vec(bytes).map_err(|e| {
            Error::io(
                &source.path,
                std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()),
            )
        })?;
        Ok(LoadedFont {
            source: source.clone(),
            font: Arc::new(font),
        })
    }

    pub fn id(&self) -> &str {
        &self.source.id
    }

    pub fn source(&self) -> &FontSource {
        &self.source
    }

    fn units_per_em(&self) -> f32 {
        self.font.units_per_em().unwrap_or(1000.0)
    }

    /// Ascent in font units.
    fn ascent(&self) -> f32 {
        self.font.ascent_unscaled()
    }

    fn outline(&self, ch: char) -> Result<GlyphOutline> {
        char_index(ch)?;
        let missing = || Error::MissingGlyph {
            font_id: self.source.id.clone(),
            ch,
        };
        let id = self.font.glyph_id(ch);
        if id.0 == 0 {
            return Err(missing());
        }
        let outline = self.font.outline(id).ok_or_else(missing)?;
        let st = self.source.style;
        let tf = |p: &Point| point(st.width * (p.x + st.slant * p.y), -p.y);
        let curves: Vec<OutlineCurve> = outline
            .curves
            .iter()
            .map(|c| match c {
                OutlineCurve::Line(a, b) => OutlineCurve::Line(tf(a), tf(b)),
                OutlineCurve::Quad(a, b, c) => OutlineCurve::Quad(tf(a), tf(b), tf(c)),
                OutlineCurve::Cubic(a, b, c, d) => OutlineCurve::Cubic(tf(a), tf(b), tf(c), tf(d)),
            })
            .collect();
        if curves.is_empty() {
            return Err(missing());
        }
        let (min, max) = curve_bounds(&curves);
        Ok(GlyphOutline { curves, min, max })
    }

    /// Coverage raster of `ch` with `px_per_unit` scale; the outline's top-left
    /// lands at `(pad + frac.0, pad + frac.1)`. Returns the raster and the
    /// position of the outline origin in it.
    fn render(
        &self,
        ch: char,
        px_per_em: f32,
        pad: usize,
        frac: (f32, f32),
    ) -> Result<(Image, Point)> {
        let o = self.outline(ch)?;
        let s = px_per_em / self.units_per_em();
        let r = self.source.style.weight * px_per_em;
        let pad = pad + r.ceil() as usize;
        let w = ((o.max.x - o.min.x) * s + frac.0).ceil() as usize + 2 * pad;
        let h = ((o.max.y - o.min.y) * s + frac.1).ceil() as usize + 2 * pad;
        let off = point(
            pad as f32 + frac.0 - o.min.x * s,
            pad as f32 + frac.1 - o.min.y * s,
        );
        let mut img = rasterize_curves(&o.curves, s, off, w, h);
        if r > 0.0 {
            img = dilate(&img, r);
        }
        Ok((img, off))
    }
}

fn curve_bounds(curves: &[OutlineCurve]) -> (Point, Point) {
    let mut min = point(f32::MAX, f32::MAX);
    let mut max = point(f32::MIN, f32::MIN);
    let mut add = |p: Point| {
        min.x = min.x.min(p.x);
        min.y = min.y.min(p.y);
        max.x = max.x.max(p.x);
        max.y = max.y.max(p.y);
    };
    // Sample the curves; control points alone would overestimate the box.
    const STEPS: usize = 16;
    for c in curves {
        for i in 0..=STEPS {
            let t = i as f32 / STEPS as f32;
            let u = 1.0 - t;
            let p = match c {
                OutlineCurve::Line(a, b) => point(u * a.x + t * b.x, u * a.y + t * b.y),
                OutlineCurve::Quad(a, b, d) => point(
                    u * u * a.x + 2.0 * u * t * b.x + t * t * d.x,
                    u * u * a.y + 2.0 * u * t * b.y + t * t * d.y,
                ),
                OutlineCurve::Cubic(a, b, d, e) => point(
                    u * u * u * a.x
                        + 3.0 * u * u * t * b.x
                        + 3.0 * u * t * t * d.x
                        + t * t * t * e.x,
                    u * u * u * a.y
                        + 3.0 * u * u * t * b.y
                        + 3.0 * u * t * t * d.y
                        + t * t * t * e.y,
                ),
            };
            add(p);
        }
    }
    (min, max)
}

fn rasterize_curves(curves: &[OutlineCurve], s: f32, off: Point, w: usize, h: usize) -> Image {
    let tp = |p: &Point| point(p.x * s + off.x, p.y * s + off.y);
    let mut r = Rasterizer::new(w, h);
    for c in curves {
        match c {
            OutlineCurve::Line(a, b) => r.draw_line(tp(a), tp(b)),
            OutlineCurve::Quad(a, b, d) => r.draw_quad(tp(a), tp(b), tp(d)),
            OutlineCurve::Cubic(a, b, d, e) => r.draw_cubic(tp(a), tp(b), tp(d), tp(e)),
        }
    }
    let mut img = Image::new(w, h, 1);
    // Coverage accumulates along rows, leaving float residue past the outline.
    r.for_each_pixel_2d(|x, y, v| {
        let v = if v < 1e-3 { 0.0 } else { v.min(1.0) };
        img.set(x as usize, y as usize, 0, v)
    });
    img
}

/// Grayscale dilation by a disc of (fractional) radius `r` with a soft rim.
fn dilate(img: &Image, r: f32) -> Image {
    let ri = r.ceil() as i32 + 1;
    let mut taps = Vec::new();
    for dy in -ri..=ri {
        for dx in -ri..=ri {
            let d = ((dx * dx + dy * dy) as f32).sqrt();
            let w = (r + 0.5 - d).clamp(0.0, 1.0);
            if w > 0.0 {
                taps.push((dx, dy, w));
            }
        }
    }
    let (w, h) = (img.width() as i32, img.height() as i32);
    Image::from_fn(img.width(), img.height(), 1, |x, y, _| {
        let mut best = 0.0f32;
        for &(dx, dy, wt) in &taps {
            let (sx, sy) = (x as i32 + dx, y as i32 + dy);
            if sx >= 0 && sy >= 0 && sx < w && sy < h {
                best = best.max(img.get(sx as usize, sy as usize, 0) * wt);
            }
        }
        best
    })
}

/// Settings shared by glyph rendering and glyph extraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GlyphGeometry {
    pub size: usize,
    /// Empty border on each side, as a fraction of `size`.
    pub margin: f32,
    /// Ink/background split for binarized masks.
    pub threshold: f32,
}

impl Default for GlyphGeometry {
    fn default() -> Self {
        GlyphGeometry {
            size: 64,
            margin: 0.1,
            threshold: 0.5,
        }
    }
}

impl GlyphGeometry {
    /// Side of the square the ink box is fitted into.
    pub fn inner(&self) -> f32 {
        self.size as f32 * (1.0 - 2.0 * self.margin)
    }

    /// Continuous source window that maps an ink box of `w×h` (anchored at
    /// `(x,y)`) onto the cell: longest side fills the inner square, centered.
    pub fn fit_window(&self, x: f64, y: f64, w: f64, h: f64) -> (f64, f64, f64, f64) {
        let scale = self.inner() as f64 / w.max(h);
        let side = self.size as f64 / scale;
        let cx = x + w / 2.0;
        let cy = y + h / 2.0;
        (
            cx - side / 2.0,
            cy - side / 2.0,
            cx + side / 2.0,
            cy + side / 2.0,
        )
    }
}

/// Renders `ch` as an ink-on-black grayscale glyph whose tight box is fitted
/// into the cell with the configured margin and centered.
pub fn rasterize_glyph(font: &LoadedFont, ch: char, geom: &GlyphGeometry) -> Result<GlyphImage> {
    char_index(ch)?;
    if geom.size < 8 {
        return Err(Error::Invalid(format!(
            "glyph size {} is below 8",
            geom.size
        )));
    }
    let o = font.outline(ch)?;
    let upem = font.units_per_em();
    let bw = o.max.x - o.min.x;
    let bh = o.max.y - o.min.y;
    let weight_units = font.source.style.weight * upem;
    let s = geom.inner() / (bw.max(bh) + 2.0 * weight_units);
    let r = weight_units * s;
    let size = geom.size as f32;
    let off = point(
        (size - bw * s) / 2.0 - o.min.x * s,
        (size - bh * s) / 2.0 - o.min.y * s,
    );
    let mut img = rasterize_curves(&o.curves, s, off, geom.size, geom.size);
    if r > 0.0 {
        img = dilate(&img, r);
    }
    Ok(GlyphImage::gray(ch, font.id(), img))
}

/// A single character rendered at scene scale.
pub(crate) struct SceneGlyph {
    pub coverage: Image,
    /// Tight box of nonzero coverage within `coverage`.
    pub tight: Rect,
    /// Row of the baseline within `coverage`.
    pub baseline: f32,
}

pub(crate) fn render_scene_glyph(
    font: &LoadedFont,
    ch: char,
    px_per_em: f32,
    baseline_frac: f32,
) -> Result<SceneGlyph> {
    let o = font.outline(ch)?;
    let s = px_per_em / font.units_per_em();
    // Sub-pixel shift that puts the baseline at `baseline_frac` within its row.
    let frac_y = (baseline_frac + o.min.y * s).rem_euclid(1.0);
    let (coverage, origin) = font.render(ch, px_per_em, 1, (0.0, frac_y))?;
    let tight = coverage.ink_bbox(0.0).ok_or_else(|| Error::MissingGlyph {
        font_id: font.id().to_string(),
        ch,
    })?;
    Ok(SceneGlyph {
        coverage,
        tight,
        baseline: origin.y,
    })
}

/// Ascent in pixels at the given em size.
pub(crate) fn ascent_px(font: &LoadedFont, px_per_em: f32) -> f32 {
    font.ascent() * px_per_em / font.units_per_em()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sans() -> LoadedFont {
        LoadedFont::load(&bundled_font("DejaVuSans")).unwrap()
    }

    fn coverage(g: &GlyphImage) -> f64 {
        g.ink_coverage(0.5)
    }

    #[test]
    fn shape_and_range() {
        let g = rasterize_glyph(&sans(), 'A', &GlyphGeometry::default()).unwrap();
        assert_eq!((g.ink.width(), g.ink.height()), (64, 64));
        assert!(g.ink.in_unit_range());
        let c = coverage(&g);
        assert!(c > 0.0 && c < 0.95);
    }

    #[test]
    fn space_is_rejected() {
        assert!(matches!(
            rasterize_glyph(&sans(), ' ', &GlyphGeometry::default()),
            Err(Error::NotInCharSet(' '))
        ));
    }

    #[test]
    fn tiny_size_is_rejected() {
        let geom = GlyphGeometry {
            size: 7,
            ..Default::default()
        };
        assert!(rasterize_glyph(&sans(), 'A', &geom).is_err());
    }

    #[test]
    fn unreadable_font_is_io_error() {
        let src = FontSource::from_file("/nonexistent/font.ttf");
        assert!(matches!(LoadedFont::load(&src), Err(Error::Io { .. })));
    }

    #[test]
    fn ink_box_respects_margin_and_is_centered() {
        let geom = GlyphGeometry::default();
        for variant in VARIANTS {
            let font =
                LoadedFont::load(&bundled_font("DejaVuSerif").with_variant(variant.0, variant.1))
                    .unwrap();
            for ch in ['A', 'g', '7', 'W', 'i'] {
                let g = rasterize_glyph(&font, ch, &geom).unwrap();
                let b = g.ink.ink_bbox(0.0).unwrap();
                // 10% of 64 is 6.4px; antialiasing may touch one more pixel.
                assert!(
                    b.x >= 5 && b.y >= 5 && b.right() <= 59 && b.bottom() <= 59,
                    "{ch} {b:?}"
                );
                let long = b.w.max(b.h);
                assert!((50..=54).contains(&long), "{ch} {} {b:?}", variant.0);
                let cx = b.x as f32 + b.w as f32 / 2.0;
                let cy = b.y as f32 + b.h as f32 / 2.0;
                assert!(
                    (cx - 32.0).abs() <= 1.0 && (cy - 32.0).abs() <= 1.0,
                    "{ch} {b:?}"
                );
            }
        }
    }

    // Reference coverages at 64px with a 10% margin, from FreeType glyphs
    // rendered at 512px, fitted with Lanczos resampling and thresholded at 0.5.
    const REFERENCE: [(&str, char, f64); 4] = [
        ("DejaVuSans", 'I', 0.0872),
        ("DejaVuSans", 'W', 0.1868),
        ("DejaVuSerif", 'I', 0.1025),
        ("DejaVuSerif", 'W', 0.1428),
    ];

    #[test]
    fn coverage_agrees_with_reference_rasterizer() {
        let geom = GlyphGeometry::default();
        for (stem, ch, want) in REFERENCE {
            let font = LoadedFont::load(&bundled_font(stem)).unwrap();
            let got = coverage(&rasterize_glyph(&font, ch, &geom).unwrap());
            assert!((got - want).abs() < 0.015, "{stem} {ch}: {got} vs {want}");
        }
        let font = sans();
        let i = coverage(&rasterize_glyph(&font, 'I', &geom).unwrap());
        let w = coverage(&rasterize_glyph(&font, 'W', &geom).unwrap());
        assert!(i < w);
    }

    #[test]
    fn expand_cycles_files_then_variants() {
        let base = vec![bundled_font("DejaVuSans"), bundled_font("DejaVuSerif")];
        let fonts = expand_fonts(&base, 5).unwrap();
        let ids: Vec<&str> = fonts.iter().map(|f| f.id.as_str()).collect();
        assert_eq!(
            ids,
            [
                "DejaVuSans",
                "DejaVuSerif",
                "DejaVuSans-oblique",
                "DejaVuSerif-oblique",
                "DejaVuSans-condensed"
            ]
        );
        assert!(expand_fonts(&base, 21).is_err());
        assert!(expand_fonts(&[], 1).is_err());
    }
}
