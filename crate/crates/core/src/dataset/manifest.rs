//! Dataset builds: render every font, write PNGs, a JSONL manifest and a header.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::charset::{char_index, CharSet, NUM_CHARS};
use crate::error::{Error, Result};
use crate::raster::Image;
use crate::workers::with_pool;

use super::font::{rasterize_glyph, FontSource, GlyphGeometry, LoadedFont};
use super::gradient::{apply_color_gradient, draw_gradient_spec, font_seed, ColorGradientSpec};
use super::GlyphImage;

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const HEADER_FILE: &str = "header.json";
const REJECTS_FILE: &str = "rejects.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub geometry: GlyphGeometry,
    pub color: bool,
    pub seed: u64,
    pub val_fraction: f64,
    pub test_fraction: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            geometry: GlyphGeometry::default(),
            color: false,
            seed: 0,
            val_fraction: 0.1,
            test_fraction: 0.1,
        }
    }
}

impl DatasetConfig {
    /// Split of a font, from the top 53 bits of its seed read as a uniform in `[0,1)`.
    pub fn split_for(&self, font_seed: u64) -> Split {
        let u = (font_seed >> 11) as f64 / (1u64 << 53) as f64;
        if u < self.test_fraction {
            Split::Test
        } else if u < self.test_fraction + self.val_fraction {
            Split::Val
        } else {
            Split::Train
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub font_id: String,
    pub char: char,
    /// Relative to the dataset directory.
    pub path: PathBuf,
    pub split: Split,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub schema_version: u32,
    pub char_set: CharSet,
    pub glyph_size: usize,
    pub margin: f32,
    pub threshold: f32,
    pub color: bool,
    pub seed: u64,
    /// Per-font colorization, in manifest order (color sets only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gradients: Vec<(String, ColorGradientSpec)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub header: DatasetHeader,
    pub records: Vec<ManifestRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reject {
    pub font_id: String,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct BuildReport {
    pub manifest: DatasetManifest,
    pub rejects: Vec<Reject>,
}

/// All 62 glyphs of one font, in char-set order.
#[derive(Debug, Clone, PartialEq)]
pub struct FontGlyphs {
    pub font_id: String,
    pub glyphs: Vec<GlyphImage>,
    pub gradient: Option<ColorGradientSpec>,
}

impl FontGlyphs {
    /// Renders (and optionally colorizes) the full character set of `source`.
    pub fn render(source: &FontSource, cfg: &DatasetConfig) -> Result<FontGlyphs> {
        let font = LoadedFont::load(source)?;
        let mut glyphs = CharSet
            .chars()
            .map(|ch| rasterize_glyph(&font, ch, &cfg.geometry))
            .collect::<Result<Vec<_>>>()?;
        for g in &glyphs {
            let c = g.ink_coverage(cfg.geometry.threshold);
            if !(c > 0.0 && c < 0.95) {
                return Err(Error::Invalid(format!(
                    "font {} glyph {:?} has ink coverage {c:.3} outside (0, 0.95)",
                    source.id, g.ch
                )));
            }
        }
        let gradient = cfg
            .color
            .then(|| draw_gradient_spec(font_seed(cfg.seed, &source.id)));
        if let Some(spec) = &gradient {
            for g in &mut glyphs {
                *g = apply_color_gradient(g, spec, cfg.geometry.threshold);
            }
        }
        Ok(FontGlyphs {
            font_id: source.id.clone(),
            glyphs,
            gradient,
        })
    }

    pub fn glyph(&self, ch: char) -> Result<&GlyphImage> {
        Ok(&self.glyphs[char_index(ch)?])
    }
}

fn glyph_path(font_id: &str, ch: char) -> PathBuf {
    // Index-based names: 'A' and 'a' collide on case-insensitive filesystems.
    PathBuf::from(font_id).join(format!(
        "{:02}.png",
        char_index(ch).expect("char-set glyph")
    ))
}

/// Companion ink raster of a color glyph.
fn ink_path(path: &Path) -> PathBuf {
    path.with_extension("ink.png")
}

/// Renders every font, skipping (and reporting) fonts that fail, and writes
/// the dataset under `out`. Reruns with equal inputs produce identical bytes.
pub fn build_font_dataset(
    fonts: &[FontSource],
    cfg: &DatasetConfig,
    out: &Path,
) -> Result<BuildReport> {
    if fonts.is_empty() {
        return Err(Error::Invalid("no fonts given".into()));
    }
    let mut seen = HashSet::new();
    if let Some(dup) = fonts.iter().find(|f| !seen.insert(f.id.as_str())) {
        return Err(Error::Invalid(format!("duplicate font id {}", dup.id)));
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let rendered: Vec<Result<FontGlyphs>> = with_pool(|| {
        fonts
            .par_iter()
            .map(|src| {
                let fg = FontGlyphs::render(src, cfg)?;
                for g in &fg.glyphs {
                    let path = out.join(glyph_path(&fg.font_id, g.ch));
                    g.pixels().save_png(&path)?;
                    if g.is_color() {
                        g.ink.save_png(&ink_path(&path))?;
                    }
                }
                Ok(fg)
            })
            .collect()
    });

    let mut records = Vec::new();
    let mut rejects = Vec::new();
    let mut gradients = Vec::new();
    for (src, res) in fonts.iter().zip(rendered) {
        match res {
            Ok(fg) => {
                let seed = font_seed(cfg.seed, &fg.font_id);
                let split = cfg.split_for(seed);
                for g in &fg.glyphs {
                    records.push(ManifestRecord {
                        font_id: fg.font_id.clone(),
                        char: g.ch,
                        path: glyph_path(&fg.font_id, g.ch),
                        split,
                        seed,
                    });
                }
                if let Some(spec) = fg.gradient {
                    gradients.push((fg.font_id, spec));
                }
            }
            Err(e) => rejects.push(Reject {
                font_id: src.id.clone(),
                error: e.to_string(),
            }),
        }
    }
    write_json(&out.join(REJECTS_FILE), &rejects)?;
    if records.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "all {} fonts were rejected",
            fonts.len()
        )));
    }
    let manifest = DatasetManifest {
        header: DatasetHeader {
            schema_version: SCHEMA_VERSION,
            char_set: CharSet,
            glyph_size: cfg.geometry.size,
            margin: cfg.geometry.margin,
            threshold: cfg.geometry.threshold,
            color: cfg.color,
            seed: cfg.seed,
            gradients,
        },
        records,
    };
    manifest.write(out)?;
    Ok(BuildReport { manifest, rejects })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| Error::json(path.display().to_string(), e))?;
    s.push('\n');
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

impl DatasetManifest {
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r).expect("records serialize"));
            s.push('\n');
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join(HEADER_FILE), &self.header)?;
        let path = dir.join(MANIFEST_FILE);
        let mut f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        f.write_all(self.to_jsonl().as_bytes())
            .map_err(|e| Error::io(&path, e))
    }

    pub fn read(dir: &Path) -> Result<DatasetManifest> {
        let hp = dir.join(HEADER_FILE);
        let text = std::fs::read_to_string(&hp).map_err(|e| Error::io(&hp, e))?;
        let header: DatasetHeader =
            serde_json::from_str(&text).map_err(|e| Error::json(hp.display().to_string(), e))?;
        if header.schema_version != SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: header.schema_version,
                expected: SCHEMA_VERSION,
            });
        }
        let mp = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
        let records = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l)
                    .map_err(|e| Error::json(format!("{}:{}", mp.display(), i + 1), e))
            })
            .collect::<Result<Vec<ManifestRecord>>>()?;
        let m = DatasetManifest { header, records };
        m.validate()?;
        Ok(m)
    }

    /// Unique (font, char) pairs, 62 records per font, one split per font.
    pub fn validate(&self) -> Result<()> {
        let mut pairs = HashSet::new();
        let mut fonts: BTreeMap<&str, (usize, Split)> = BTreeMap::new();
        for r in &self.records {
            char_index(r.char)?;
            if !pairs.insert((r.font_id.as_str(), r.char)) {
                return Err(Error::Invalid(format!(
                    "duplicate record {} {:?}",
                    r.font_id, r.char
                )));
            }
            let e = fonts.entry(&r.font_id).or_insert((0, r.split));
            if e.1 != r.split {
                return Err(Error::Invalid(format!(
                    "font {} spans several splits",
                    r.font_id
                )));
            }
            e.0 += 1;
        }
        if let Some((f, (n, _))) = fonts.iter().find(|(_, (n, _))| *n != NUM_CHARS) {
            return Err(Error::Invalid(format!(
                "font {f} has {n} records, expected {NUM_CHARS}"
            )));
        }
        Ok(())
    }

    /// Font ids in manifest order.
    pub fn font_ids(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = Vec::new();
        for r in &self.records {
            if ids.last() != Some(&r.font_id.as_str()) {
                ids.push(&r.font_id);
            }
        }
        ids
    }

    pub fn split_of(&self, font_id: &str) -> Option<Split> {
        self.records
            .iter()
            .find(|r| r.font_id == font_id)
            .map(|r| r.split)
    }
}

/// Loads the glyphs of every font in `manifest` (optionally one split only).
pub fn load_font_glyphs(
    dir: &Path,
    manifest: &DatasetManifest,
    split: Option<Split>,
) -> Result<Vec<FontGlyphs>> {
    let ids: Vec<String> = manifest
        .font_ids()
        .into_iter()
        .filter(|id| split.is_none() || manifest.split_of(id) == split)
        .map(String::from)
        .collect();
    let gradients: BTreeMap<&str, ColorGradientSpec> = manifest
        .header
        .gradients
        .iter()
        .map(|(id, s)| (id.as_str(), *s))
        .collect();
    let load = |id: &String| -> Result<FontGlyphs> {
        let mut glyphs = Vec::with_capacity(NUM_CHARS);
        for ch in CharSet.chars() {
            let path = dir.join(glyph_path(id, ch));
            let img = Image::load_png(&path)?;
            let g = if manifest.header.color {
                let ink = Image::load_png(&ink_path(&path))?;
                GlyphImage {
                    ch,
                    font_id: id.clone(),
                    ink,
                    rgb: Some(img),
                }
            } else {
                GlyphImage::gray(ch, id.as_str(), img)
            };
            glyphs.push(g);
        }
        Ok(FontGlyphs {
            font_id: id.clone(),
            glyphs,
            gradient: gradients.get(id.as_str()).copied(),
        })
    };
    with_pool(|| ids.par_iter().map(load).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::font::{bundled_font, expand_fonts};

    fn fonts(n: usize) -> Vec<FontSource> {
        expand_fonts(
            &[bundled_font("DejaVuSans"), bundled_font("DejaVuSerif")],
            n,
        )
        .unwrap()
    }

    #[test]
    fn builds_and_reads_back() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = DatasetConfig {
            color: true,
            seed: 7,
            ..Default::default()
        };
        let rep = build_font_dataset(&fonts(2), &cfg, dir.path()).unwrap();
        assert!(rep.rejects.is_empty());
        assert_eq!(rep.manifest.records.len(), 124);
        let back = DatasetManifest::read(dir.path()).unwrap();
        assert_eq!(back, rep.manifest);
        let loaded = load_font_glyphs(dir.path(), &back, None).unwrap();
        assert_eq!(loaded.len(), 2);
        let g = loaded[1].glyph('Q').unwrap();
        assert_eq!(g.rgb.as_ref().unwrap().channels(), 3);
        assert_eq!(g.ink.channels(), 1);
        assert_eq!(
            loaded[0].gradient,
            Some(draw_gradient_spec(font_seed(7, "DejaVuSans")))
        );
    }

    #[test]
    fn bad_font_is_rejected_not_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let mut fs = fonts(1);
        fs.push(FontSource::from_file(dir.path().join("missing.ttf")));
        let rep = build_font_dataset(&fs, &DatasetConfig::default(), dir.path()).unwrap();
        assert_eq!(rep.manifest.records.len(), 62);
        assert_eq!(rep.rejects.len(), 1);
        assert_eq!(rep.rejects[0].font_id, "missing");
    }

    #[test]
    fn all_rejected_is_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let fs = vec![FontSource::from_file(dir.path().join("nope.ttf"))];
        assert!(matches!(
            build_font_dataset(&fs, &DatasetConfig::default(), dir.path()),
            Err(Error::EmptyDataset(_))
        ));
    }

    #[test]
    fn split_thresholds() {
        let cfg = DatasetConfig::default();
        assert_eq!(cfg.split_for(0), Split::Test);
        assert_eq!(cfg.split_for(u64::MAX), Split::Train);
        assert_eq!(
            cfg.split_for(((0.15 * (1u64 << 53) as f64) as u64) << 11),
            Split::Val
        );
    }

    #[test]
    fn validate_catches_short_font() {
        let mut m = DatasetManifest {
            header: DatasetHeader {
                schema_version: SCHEMA_VERSION,
                char_set: CharSet,
                glyph_size: 64,
                margin: 0.1,
                threshold: 0.5,
                color: false,
                seed: 0,
                gradients: vec![],
            },
            records: vec![],
        };
        m.records.push(ManifestRecord {
            font_id: "f".into(),
            char: 'A',
            path: "f/10.png".into(),
            split: Split::Train,
            seed: 1,
        });
        assert!(m.validate().is_err());
    }
}
