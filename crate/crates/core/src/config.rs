//! Layered run configuration: every tunable of the dataset builder, the
//! trainers and the editor in one document, TOML or JSON.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::compose::EditConfig;
use crate::dataset::{DatasetConfig, GlyphGeometry};
use crate::error::{Error, Result};
use crate::eval::config_hash;
use crate::glyph::{FinetuneConfig, GlyphNetConfig, OrnaNetConfig, PretrainConfig};
use crate::inpaint::{InpaintConfig, InpaintTrainConfig};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dataset: DatasetSection,
    pub inpaint: InpaintSection,
    pub glyph: GlyphSection,
    pub edit: EditConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    /// Directory of `.ttf`/`.otf` files; the bundled fonts when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub font_dir: Option<PathBuf>,
    /// Fonts per set, expanded from the base fonts by synthetic variants.
    pub n_fonts: usize,
    pub geometry: GlyphGeometry,
    pub seed: u64,
    pub val_fraction: f64,
    pub test_fraction: f64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        let d = DatasetConfig::default();
        DatasetSection {
            font_dir: None,
            n_fonts: 20,
            geometry: d.geometry,
            seed: d.seed,
            val_fraction: d.val_fraction,
            test_fraction: d.test_fraction,
        }
    }
}

impl DatasetSection {
    pub fn dataset_config(&self, color: bool) -> DatasetConfig {
        DatasetConfig {
            geometry: self.geometry,
            color,
            seed: self.seed,
            val_fraction: self.val_fraction,
            test_fraction: self.test_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InpaintSection {
    pub model: InpaintConfig,
    pub train: InpaintTrainConfig,
    /// Procedural training backgrounds used when no image directory is given.
    pub n_images: usize,
    pub image_seed: u64,
}

impl Default for InpaintSection {
    fn default() -> Self {
        InpaintSection {
            model: InpaintConfig::default(),
            train: InpaintTrainConfig::default(),
            n_images: 8,
            image_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GlyphSection {
    pub net: GlyphNetConfig,
    pub orna: OrnaNetConfig,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Invalid(format!("config: {}", e.message())))
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::json("config", e))
    }

    /// Reads a `.json` file as JSON and anything else as TOML.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg = if path.extension().is_some_and(|e| e == "json") {
            Self::from_json_str(&text)
        } else {
            Self::from_toml_str(&text)
        };
        cfg.map_err(|e| match e {
            Error::Invalid(m) => Error::Invalid(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// Digest of the canonical JSON form.
    pub fn hash(&self) -> String {
        config_hash(self)
    }

    /// Sets every seed in the document.
    pub fn set_seed(&mut self, seed: u64) {
        self.dataset.seed = seed;
        self.inpaint.image_seed = seed;
        self.inpaint.train.seed = seed;
        self.glyph.pretrain.seed = seed;
        self.glyph.finetune.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        if d.n_fonts == 0 {
            return Err(Error::Invalid("dataset.n_fonts must be positive".into()));
        }
        if !(d.val_fraction >= 0.0
            && d.test_fraction >= 0.0
            && d.val_fraction + d.test_fraction <= 1.0)
        {
            return Err(Error::Invalid(
                "dataset split fractions must be nonnegative and sum to at most 1".into(),
            ));
        }
        self.inpaint.model.validate()?;
        if self.inpaint.n_images == 0 {
            return Err(Error::Invalid("inpaint.n_images must be positive".into()));
        }
        self.glyph.net.validate()?;
        self.glyph.orna.validate()?;
        self.glyph.pretrain.observed.validate()?;
        self.glyph.finetune.observed.validate()?;
        if self.glyph.net.glyph_size != self.glyph.orna.glyph_size {
            return Err(Error::Invalid(format!(
                "glyph.net.glyph_size {} differs from glyph.orna.glyph_size {}",
                self.glyph.net.glyph_size, self.glyph.orna.glyph_size
            )));
        }
        if !(self.edit.slack >= 0.0) {
            return Err(Error::Invalid("edit.slack must be nonnegative".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_both_formats() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(RunConfig::from_toml_str(&c.to_toml()).unwrap(), c);
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(RunConfig::from_json_str(&json).unwrap(), c);
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let c = RunConfig::from_toml_str(
            "[glyph.pretrain]\nsteps = 7\n[inpaint.train.adam]\nlr = 0.01\n",
        )
        .unwrap();
        assert_eq!(c.glyph.pretrain.steps, 7);
        assert_eq!(c.inpaint.train.adam.lr, 0.01);
        assert_eq!(
            c.inpaint.train.adam.beta1,
            RunConfig::default().inpaint.train.adam.beta1
        );
        assert_eq!(c.dataset, DatasetSection::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml_str("[glyph.pretrain]\nstepz = 7\n").is_err());
        assert!(RunConfig::from_toml_str("colour = true\n").is_err());
        assert!(RunConfig::from_json_str(r#"{"edit": {"slak": 0.2}}"#).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.set_seed(3);
        assert_ne!(a.hash(), b.hash());
        assert_eq!(b.glyph.finetune.seed, 3);
    }

    #[test]
    fn inconsistent_sizes_are_invalid() {
        let mut c = RunConfig::default();
        c.glyph.orna.glyph_size = 32;
        assert!(c.validate().is_err());
    }
}
