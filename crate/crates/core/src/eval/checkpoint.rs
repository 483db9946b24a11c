//! Checkpoint directories: `params.bin` (little-endian `f32`) + `meta.json`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;
const PARAMS_FILE: &str = "params.bin";
const META_FILE: &str = "meta.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModuleKind {
    Inpainter,
    GlyphNet,
    OrnaNet,
}

impl std::fmt::Display for ModuleKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModuleKind::Inpainter => "inpainter",
            ModuleKind::GlyphNet => "glyphnet",
            ModuleKind::OrnaNet => "ornanet",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub schema_version: u32,
    pub kind: ModuleKind,
    pub config_hash: String,
    pub seed: u64,
    pub step: usize,
    pub param_count: usize,
    pub params_sha256: String,
    /// Module-specific fields (sizes, char set, ...), stored at the top level.
    #[serde(flatten)]
    pub info: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: Vec<f32>,
}

/// SHA-256 (hex) of the canonical JSON form of `config` (object keys sorted).
pub fn config_hash<T: Serialize>(config: &T) -> String {
    let v = serde_json::to_value(config).expect("config serializes");
    hex::encode(Sha256::digest(v.to_string().as_bytes()))
}

fn params_bytes(params: &[f32]) -> Vec<u8> {
    params.iter().flat_map(|v| v.to_le_bytes()).collect()
}

impl Checkpoint {
    pub fn new(
        kind: ModuleKind,
        config_hash: String,
        seed: u64,
        step: usize,
        params: Vec<f32>,
        info: BTreeMap<String, serde_json::Value>,
    ) -> Self {
        let digest = hex::encode(Sha256::digest(params_bytes(&params)));
        Checkpoint {
            meta: CheckpointMeta {
                schema_version: CHECKPOINT_SCHEMA_VERSION,
                kind,
                config_hash,
                seed,
                step,
                param_count: params.len(),
                params_sha256: digest,
                info,
            },
            params,
        }
    }

    /// Short identifier: kind, step and the first 12 hex digits of the blob hash.
    pub fn id(&self) -> String {
        format!(
            "{}@{}:{}",
            self.meta.kind,
            self.meta.step,
            &self.meta.params_sha256[..12]
        )
    }

    pub fn info<T: serde::de::DeserializeOwned>(&self, key: &str) -> Result<T> {
        let v = self
            .meta
            .info
            .get(key)
            .ok_or_else(|| Error::Incompatible(format!("checkpoint meta has no {key:?}")))?;
        serde_json::from_value(v.clone())
            .map_err(|e| Error::json(format!("checkpoint meta {key:?}"), e))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let p = dir.join(PARAMS_FILE);
        std::fs::write(&p, params_bytes(&self.params)).map_err(|e| Error::io(&p, e))?;
        let m = dir.join(META_FILE);
        let mut text = serde_json::to_string_pretty(&self.meta)
            .map_err(|e| Error::json("checkpoint meta", e))?;
        text.push('\n');
        std::fs::write(&m, text).map_err(|e| Error::io(&m, e))
    }

    /// Loads and verifies schema version, blob length and blob hash.
    pub fn load(dir: &Path) -> Result<Checkpoint> {
        let m = dir.join(META_FILE);
        let text = std::fs::read_to_string(&m).map_err(|e| Error::io(&m, e))?;
        let raw: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::json(m.display().to_string(), e))?;
        let found = raw
            .get("schema_version")
            .and_then(|v| v.as_u64())
            .unwrap_or(0) as u32;
        if found != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found,
                expected: CHECKPOINT_SCHEMA_VERSION,
            });
        }
        let meta: CheckpointMeta =
            serde_json::from_value(raw).map_err(|e| Error::json(m.display().to_string(), e))?;
        let p = dir.join(PARAMS_FILE);
        let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
        if bytes.len() != meta.param_count * 4 {
            return Err(Error::Integrity(format!(
                "{} holds {} bytes, expected {} for {} parameters",
                p.display(),
                bytes.len(),
                meta.param_count * 4,
                meta.param_count
            )));
        }
        let digest = hex::encode(Sha256::digest(&bytes));
        if digest != meta.params_sha256 {
            return Err(Error::Integrity(format!(
                "{} hashes to {digest}, meta records {}",
                p.display(),
                meta.params_sha256
            )));
        }
        let params = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Checkpoint { meta, params })
    }

    /// [`Checkpoint::load`] plus kind and config-hash checks.
    pub fn load_for(dir: &Path, kind: ModuleKind, config_hash: &str) -> Result<Checkpoint> {
        let ck = Self::load(dir)?;
        ck.expect(kind, config_hash)?;
        Ok(ck)
    }

    pub fn expect(&self, kind: ModuleKind, config_hash: &str) -> Result<()> {
        if self.meta.kind != kind {
            return Err(Error::Incompatible(format!(
                "expected a {kind} checkpoint, found {}",
                self.meta.kind
            )));
        }
        if self.meta.config_hash != config_hash {
            return Err(Error::ConfigHash {
                found: self.meta.config_hash.clone(),
                expected: config_hash.to_string(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut info = BTreeMap::new();
        info.insert("latent_dim".into(), serde_json::json!(32));
        Checkpoint::new(
            ModuleKind::Inpainter,
            config_hash(&serde_json::json!({"b": 1, "a": [1, 2]})),
            5,
            10,
            vec![1.5, -0.0, f32::MIN_POSITIVE, 3.25e-9],
            info,
        )
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let ck = sample();
        ck.save(dir.path()).unwrap();
        let back = Checkpoint::load(dir.path()).unwrap();
        assert_eq!(back.meta, ck.meta);
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.params), bits(&ck.params));
        assert_eq!(back.info::<usize>("latent_dim").unwrap(), 32);
        let meta = std::fs::read_to_string(dir.path().join("meta.json")).unwrap();
        assert!(meta.contains("\"latent_dim\": 32"));
    }

    #[test]
    fn tampering_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        sample().save(dir.path()).unwrap();
        let p = dir.path().join("params.bin");
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[0] ^= 1;
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(
            Checkpoint::load(dir.path()),
            Err(Error::Integrity(_))
        ));
        bytes.pop();
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(
            Checkpoint::load(dir.path()),
            Err(Error::Integrity(_))
        ));
    }

    #[test]
    fn schema_and_hash_are_enforced() {
        let dir = tempfile::tempdir().unwrap();
        let ck = sample();
        ck.save(dir.path()).unwrap();
        let err = Checkpoint::load_for(dir.path(), ModuleKind::Inpainter, "abc").unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("abc") && msg.contains(&ck.meta.config_hash),
            "{msg}"
        );
        assert!(
            Checkpoint::load_for(dir.path(), ModuleKind::GlyphNet, &ck.meta.config_hash).is_err()
        );

        let m = dir.path().join("meta.json");
        let text = std::fs::read_to_string(&m)
            .unwrap()
            .replace("\"schema_version\": 1", "\"schema_version\": 9");
        std::fs::write(&m, text).unwrap();
        assert!(matches!(
            Checkpoint::load(dir.path()),
            Err(Error::SchemaVersion {
                found: 9,
                expected: 1
            })
        ));
    }

    #[test]
    fn config_hash_ignores_key_order() {
        let a = serde_json::json!({"x": 1, "y": {"p": 2, "q": 3}});
        let b = serde_json::json!({"y": {"q": 3, "p": 2}, "x": 1});
        assert_eq!(config_hash(&a), config_hash(&b));
        assert_ne!(config_hash(&a), config_hash(&serde_json::json!({"x": 2})));
    }
}
