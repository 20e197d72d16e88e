//! Corpus manifest: a TOML document listing clips with optional labels.
//!
//! ```toml
//! seed = 7
//! split = 0.9
//!
//! [[clip]]
//! path = "clips/a.mid"
//! emotion = "Q1"
//! key = "C_major"
//! ```
//!
//! Relative paths resolve against the manifest's directory.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tonal_core::theory::Key;
use tonal_core::tokenizer::Emotion;

use crate::error::{io_err, CliError, Result};

pub const DEFAULT_SPLIT: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawManifest {
    seed: Option<u64>,
    split: Option<f64>,
    #[serde(default)]
    clip: Vec<RawClip>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawClip {
    path: String,
    emotion: Option<String>,
    key: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    /// Path as written in the manifest; used for naming and seeding.
    pub name: String,
    pub path: PathBuf,
    pub emotion: Option<Emotion>,
    pub key: Option<Key>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub seed: u64,
    pub split: f64,
    pub clips: Vec<Clip>,
}

impl Manifest {
    pub fn load(path: &Path, default_seed: u64) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")), default_seed)
            .map_err(|e| CliError::in_file(path, e))
    }

    pub fn parse(text: &str, base: &Path, default_seed: u64) -> Result<Self, String> {
        let raw: RawManifest = toml::from_str(text).map_err(|e| e.to_string())?;
        let split = raw.split.unwrap_or(DEFAULT_SPLIT);
        if !(split > 0.0 && split < 1.0) {
            return Err(format!("split must lie strictly between 0 and 1, got {split}"));
        }
        let mut seen = BTreeSet::new();
        let mut clips = Vec::with_capacity(raw.clip.len());
        for c in raw.clip {
            if !seen.insert(c.path.clone()) {
                return Err(format!("duplicate clip path {:?}", c.path));
            }
            let emotion = c
                .emotion
                .as_deref()
                .map(|e| {
                    e.parse::<Emotion>()
                        .map_err(|_| format!("clip {:?}: unknown emotion {e:?}", c.path))
                })
                .transpose()?;
            let key = c
                .key
                .as_deref()
                .map(|k| {
                    k.parse::<Key>()
                        .map_err(|_| format!("clip {:?}: unknown key {k:?}", c.path))
                })
                .transpose()?;
            clips.push(Clip {
                path: base.join(&c.path),
                name: c.path,
                emotion,
                key,
            });
        }
        Ok(Self {
            seed: raw.seed.unwrap_or(default_seed),
            split,
            clips,
        })
    }

    pub fn to_toml(&self) -> String {
        let raw = RawManifest {
            seed: Some(self.seed),
            split: Some(self.split),
            clip: self
                .clips
                .iter()
                .map(|c| RawClip {
                    path: c.name.clone(),
                    emotion: c.emotion.map(|e| e.to_string()),
                    key: c.key.map(|k| k.to_string()),
                })
                .collect(),
        };
        toml::to_string(&raw).expect("manifest serializes")
    }

    /// Indices of training clips; the rest are validation. Clips are ranked
    /// by a seeded hash of their name, so the split does not depend on
    /// listing order.
    pub fn training_set(&self) -> BTreeSet<usize> {
        let mut ranked: Vec<(u64, usize)> = self
            .clips
            .iter()
            .enumerate()
            .map(|(i, c)| (derive_seed(self.seed, &format!("split/{}", c.name)), i))
            .collect();
        ranked.sort();
        let n = self.clips.len();
        let train = if n < 2 {
            n
        } else {
            ((n as f64 * self.split).round() as usize).clamp(1, n - 1)
        };
        ranked.into_iter().take(train).map(|r| r.1).collect()
    }
}

/// Stable 64-bit seed for `label` under `seed`.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("32-byte digest"))
}
