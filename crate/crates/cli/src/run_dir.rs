//! On-disk layout of one run and the stamps that tie artifacts together.
//!
//! Every artifact `x` has a sibling `x.stamp.json` recording the stage that
//! wrote it, the fingerprint of the inputs it was built from, and the hash of
//! the full run config.

use std::fs;
use std::path::{Path, PathBuf};

use psl_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stamp {
    pub stage: String,
    pub fingerprint: String,
    pub config_hash: String,
    /// Stage-specific facts later stages depend on, such as the audio hash.
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

pub enum Freshness {
    Missing,
    Current(Stamp),
    Stale(Stamp),
}

pub struct RunDirectory {
    root: PathBuf,
}

fn stamp_path(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().unwrap_or_default().to_os_string();
    name.push(".stamp.json");
    artifact.with_file_name(name)
}

fn res_tag(n: f64) -> String {
    format!("{n}s")
}

impl RunDirectory {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn config_copy(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.root.join("corpus")
    }

    pub fn manifest(&self) -> PathBuf {
        self.corpus_dir().join("manifest.jsonl")
    }

    pub fn target_dir(&self) -> PathBuf {
        self.root.join("target_corpus")
    }

    pub fn target_manifest(&self) -> PathBuf {
        self.target_dir().join("manifest.jsonl")
    }

    pub fn features(&self, key: &str) -> PathBuf {
        self.root.join("features").join(format!("{key}.bin"))
    }

    pub fn annotator(&self) -> PathBuf {
        self.root.join("checkpoints").join("annotator.ckpt")
    }

    pub fn store(&self, n: f64) -> PathBuf {
        self.root.join("stores").join(format!("psl_{}.jsonl", res_tag(n)))
    }

    pub fn student(&self, method: &str, alpha: f64, n: f64, seed: u64) -> PathBuf {
        self.root
            .join("checkpoints")
            .join(format!("{method}_a{alpha}_{}_seed{seed}.ckpt", res_tag(n)))
    }

    pub fn transfer(&self, source: &str, n: f64, seed: u64) -> PathBuf {
        self.root.join("checkpoints").join(format!("transfer_{source}_{}_seed{seed}.ckpt", res_tag(n)))
    }

    pub fn log(&self, name: &str) -> PathBuf {
        self.root.join("logs").join(format!("{name}.jsonl"))
    }

    pub fn results(&self, name: &str) -> PathBuf {
        self.root.join("results").join(name)
    }

    pub fn analysis(&self, name: &str) -> PathBuf {
        self.root.join("analysis").join(name)
    }

    pub fn read_stamp(&self, artifact: &Path) -> Result<Option<Stamp>> {
        let path = stamp_path(artifact);
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Some(serde_json::from_str(&text)?))
    }

    pub fn freshness(&self, artifact: &Path, fingerprint: &str) -> Result<Freshness> {
        if !artifact.exists() {
            return Ok(Freshness::Missing);
        }
        Ok(match self.read_stamp(artifact)? {
            Some(s) if s.fingerprint == fingerprint => Freshness::Current(s),
            Some(s) => Freshness::Stale(s),
            None => Freshness::Stale(Stamp {
                stage: "unknown".into(),
                fingerprint: String::new(),
                config_hash: String::new(),
                extra: Default::default(),
            }),
        })
    }

    /// Prerequisite lookup: the artifact must exist and carry `fingerprint`.
    pub fn require(&self, artifact: &Path, fingerprint: &str, hint: &str) -> Result<Stamp> {
        match self.freshness(artifact, fingerprint)? {
            Freshness::Current(s) => Ok(s),
            Freshness::Missing => Err(Error::Missing(format!("{} (run `psl {hint}` first)", artifact.display()))),
            Freshness::Stale(s) => Err(Error::HashMismatch {
                expected: format!("{fingerprint} for {}", artifact.display()),
                found: if s.fingerprint.is_empty() { "no stamp".into() } else { s.fingerprint },
            }),
        }
    }

    pub fn write_stamp(&self, artifact: &Path, stamp: &Stamp) -> Result<()> {
        let bytes = serde_json::to_vec_pretty(stamp)?;
        write_atomic(&stamp_path(artifact), |tmp| fs::write(tmp, &bytes).map_err(|e| Error::io(tmp, e)))
    }
}

/// Runs `write` against a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    let tmp = path.with_file_name(name);
    write(&tmp)?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn is_nonempty_dir(path: &Path) -> bool {
    fs::read_dir(path).map(|mut d| d.next().is_some()).unwrap_or(false)
}
