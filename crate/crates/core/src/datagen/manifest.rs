use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Eval,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Eval => "eval",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrongEvent {
    pub class_id: usize,
    pub onset_s: f64,
    pub offset_s: f64,
    pub gain: f64,
}

/// Sorted, duplicate-free class ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelSet(Vec<usize>);

impl LabelSet {
    pub fn new(mut ids: Vec<usize>) -> Self {
        ids.sort_unstable();
        ids.dedup();
        Self(ids)
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn from_multi_hot(v: &[f64]) -> Self {
        Self(v.iter().enumerate().filter(|(_, &x)| x > 0.5).map(|(i, _)| i).collect())
    }

    pub fn contains(&self, c: usize) -> bool {
        self.0.binary_search(&c).is_ok()
    }

    pub fn ids(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn multi_hot(&self, n_classes: usize) -> Vec<f64> {
        let mut v = vec![0.0; n_classes];
        for &c in &self.0 {
            v[c] = 1.0;
        }
        v
    }

    pub fn intersection_len(&self, other: &LabelSet) -> usize {
        self.0.iter().filter(|c| other.contains(**c)).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipRecord {
    pub clip_id: String,
    /// Relative to the manifest's directory.
    pub audio_path: PathBuf,
    pub duration_s: f64,
    pub split: Split,
    pub weak_labels: LabelSet,
    /// Labels before any corruption; equals `weak_labels` for clean corpora.
    pub original_weak_labels: LabelSet,
    /// Ground truth, never used for training.
    pub strong_events: Vec<StrongEvent>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub n_classes: usize,
    pub clips: Vec<ClipRecord>,
}

impl Manifest {
    pub fn new(n_classes: usize, clips: Vec<ClipRecord>) -> Result<Self> {
        let m = Self { n_classes, clips };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        for clip in &self.clips {
            if !(clip.duration_s > 0.0) {
                return Err(Error::InvalidInput(format!("clip {} has non-positive duration", clip.clip_id)));
            }
            let labels = clip.weak_labels.ids().iter().chain(clip.original_weak_labels.ids());
            let events = clip.strong_events.iter().map(|e| &e.class_id);
            if let Some(bad) = labels.chain(events).find(|&&c| c >= self.n_classes) {
                return Err(Error::InvalidInput(format!(
                    "clip {} references class {bad} but the schema has {} classes",
                    clip.clip_id, self.n_classes
                )));
            }
            for e in &clip.strong_events {
                if !(0.0 <= e.onset_s && e.onset_s < e.offset_s && e.offset_s <= clip.duration_s + 1e-9 && e.gain > 0.0) {
                    return Err(Error::InvalidInput(format!("clip {} has an invalid strong event {e:?}", clip.clip_id)));
                }
            }
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> Manifest {
        Manifest {
            n_classes: self.n_classes,
            clips: self.clips.iter().filter(|c| c.split == split).cloned().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn get(&self, clip_id: &str) -> Option<&ClipRecord> {
        self.clips.iter().find(|c| c.clip_id == clip_id)
    }

    pub fn to_jsonl(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for clip in &self.clips {
            serde_json::to_writer(&mut out, clip)?;
            out.push(b'\n');
        }
        Ok(out)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let bytes = self.to_jsonl()?;
        fs::File::create(path)
            .and_then(|mut f| f.write_all(&bytes))
            .map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl(path: &Path, n_classes: usize) -> Result<Self> {
        let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut clips = Vec::new();
        for (n, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let clip: ClipRecord = serde_json::from_str(&line)
                .map_err(|e| Error::format("manifest", path, format!("line {}: {e}", n + 1)))?;
            clips.push(clip);
        }
        Self::new(n_classes, clips).map_err(|e| Error::format("manifest", path, e.to_string()))
    }
}
