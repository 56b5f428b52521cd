use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{GeneratedClip, Manifest};
use crate::dsp::{wav, Waveform};
use crate::error::{Error, Result};

/// A failure confined to one clip; the surrounding run carries on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipError {
    pub clip_id: String,
    pub message: String,
}

/// Decoded audio keyed by clip id.
#[derive(Debug, Clone, Default)]
pub struct AudioSet {
    waves: HashMap<String, Waveform>,
}

impl AudioSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_generated(clips: &[GeneratedClip]) -> Self {
        Self {
            waves: clips.iter().map(|c| (c.record.clip_id.clone(), c.wave.clone())).collect(),
        }
    }

    /// Reads every clip of `manifest` relative to `root`. Unreadable clips are
    /// reported, not fatal.
    pub fn load(manifest: &Manifest, root: &Path) -> (Self, Vec<ClipError>) {
        let results: Vec<(String, Result<Waveform>)> = manifest
            .clips
            .par_iter()
            .map(|c| (c.clip_id.clone(), wav::read(&root.join(&c.audio_path))))
            .collect();
        let mut set = Self::new();
        let mut errors = Vec::new();
        for (clip_id, r) in results {
            match r {
                Ok(w) => {
                    set.waves.insert(clip_id, w);
                }
                Err(e) => errors.push(ClipError {
                    clip_id,
                    message: e.to_string(),
                }),
            }
        }
        (set, errors)
    }

    pub fn insert(&mut self, clip_id: impl Into<String>, wave: Waveform) {
        self.waves.insert(clip_id.into(), wave);
    }

    pub fn get(&self, clip_id: &str) -> Option<&Waveform> {
        self.waves.get(clip_id)
    }

    pub fn require(&self, clip_id: &str) -> Result<&Waveform> {
        self.get(clip_id).ok_or_else(|| Error::Missing(format!("audio for clip {clip_id}")))
    }

    pub fn len(&self) -> usize {
        self.waves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waves.is_empty()
    }
}
