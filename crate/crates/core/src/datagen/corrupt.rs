use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{LabelSet, Manifest};
use crate::error::{Error, Result};
use crate::rng::{rng_for, stream};

/// Independent per-label corruption of clip-level labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorruptionSpec {
    pub p_missing: f64,
    pub p_spurious: f64,
    pub seed: u64,
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        Self {
            p_missing: 0.0,
            p_spurious: 0.0,
            seed: 0,
        }
    }
}

impl CorruptionSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_missing) {
            return Err(Error::config("corruption.p_missing", "must be in [0,1]"));
        }
        if !(0.0..=1.0).contains(&self.p_spurious) {
            return Err(Error::config("corruption.p_spurious", "must be in [0,1]"));
        }
        Ok(())
    }
}

/// Re-derives every clip's `weak_labels` from its `original_weak_labels`:
/// each true label is dropped with `p_missing`, each absent label added with
/// `p_spurious`. Audio, strong events and original labels are untouched.
pub fn corrupt_labels(manifest: &Manifest, spec: &CorruptionSpec) -> Result<Manifest> {
    spec.validate()?;
    let mut out = manifest.clone();
    for (i, clip) in out.clips.iter_mut().enumerate() {
        let mut rng = rng_for(spec.seed, &[stream::CORRUPT, i as u64]);
        let kept = (0..manifest.n_classes)
            .filter(|&c| {
                // One draw per class keeps the stream aligned across settings.
                let u: f64 = rng.random();
                if clip.original_weak_labels.contains(c) {
                    u >= spec.p_missing
                } else {
                    u < spec.p_spurious
                }
            })
            .collect();
        clip.weak_labels = LabelSet::new(kept);
    }
    Ok(out)
}
