use rand::seq::SliceRandom;

use super::Manifest;
use crate::error::{Error, Result};
use crate::rng::{rng_for, stream};

/// Per-class counts of clips chosen *for* each class during selection.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsampleReport {
    pub selected_for_class: Vec<usize>,
}

/// Caps each class at `max_per_class` clips, visiting classes in id order.
/// A class only receives new clips while the clips already selected (for any
/// class) carrying it number fewer than the cap, so multi-label clips picked
/// for one class can still push another class past the cap. Clips without
/// labels are never selected. Manifest order is preserved.
pub fn imbalance_subsample(manifest: &Manifest, max_per_class: usize, seed: u64) -> Result<(Manifest, SubsampleReport)> {
    if max_per_class == 0 {
        return Err(Error::InvalidInput("max_per_class must be at least 1".into()));
    }
    let mut selected = vec![false; manifest.len()];
    let mut count = vec![0usize; manifest.n_classes];
    let mut selected_for = vec![0usize; manifest.n_classes];
    for c in 0..manifest.n_classes {
        let mut candidates: Vec<usize> = (0..manifest.len())
            .filter(|&i| manifest.clips[i].weak_labels.contains(c))
            .collect();
        candidates.shuffle(&mut rng_for(seed, &[stream::SUBSAMPLE, c as u64]));
        for i in candidates {
            if count[c] >= max_per_class {
                break;
            }
            if selected[i] {
                continue;
            }
            selected[i] = true;
            selected_for[c] += 1;
            for &l in manifest.clips[i].weak_labels.ids() {
                count[l] += 1;
            }
        }
    }
    let clips = manifest
        .clips
        .iter()
        .zip(&selected)
        .filter(|(_, &s)| s)
        .map(|(c, _)| c.clone())
        .collect();
    Ok((
        Manifest {
            n_classes: manifest.n_classes,
            clips,
        },
        SubsampleReport {
            selected_for_class: selected_for,
        },
    ))
}
