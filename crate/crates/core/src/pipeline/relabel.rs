use rayon::prelude::*;

use super::audio::{AudioSet, ClipError};
use super::features::{clip_segments, PooledBank};
use crate::datagen::Manifest;
use crate::dsp::MelExtractor;
use crate::error::{Error, Result};
use crate::labelspace::SoftLabelStore;
use crate::model::MicroTagger;

/// Soft labels from the annotator for every `n`-second segment of every
/// clip. Clips whose audio cannot be read or processed are reported and
/// skipped. The manifest's labels are not consulted.
pub fn relabel(
    annotator: &MicroTagger,
    manifest: &Manifest,
    audio: &AudioSet,
    extractor: &MelExtractor,
    n: f64,
    annotator_id: &str,
) -> Result<(SoftLabelStore, Vec<ClipError>)> {
    let per_clip: Vec<Result<Vec<Vec<f64>>>> = manifest
        .clips
        .par_iter()
        .map(|c| {
            let wave = audio.require(&c.clip_id)?;
            annotator.forward(&clip_segments(extractor, &c.clip_id, wave, n)?)
        })
        .collect();
    collect_store(annotator, manifest, per_clip, n, annotator_id)
}

/// [`relabel`] from features pooled at `n` seconds.
pub fn relabel_pooled(
    annotator: &MicroTagger,
    manifest: &Manifest,
    features: &PooledBank,
    annotator_id: &str,
) -> Result<(SoftLabelStore, Vec<ClipError>)> {
    let per_clip: Vec<Result<Vec<Vec<f64>>>> = manifest
        .clips
        .par_iter()
        .map(|c| Ok(annotator.forward_pooled(features.require(&c.clip_id)?)?.probs()))
        .collect();
    collect_store(annotator, manifest, per_clip, features.segment_seconds(), annotator_id)
}

fn collect_store(
    annotator: &MicroTagger,
    manifest: &Manifest,
    per_clip: Vec<Result<Vec<Vec<f64>>>>,
    n: f64,
    annotator_id: &str,
) -> Result<(SoftLabelStore, Vec<ClipError>)> {
    if annotator.shape().n_classes != manifest.n_classes {
        return Err(Error::Shape(format!(
            "annotator predicts {} classes, manifest has {}",
            annotator.shape().n_classes,
            manifest.n_classes
        )));
    }
    let mut store = SoftLabelStore::new(manifest.n_classes, n, annotator_id)?;
    let mut errors = Vec::new();
    for (clip, rows) in manifest.clips.iter().zip(per_clip) {
        match rows {
            Ok(rows) => {
                for (i, p) in rows.iter().enumerate() {
                    store.insert(&clip.clip_id, i, p)?;
                }
            }
            Err(e) => errors.push(ClipError {
                clip_id: clip.clip_id.clone(),
                message: e.to_string(),
            }),
        }
    }
    Ok((store, errors))
}
