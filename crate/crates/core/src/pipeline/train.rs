use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::features::{infer_pooled, PooledBank};
use crate::datagen::Manifest;
use crate::error::{Error, Result};
use crate::metrics::{map_score, EvalBatch, MetricsReport};
use crate::model::MicroTagger;

/// One line of a training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogEvent {
    Train { step: u64, loss: f64, lr: f64 },
    Valid { step: u64, epoch: u64, map: f64 },
    EarlyStop { step: u64, epoch: u64, best_map: f64 },
    Done { step: u64, averaged: usize, map: f64 },
}

pub fn write_log(events: &[LogEvent], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for e in events {
        serde_json::to_writer(&mut out, e)?;
        out.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

/// Which label set serves as ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelSource {
    /// The (possibly corrupted) labels a model would be trained on.
    Weak,
    /// The labels before corruption.
    Original,
}

/// Clip-level scores for every clip of `manifest`, in manifest order.
pub fn score_clips(model: &MicroTagger, manifest: &Manifest, features: &PooledBank) -> Result<Vec<Vec<f64>>> {
    manifest
        .clips
        .iter()
        .map(|c| infer_pooled(model, features.require(&c.clip_id)?))
        .collect()
}

pub fn eval_batch(scores: Vec<Vec<f64>>, manifest: &Manifest, source: LabelSource) -> Result<EvalBatch> {
    let truths = manifest
        .clips
        .iter()
        .map(|c| {
            let labels = match source {
                LabelSource::Weak => &c.weak_labels,
                LabelSource::Original => &c.original_weak_labels,
            };
            (0..manifest.n_classes).map(|k| labels.contains(k)).collect()
        })
        .collect();
    EvalBatch::new(scores, truths)
}

pub fn evaluate_model(
    model: &MicroTagger,
    manifest: &Manifest,
    features: &PooledBank,
    source: LabelSource,
) -> Result<MetricsReport> {
    let scores = score_clips(model, manifest, features)?;
    MetricsReport::evaluate(&eval_batch(scores, manifest, source)?)
}

/// Clip-level mAP on a validation split against its weak labels.
pub(crate) fn validation_map(model: &MicroTagger, valid: &Manifest, features: &PooledBank) -> Result<f64> {
    let scores = score_clips(model, valid, features)?;
    map_score(&eval_batch(scores, valid, LabelSource::Weak)?)
}

pub(crate) fn check_finite_loss(loss: f64, step: u64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("training loss {loss} at step {step}")))
    }
}
