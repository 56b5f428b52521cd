use super::annotator::TrainOutcome;
use super::features::PooledBank;
use super::student::{train_student, DistillConfig, StudentConfig, StudentRun};
use crate::datagen::Manifest;
use crate::error::Result;
use crate::labelspace::SegmentationConfig;
use crate::model::{freeze_backbone_reinit_head, MicroTagger};

/// Frozen-backbone transfer: keep the source backbone, put a fresh head
/// for the target classes on it and train only that head on the target's
/// weak labels.
#[derive(Debug, Clone)]
pub struct TransferRun<'a> {
    pub source: &'a MicroTagger,
    pub train: &'a Manifest,
    pub valid: &'a Manifest,
    /// Target features at `segmentation.segment_seconds`.
    pub features: &'a PooledBank,
    pub segmentation: SegmentationConfig,
    pub config: StudentConfig,
    pub seed: u64,
    pub config_hash: String,
}

pub fn transfer(run: &TransferRun) -> Result<TrainOutcome> {
    let head = freeze_backbone_reinit_head(run.source, run.train.n_classes, run.seed);
    train_student(&StudentRun {
        train: run.train,
        valid: run.valid,
        store: None,
        distill: DistillConfig::new(0.0)?,
        segmentation: run.segmentation.clone(),
        features: run.features,
        config: run.config.clone(),
        seed: run.seed,
        discard_weak_labels: false,
        init: Some(&head),
        config_hash: run.config_hash.clone(),
    })
}
