use serde::{Deserialize, Serialize};

use super::annotator::TrainOutcome;
use super::features::PooledBank;
use super::train::{check_finite_loss, validation_map, LogEvent};
use crate::datagen::Manifest;
use crate::error::{Error, Result};
use crate::labelspace::{RandomSampler, SegmentationConfig, SoftLabelStore};
use crate::model::{
    adam_step, distill_loss, poly_decay_lr, AdamState, MicroTagger, ModelCheckpoint, RngState, TaggerShape, TopK,
};
use crate::rng::{derive_seed, stream};

/// Weight on the pseudo-label term: 1 is pure PSL, 0 is pure weak labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillConfig {
    pub alpha: f64,
}

impl DistillConfig {
    pub fn new(alpha: f64) -> Result<Self> {
        let c = Self { alpha };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config("alpha", format!("{} is outside [0, 1]", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudentConfig {
    /// Set from the model section of a run config.
    #[serde(skip)]
    pub hidden: usize,
    pub batch_size: usize,
    pub max_epochs: u64,
    /// Epochs without a validation improvement before stopping.
    pub patience: u64,
    pub top_k: usize,
    pub base_lr: f64,
    pub lr_power: f64,
    pub log_every: u64,
}

impl Default for StudentConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            batch_size: 32,
            max_epochs: 60,
            patience: 15,
            top_k: 4,
            base_lr: 1e-3,
            lr_power: 1.0,
            log_every: 50,
        }
    }
}

impl StudentConfig {
    pub fn validate(&self, section: &str) -> Result<()> {
        for (v, f) in [
            (self.hidden as u64, "hidden"),
            (self.batch_size as u64, "batch_size"),
            (self.max_epochs, "max_epochs"),
            (self.patience, "patience"),
            (self.top_k as u64, "top_k"),
            (self.log_every, "log_every"),
        ] {
            if v == 0 {
                return Err(Error::config(format!("{section}.{f}"), "must be at least 1"));
            }
        }
        if !(self.base_lr > 0.0) {
            return Err(Error::config(format!("{section}.base_lr"), "must be positive"));
        }
        if !(self.lr_power > 0.0) {
            return Err(Error::config(format!("{section}.lr_power"), "must be positive"));
        }
        Ok(())
    }
}

/// Student training on segment-level targets.
#[derive(Debug, Clone)]
pub struct StudentRun<'a> {
    pub train: &'a Manifest,
    pub valid: &'a Manifest,
    /// Soft labels at `segmentation.segment_seconds`; needed when `alpha > 0`.
    pub store: Option<&'a SoftLabelStore>,
    pub distill: DistillConfig,
    pub segmentation: SegmentationConfig,
    /// Pooled features at the run's resolution covering train and valid clips.
    pub features: &'a PooledBank,
    pub config: StudentConfig,
    pub seed: u64,
    /// Pure PSL training never looks at the original labels.
    pub discard_weak_labels: bool,
    /// Start from this model instead of a fresh one (its frozen mask is kept).
    pub init: Option<&'a MicroTagger>,
    pub config_hash: String,
}

struct Example {
    clip: usize,
    seg: usize,
}

/// Random-order epochs, no augmentation, early stopping on validation mAP and
/// top-k checkpoint averaging. The loss is
/// `alpha * BCE(soft) + (1 - alpha) * BCE(propagated weak)`.
pub fn train_student(run: &StudentRun) -> Result<TrainOutcome> {
    let cfg = &run.config;
    cfg.validate("student")?;
    run.distill.validate()?;
    run.segmentation.validate()?;
    let n = run.segmentation.segment_seconds;
    let alpha = run.distill.alpha;
    if run.features.segment_seconds() != n {
        return Err(Error::InvalidInput(format!(
            "features are at {} s but the run segments at {n} s",
            run.features.segment_seconds()
        )));
    }
    if alpha > 0.0 {
        let store = run
            .store
            .ok_or_else(|| Error::InvalidInput(format!("alpha = {alpha} needs a soft-label store")))?;
        if store.segment_seconds() != n {
            return Err(Error::InvalidInput(format!(
                "soft labels are at {} s but the run segments at {n} s",
                store.segment_seconds()
            )));
        }
    }
    if alpha < 1.0 && run.discard_weak_labels {
        return Err(Error::InvalidInput(format!(
            "alpha = {alpha} needs weak labels, but they are discarded"
        )));
    }
    if run.train.is_empty() || run.valid.is_empty() {
        return Err(Error::InvalidInput("student training needs non-empty train and valid splits".into()));
    }

    let n_classes = run.train.n_classes;
    let mut examples = Vec::new();
    let mut soft = Vec::new();
    let mut weak = Vec::new();
    for (ci, clip) in run.train.clips.iter().enumerate() {
        let segs = run.features.require(&clip.clip_id)?;
        let w = clip.weak_labels.multi_hot(n_classes);
        for si in 0..segs.len() {
            examples.push(Example { clip: ci, seg: si });
            if alpha > 0.0 {
                let row = run.store.and_then(|s| s.get(&clip.clip_id, si)).ok_or_else(|| {
                    Error::Missing(format!("soft labels for clip {} segment {si}", clip.clip_id))
                })?;
                if row.len() != n_classes {
                    return Err(Error::Shape(format!("soft row has {} classes, manifest {n_classes}", row.len())));
                }
                soft.push(row.to_vec());
            }
            if alpha < 1.0 {
                weak.push(w.clone());
            }
        }
    }

    let mut model = match run.init {
        Some(m) => {
            if m.shape().n_classes != n_classes || m.shape().n_in != first_dim(run.features, run.train)? {
                return Err(Error::Shape("initial model does not fit this task".into()));
            }
            m.clone()
        }
        None => {
            let shape = TaggerShape::new(first_dim(run.features, run.train)?, cfg.hidden, n_classes);
            MicroTagger::new(shape, derive_seed(run.seed, &[stream::INIT]))
        }
    };
    let shape = model.shape();
    let frozen = model.frozen_mask();
    let mut adam = AdamState::new(shape.n_params(), cfg.base_lr);
    let mut sampler = RandomSampler::new(examples.len(), run.seed)?;
    let steps_per_epoch = examples.len().div_ceil(cfg.batch_size) as u64;
    let total_steps = steps_per_epoch * cfg.max_epochs;
    let mut top = TopK::new(cfg.top_k);
    let mut log = Vec::new();
    let mut best = f64::NEG_INFINITY;
    let mut stale = 0;
    let mut step = 0u64;
    let mut epochs_run = 0;

    for epoch in 1..=cfg.max_epochs {
        let order: Vec<usize> = sampler.by_ref().take(examples.len()).collect();
        for batch in order.chunks(cfg.batch_size) {
            step += 1;
            let pooled: Vec<Vec<f64>> = batch
                .iter()
                .map(|&i| {
                    let e = &examples[i];
                    run.features.require(&run.train.clips[e.clip].clip_id).map(|s| s[e.seg].clone())
                })
                .collect::<Result<_>>()?;
            let pick = |t: &Vec<Vec<f64>>| -> Option<Vec<Vec<f64>>> {
                (!t.is_empty()).then(|| batch.iter().map(|&i| t[i].clone()).collect())
            };
            let (s, w) = (pick(&soft), pick(&weak));
            let cache = model.forward_pooled(&pooled)?;
            let out = distill_loss(&cache.logits, s.as_deref(), w.as_deref(), alpha)?;
            check_finite_loss(out.loss, step)?;
            let grads = model.backward(&cache, &out.grad_logits)?;
            let lr = poly_decay_lr(cfg.base_lr, step - 1, total_steps, cfg.lr_power)?;
            adam_step(model.params_mut(), &grads, &mut adam, lr, frozen.as_deref())?;
            if step % cfg.log_every == 0 {
                log.push(LogEvent::Train { step, loss: out.loss, lr });
            }
        }
        epochs_run = epoch;
        let map = validation_map(&model, run.valid, run.features)?;
        log.push(LogEvent::Valid { step, epoch, map });
        top.offer(ModelCheckpoint::from_model(
            &model,
            epoch,
            step,
            map,
            RngState {
                seed: run.seed,
                position: step,
            },
            &run.config_hash,
        ));
        if map > best {
            best = map;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                log.push(LogEvent::EarlyStop {
                    step,
                    epoch,
                    best_map: best,
                });
                break;
            }
        }
    }

    let mut averaged = MicroTagger::from_params(shape, top.average()?)?;
    averaged.set_backbone_frozen(model.is_backbone_frozen());
    let map = validation_map(&averaged, run.valid, run.features)?;
    log.push(LogEvent::Done {
        step,
        averaged: top.checkpoints().len(),
        map,
    });
    let checkpoint = ModelCheckpoint::from_model(
        &averaged,
        epochs_run,
        step,
        map,
        RngState {
            seed: run.seed,
            position: step,
        },
        &run.config_hash,
    );
    Ok(TrainOutcome { checkpoint, log })
}

fn first_dim(features: &PooledBank, train: &Manifest) -> Result<usize> {
    let clip = train
        .clips
        .first()
        .ok_or_else(|| Error::InvalidInput("empty train split".into()))?;
    features
        .require(&clip.clip_id)?
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::InvalidInput(format!("clip {} has no segments", clip.clip_id)))
}
