use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::audio::AudioSet;
use super::features::{segment_audio, PooledBank, PowerBank};
use super::train::{check_finite_loss, validation_map, LogEvent};
use crate::datagen::Manifest;
use crate::dsp::{FeatureSegment, MelConfig, MelExtractor, SegmentOrigin};
use crate::error::{Error, Result};
use crate::labelspace::{apply_wave_aug, mixup, spec_augment, PseudoBalancedSampler, SegmentationConfig, SpecAugSpec, WaveAugSpec};
use crate::model::{adam_step, bce_with_logits, poly_decay_lr, AdamState, MicroTagger, ModelCheckpoint, RngState, TaggerShape, TopK};
use crate::rng::{derive_seed, rng_for, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotatorConfig {
    /// Set from the model section of a run config.
    #[serde(skip)]
    pub hidden: usize,
    pub steps: u64,
    pub batch_size: usize,
    pub base_lr: f64,
    pub lr_power: f64,
    /// Validate (and offer a checkpoint) every this many steps.
    pub val_every: u64,
    pub top_k: usize,
    pub wave_aug: WaveAugSpec,
    pub spec_aug: SpecAugSpec,
    /// Beta parameter for within-batch mixup; 0 turns mixup off.
    pub mixup_alpha: f64,
    pub log_every: u64,
}

impl Default for AnnotatorConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            steps: 2000,
            batch_size: 32,
            base_lr: 1e-3,
            lr_power: 1.0,
            val_every: 100,
            top_k: 4,
            wave_aug: WaveAugSpec {
                gain_db_range: 6.0,
                polarity_invert_p: 0.5,
                time_shift_max_s: 0.0,
            },
            spec_aug: SpecAugSpec {
                n_time_masks: 2,
                max_time_w: 40,
                n_freq_masks: 2,
                max_freq_w: 8,
            },
            mixup_alpha: 0.2,
            log_every: 50,
        }
    }
}

impl AnnotatorConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: u64, f: &str| {
            if v == 0 {
                Err(Error::config(format!("annotator.{f}"), "must be at least 1"))
            } else {
                Ok(())
            }
        };
        pos(self.hidden as u64, "hidden")?;
        pos(self.steps, "steps")?;
        pos(self.batch_size as u64, "batch_size")?;
        pos(self.val_every, "val_every")?;
        pos(self.top_k as u64, "top_k")?;
        pos(self.log_every, "log_every")?;
        if !(self.base_lr > 0.0) {
            return Err(Error::config("annotator.base_lr", "must be positive"));
        }
        if !(self.lr_power > 0.0) {
            return Err(Error::config("annotator.lr_power", "must be positive"));
        }
        if !(self.mixup_alpha >= 0.0) {
            return Err(Error::config("annotator.mixup_alpha", "must be non-negative"));
        }
        self.wave_aug.validate().map_err(|e| match e {
            Error::Config { field, reason } => Error::config(format!("annotator.{field}"), reason),
            e => e,
        })
    }
}

/// Machine-annotator training on weak labels.
#[derive(Debug, Clone)]
pub struct AnnotatorRun<'a> {
    pub train: &'a Manifest,
    pub valid: &'a Manifest,
    pub audio: &'a AudioSet,
    pub mel: MelConfig,
    /// Normally the clip length, so every example is a whole clip.
    pub segmentation: SegmentationConfig,
    pub config: AnnotatorConfig,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weight-averaged final model.
    pub checkpoint: ModelCheckpoint,
    pub log: Vec<LogEvent>,
}

/// Trains with pseudo-balanced sampling, wave and spectrogram augmentation
/// and mixup, validates every `val_every` steps and returns the average of
/// the `top_k` best checkpoints.
pub fn train_annotator(run: &AnnotatorRun) -> Result<TrainOutcome> {
    let cfg = &run.config;
    cfg.validate()?;
    run.segmentation.validate()?;
    run.mel.validate()?;
    if run.train.is_empty() || run.valid.is_empty() {
        return Err(Error::InvalidInput("annotator training needs non-empty train and valid splits".into()));
    }
    let n = run.segmentation.segment_seconds;
    let extractor = MelExtractor::new(&run.mel)?;
    let (power, errors) = PowerBank::build(run.train, run.audio, &extractor, n);
    if let Some(e) = errors.first() {
        return Err(Error::Missing(format!("train clip {}: {}", e.clip_id, e.message)));
    }
    let (valid_bank, errors) = PooledBank::build(run.valid, run.audio, &extractor, n);
    if let Some(e) = errors.first() {
        return Err(Error::Missing(format!("valid clip {}: {}", e.clip_id, e.message)));
    }

    let n_classes = run.train.n_classes;
    let labels: Vec<_> = run.train.clips.iter().map(|c| c.weak_labels.clone()).collect();
    let targets: Vec<Vec<f64>> = labels.iter().map(|l| l.multi_hot(n_classes)).collect();
    let mut sampler = PseudoBalancedSampler::new(&labels, n_classes, run.seed)?;
    let mut rng = rng_for(run.seed, &[stream::AUGMENT]);

    let shape = TaggerShape::new(run.mel.n_mels, cfg.hidden, n_classes);
    let mut model = MicroTagger::new(shape, derive_seed(run.seed, &[stream::INIT]));
    let mut adam = AdamState::new(shape.n_params(), cfg.base_lr);
    let mut top = TopK::new(cfg.top_k);
    let mut log = Vec::new();
    let sr = run.mel.sample_rate_hz;
    let floor = run.mel.log_floor;

    for step in 1..=cfg.steps {
        let mut feats = Vec::with_capacity(cfg.batch_size);
        let mut ys = Vec::with_capacity(cfg.batch_size);
        for clip_idx in sampler.by_ref().take(cfg.batch_size) {
            let clip = &run.train.clips[clip_idx];
            let segs = power.require(&clip.clip_id)?;
            let seg = if segs.len() == 1 {
                0
            } else {
                rand::Rng::random_range(&mut rng, 0..segs.len())
            };
            let origin = SegmentOrigin::whole(clip.clip_id.as_str(), n);
            let draw = cfg.wave_aug.draw(sr, &mut rng);
            let mut f = if draw.shift != 0 {
                let audio = segment_audio(run.audio.require(&clip.clip_id)?, n, seg)?;
                extractor.extract(&apply_wave_aug(&audio, draw)?, origin)?
            } else {
                // Polarity leaves the power spectrum unchanged; gain scales it.
                segs[seg].to_log(draw.scale * draw.scale, floor, origin)?
            };
            if !cfg.spec_aug.is_identity() {
                f = spec_augment(&f, &cfg.spec_aug, &mut rng)?;
            }
            feats.push(f);
            ys.push(targets[clip_idx].clone());
        }
        let (feats, ys) = if cfg.mixup_alpha > 0.0 {
            mix_batch(&feats, &ys, cfg.mixup_alpha, &mut rng)?
        } else {
            (feats, ys)
        };
        let pooled: Vec<Vec<f64>> = feats.iter().map(FeatureSegment::time_mean).collect();
        let cache = model.forward_pooled(&pooled)?;
        let out = bce_with_logits(&cache.logits, &ys)?;
        check_finite_loss(out.loss, step)?;
        let grads = model.backward(&cache, &out.grad_logits)?;
        let lr = poly_decay_lr(cfg.base_lr, step - 1, cfg.steps, cfg.lr_power)?;
        adam_step(model.params_mut(), &grads, &mut adam, lr, None)?;
        if step % cfg.log_every == 0 {
            log.push(LogEvent::Train { step, loss: out.loss, lr });
        }
        if step % cfg.val_every == 0 || step == cfg.steps {
            let map = validation_map(&model, run.valid, &valid_bank)?;
            log.push(LogEvent::Valid { step, epoch: 0, map });
            top.offer(ModelCheckpoint::from_model(
                &model,
                0,
                step,
                map,
                RngState {
                    seed: run.seed,
                    position: step,
                },
                &run.config_hash,
            ));
        }
    }

    let averaged = MicroTagger::from_params(shape, top.average()?)?;
    let map = validation_map(&averaged, run.valid, &valid_bank)?;
    log.push(LogEvent::Done {
        step: cfg.steps,
        averaged: top.checkpoints().len(),
        map,
    });
    let checkpoint = ModelCheckpoint::from_model(
        &averaged,
        0,
        cfg.steps,
        map,
        RngState {
            seed: run.seed,
            position: cfg.steps,
        },
        &run.config_hash,
    );
    Ok(TrainOutcome { checkpoint, log })
}

/// Pairs every example with a random partner from the same batch.
fn mix_batch<R: rand::Rng>(
    feats: &[FeatureSegment],
    ys: &[Vec<f64>],
    alpha: f64,
    rng: &mut R,
) -> Result<(Vec<FeatureSegment>, Vec<Vec<f64>>)> {
    let mut partner: Vec<usize> = (0..feats.len()).collect();
    partner.shuffle(rng);
    let mut out_f = Vec::with_capacity(feats.len());
    let mut out_y = Vec::with_capacity(feats.len());
    for (i, &j) in partner.iter().enumerate() {
        let (f, y, _) = mixup((&feats[i], &ys[i]), (&feats[j], &ys[j]), alpha, rng)?;
        out_f.push(f);
        out_y.push(y);
    }
    Ok((out_f, out_y))
}
