use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ClassSchema, ClipRecord, LabelSet, Manifest, Split, StrongEvent};
use crate::dsp::{wav, Waveform};
use crate::error::{Error, Result};
use crate::rng::{rng_for, stream};

const PEAK_LIMIT: f64 = 0.9;
/// RMS of a unit-gain event before peak normalization.
const EVENT_RMS: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    pub n_clips: usize,
    pub clip_seconds: f64,
    pub n_classes: usize,
    /// Inclusive range of distinct events per clip.
    pub events_per_clip: [usize; 2],
    pub event_seconds: [f64; 2],
    pub gain_range: [f64; 2],
    pub sample_rate_hz: u32,
    pub background_dbfs: f64,
    /// Class frequency skew; 0 draws classes uniformly.
    pub zipf_exponent: f64,
    pub valid_fraction: f64,
    pub eval_fraction: f64,
    pub schema_variant: u32,
    pub clip_prefix: String,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            n_clips: 100,
            clip_seconds: 10.0,
            n_classes: 10,
            events_per_clip: [1, 3],
            event_seconds: [0.5, 2.5],
            gain_range: [0.3, 1.0],
            sample_rate_hz: 16_000,
            background_dbfs: -30.0,
            zipf_exponent: 0.0,
            valid_fraction: 0.15,
            eval_fraction: 0.15,
            schema_variant: 0,
            clip_prefix: "clip".into(),
            seed: 0,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_clips == 0 {
            return Err(Error::config("corpus.n_clips", "must be at least 1"));
        }
        if self.n_classes < 2 {
            return Err(Error::config("corpus.n_classes", "must be at least 2"));
        }
        if !(self.clip_seconds > 0.0) {
            return Err(Error::config("corpus.clip_seconds", "must be positive"));
        }
        let [lo, hi] = self.events_per_clip;
        if lo < 1 || hi > 14 || lo > hi {
            return Err(Error::config("corpus.events_per_clip", "must satisfy 1 <= min <= max <= 14"));
        }
        if hi > self.n_classes {
            return Err(Error::config("corpus.events_per_clip", "cannot exceed n_classes (events use distinct classes)"));
        }
        let [dlo, dhi] = self.event_seconds;
        if !(dlo > 0.0 && dlo <= dhi) {
            return Err(Error::config("corpus.event_seconds", "must satisfy 0 < min <= max"));
        }
        let [glo, ghi] = self.gain_range;
        if !(glo > 0.0 && glo <= ghi) {
            return Err(Error::config("corpus.gain_range", "must satisfy 0 < min <= max"));
        }
        if self.sample_rate_hz == 0 {
            return Err(Error::config("corpus.sample_rate_hz", "must be positive"));
        }
        let frac_ok = |f: f64| (0.0..1.0).contains(&f);
        if !frac_ok(self.valid_fraction) || !frac_ok(self.eval_fraction) || self.valid_fraction + self.eval_fraction >= 1.0 {
            return Err(Error::config("corpus.valid_fraction", "split fractions must be in [0,1) and leave a train split"));
        }
        if !(self.zipf_exponent >= 0.0) {
            return Err(Error::config("corpus.zipf_exponent", "must be non-negative"));
        }
        Ok(())
    }

    fn split_of(&self, index: usize) -> Split {
        let n = self.n_clips as f64;
        let n_eval = (n * self.eval_fraction).round() as usize;
        let n_valid = (n * self.valid_fraction).round() as usize;
        let n_train = self.n_clips.saturating_sub(n_eval + n_valid);
        if index < n_train {
            Split::Train
        } else if index < n_train + n_valid {
            Split::Valid
        } else {
            Split::Eval
        }
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedClip {
    pub record: ClipRecord,
    pub wave: Waveform,
}

/// Mixes the given events (gains are pre-normalization linear amplitudes)
/// over white background noise and peak-limits the result. Returns the
/// waveform, quantized to the 16-bit grid, and the events with their
/// effective gains.
pub fn synthesize_clip(
    schema: &ClassSchema,
    events: &[StrongEvent],
    duration_s: f64,
    sample_rate_hz: u32,
    background_dbfs: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(Waveform, Vec<StrongEvent>)> {
    let sr = sample_rate_hz as f64;
    let n = (duration_s * sr).round() as usize;
    let noise_rms = 10f64.powf(background_dbfs / 20.0);
    // Uniform noise on [-a, a] has RMS a / sqrt(3).
    let a = noise_rms * 3f64.sqrt();
    let mut mix: Vec<f64> = (0..n).map(|_| rng.random_range(-a..=a)).collect();
    for e in events {
        let class = schema
            .get(e.class_id)
            .ok_or_else(|| Error::InvalidInput(format!("unknown class {}", e.class_id)))?;
        let start = (e.onset_s * sr).round() as usize;
        let end = ((e.offset_s * sr).round() as usize).min(n);
        if start >= end {
            return Err(Error::InvalidInput(format!("event {e:?} is empty at {sample_rate_hz} Hz")));
        }
        let sig = class.synth.render(end - start, sample_rate_hz, rng);
        for (m, s) in mix[start..end].iter_mut().zip(sig) {
            *m += e.gain * s;
        }
    }
    let peak = mix.iter().fold(0.0f64, |p, v| p.max(v.abs()));
    let scale = if peak > PEAK_LIMIT { PEAK_LIMIT / peak } else { 1.0 };
    let samples = mix
        .iter()
        .map(|v| ((v * scale * 32767.0).round() / 32767.0) as f32)
        .collect();
    let scaled = events
        .iter()
        .map(|e| StrongEvent {
            gain: e.gain * scale,
            ..e.clone()
        })
        .collect();
    Ok((Waveform::new(samples, sample_rate_hz)?, scaled))
}

fn pick_classes(k: usize, weights: &[f64], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut remaining: Vec<(usize, f64)> = weights.iter().copied().enumerate().collect();
    let mut chosen = Vec::with_capacity(k);
    for _ in 0..k {
        let total: f64 = remaining.iter().map(|(_, w)| w).sum();
        let mut u = rng.random_range(0.0..total);
        let mut pick = remaining.len() - 1;
        for (i, (_, w)) in remaining.iter().enumerate() {
            if u < *w {
                pick = i;
                break;
            }
            u -= w;
        }
        chosen.push(remaining.remove(pick).0);
    }
    chosen
}

fn generate_one(spec: &CorpusSpec, schema: &ClassSchema, weights: &[f64], index: usize) -> Result<GeneratedClip> {
    let mut rng = rng_for(spec.seed, &[stream::CLIP, index as u64]);
    let sr = spec.sample_rate_hz as f64;
    let n_samples = (spec.clip_seconds * sr).round() as usize;
    let k = rng.random_range(spec.events_per_clip[0]..=spec.events_per_clip[1]);
    let classes = pick_classes(k, weights, &mut rng);
    let mut events = Vec::with_capacity(k);
    for class_id in classes {
        let dur = rng
            .random_range(spec.event_seconds[0]..=spec.event_seconds[1])
            .min(spec.clip_seconds);
        let len = ((dur * sr).round() as usize).clamp(1, n_samples);
        let start = rng.random_range(0..=n_samples - len);
        let gain = EVENT_RMS * rng.random_range(spec.gain_range[0]..=spec.gain_range[1]);
        events.push(StrongEvent {
            class_id,
            onset_s: start as f64 / sr,
            offset_s: (start + len) as f64 / sr,
            gain,
        });
    }
    events.sort_by(|a, b| a.onset_s.total_cmp(&b.onset_s).then(a.class_id.cmp(&b.class_id)));
    let (wave, events) = synthesize_clip(
        schema,
        &events,
        spec.clip_seconds,
        spec.sample_rate_hz,
        spec.background_dbfs,
        &mut rng,
    )?;
    let labels = LabelSet::new(events.iter().map(|e| e.class_id).collect());
    let clip_id = format!("{}{:06}", spec.clip_prefix, index);
    Ok(GeneratedClip {
        record: ClipRecord {
            audio_path: PathBuf::from("audio").join(format!("{clip_id}.wav")),
            clip_id,
            duration_s: n_samples as f64 / sr,
            split: spec.split_of(index),
            weak_labels: labels.clone(),
            original_weak_labels: labels,
            strong_events: events,
        },
        wave,
    })
}

/// Generates every clip in memory. Per-clip randomness derives from
/// `(seed, clip_index)` only.
pub fn generate_clips(spec: &CorpusSpec, schema: &ClassSchema) -> Result<Vec<GeneratedClip>> {
    spec.validate()?;
    if schema.len() != spec.n_classes {
        return Err(Error::config(
            "corpus.n_classes",
            format!("schema has {} classes, spec asks for {}", schema.len(), spec.n_classes),
        ));
    }
    let weights: Vec<f64> = (0..spec.n_classes)
        .map(|c| 1.0 / ((c + 1) as f64).powf(spec.zipf_exponent))
        .collect();
    (0..spec.n_clips)
        .map(|i| generate_one(spec, schema, &weights, i))
        .collect()
}

/// Writes `audio/<clip_id>.wav`, `manifest.jsonl` and `classes.jsonl` under `out_dir`.
pub fn generate_corpus(spec: &CorpusSpec, schema: &ClassSchema, out_dir: &Path) -> Result<Manifest> {
    let clips = generate_clips(spec, schema)?;
    let audio_dir = out_dir.join("audio");
    fs::create_dir_all(&audio_dir).map_err(|e| Error::io(&audio_dir, e))?;
    for clip in &clips {
        wav::write(&out_dir.join(&clip.record.audio_path), &clip.wave)?;
    }
    let manifest = Manifest::new(spec.n_classes, clips.into_iter().map(|c| c.record).collect())?;
    manifest.write_jsonl(&out_dir.join("manifest.jsonl"))?;
    schema.write_jsonl(&out_dir.join("classes.jsonl"))?;
    Ok(manifest)
}
