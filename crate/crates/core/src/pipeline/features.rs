use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;

use super::audio::{AudioSet, ClipError};
use crate::datagen::Manifest;
use crate::dsp::{FeatureSegment, MelExtractor, MelPower, SegmentOrigin, Waveform};
use crate::error::{Error, Result};
use crate::labelspace::{segment_wave, spans_for};
use crate::model::MicroTagger;

const BANK_MAGIC: &[u8; 8] = b"PSLFEAT\0";
const BANK_VERSION: u32 = 1;

/// Log-mel matrices for every `n`-second segment of a clip, the last one
/// zero-padded to full length.
pub fn clip_segments(extractor: &MelExtractor, clip_id: &str, wave: &Waveform, n: f64) -> Result<Vec<FeatureSegment>> {
    segment_waves(wave, n)?
        .into_iter()
        .map(|(origin, w)| {
            extractor.extract(
                &w,
                SegmentOrigin {
                    clip_id: clip_id.to_string(),
                    ..origin
                },
            )
        })
        .collect()
}

fn segment_waves(wave: &Waveform, n: f64) -> Result<Vec<(SegmentOrigin, Waveform)>> {
    if !(n > 0.0) {
        return Err(Error::config("segment_seconds", "must be positive"));
    }
    if wave.is_empty() {
        return Err(Error::InvalidInput("empty waveform".into()));
    }
    spans_for(wave.duration_s(), n)
        .iter()
        .map(|span| {
            let origin = SegmentOrigin {
                clip_id: String::new(),
                seg_index: span.seg_index,
                start_s: span.start_s,
                end_s: span.end_s,
            };
            Ok((origin, segment_wave(wave, span, n)?))
        })
        .collect()
}

/// Mean of the per-segment probabilities, summed in segment order.
pub fn mean_probs(segment_probs: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = segment_probs
        .first()
        .ok_or_else(|| Error::InvalidInput("no segments to average".into()))?;
    let mut acc = vec![0.0; first.len()];
    for p in segment_probs {
        for (a, v) in acc.iter_mut().zip(p) {
            *a += v;
        }
    }
    let inv = 1.0 / segment_probs.len() as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    Ok(acc)
}

/// Clip-level probabilities: segment the audio at `n` seconds, run every
/// segment through the model and average.
pub fn infer_clip(model: &MicroTagger, extractor: &MelExtractor, wave: &Waveform, n: f64) -> Result<Vec<f64>> {
    if wave.len() < extractor.config().hop_len() {
        return Err(Error::InvalidInput(format!(
            "clip of {} samples is shorter than one hop",
            wave.len()
        )));
    }
    let segs = clip_segments(extractor, "", wave, n)?;
    mean_probs(&model.forward(&segs)?)
}

/// [`infer_clip`] on already pooled segment features.
pub fn infer_pooled(model: &MicroTagger, pooled: &[Vec<f64>]) -> Result<Vec<f64>> {
    mean_probs(&model.forward_pooled(pooled)?.probs())
}

fn build_parallel<T: Send>(
    manifest: &Manifest,
    audio: &AudioSet,
    f: impl Fn(&str, &Waveform) -> Result<T> + Sync,
) -> (HashMap<String, T>, Vec<ClipError>) {
    let results: Vec<(String, Result<T>)> = manifest
        .clips
        .par_iter()
        .map(|c| {
            let r = audio.require(&c.clip_id).and_then(|w| f(&c.clip_id, w));
            (c.clip_id.clone(), r)
        })
        .collect();
    let mut map = HashMap::new();
    let mut errors = Vec::new();
    for (clip_id, r) in results {
        match r {
            Ok(v) => {
                map.insert(clip_id, v);
            }
            Err(e) => errors.push(ClipError {
                clip_id,
                message: e.to_string(),
            }),
        }
    }
    (map, errors)
}

/// Time-pooled log-mel vectors (the network input) for every segment of
/// every clip at one resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledBank {
    segment_seconds: f64,
    clips: HashMap<String, Vec<Vec<f64>>>,
}

impl PooledBank {
    pub fn new(segment_seconds: f64) -> Self {
        Self {
            segment_seconds,
            clips: HashMap::new(),
        }
    }

    pub fn build(manifest: &Manifest, audio: &AudioSet, extractor: &MelExtractor, n: f64) -> (Self, Vec<ClipError>) {
        let (clips, errors) = build_parallel(manifest, audio, |id, w| {
            Ok(clip_segments(extractor, id, w, n)?.iter().map(FeatureSegment::time_mean).collect())
        });
        (
            Self {
                segment_seconds: n,
                clips,
            },
            errors,
        )
    }

    pub fn segment_seconds(&self) -> f64 {
        self.segment_seconds
    }

    pub fn insert(&mut self, clip_id: impl Into<String>, segments: Vec<Vec<f64>>) {
        self.clips.insert(clip_id.into(), segments);
    }

    pub fn get(&self, clip_id: &str) -> Option<&[Vec<f64>]> {
        self.clips.get(clip_id).map(Vec::as_slice)
    }

    pub fn require(&self, clip_id: &str) -> Result<&[Vec<f64>]> {
        self.get(clip_id)
            .ok_or_else(|| Error::Missing(format!("features for clip {clip_id} at {} s", self.segment_seconds)))
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    /// Merges another bank of the same resolution into this one.
    pub fn extend(&mut self, other: PooledBank) -> Result<()> {
        if other.segment_seconds != self.segment_seconds {
            return Err(Error::InvalidInput(format!(
                "cannot merge {} s features into a {} s bank",
                other.segment_seconds, self.segment_seconds
            )));
        }
        self.clips.extend(other.clips);
        Ok(())
    }

    /// Binary form, clips sorted by id so equal banks give equal bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(BANK_MAGIC);
        out.extend_from_slice(&BANK_VERSION.to_le_bytes());
        out.extend_from_slice(&self.segment_seconds.to_le_bytes());
        let mut ids: Vec<&String> = self.clips.keys().collect();
        ids.sort();
        out.extend_from_slice(&(ids.len() as u64).to_le_bytes());
        for id in ids {
            let segs = &self.clips[id];
            out.extend_from_slice(&(id.len() as u32).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            out.extend_from_slice(&(segs.len() as u32).to_le_bytes());
            out.extend_from_slice(&(segs.first().map_or(0, Vec::len) as u32).to_le_bytes());
            for v in segs.iter().flatten() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |r: &str| Error::format("feature bank", path, r);
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let end = pos.checked_add(n).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated"))?;
            let s = &bytes[pos..end];
            pos = end;
            Ok(s)
        };
        if take(8)? != BANK_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
        if version != BANK_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let segment_seconds = f64::from_le_bytes(take(8)?.try_into().unwrap());
        let n_clips = u64::from_le_bytes(take(8)?.try_into().unwrap());
        let mut clips = HashMap::new();
        for _ in 0..n_clips {
            let id_len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
            let id = String::from_utf8(take(id_len)?.to_vec()).map_err(|_| bad("clip id is not UTF-8"))?;
            let n_segs = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
            let dim = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
            let mut segs = Vec::with_capacity(n_segs);
            for _ in 0..n_segs {
                let raw = take(dim * 8)?;
                segs.push(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect());
            }
            clips.insert(id, segs);
        }
        if pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self {
            segment_seconds,
            clips,
        })
    }
}

/// Linear mel power for every segment of every clip, so that gain
/// augmentation can be applied without repeating the STFT.
#[derive(Debug, Clone)]
pub struct PowerBank {
    segment_seconds: f64,
    clips: HashMap<String, Vec<MelPower>>,
}

impl PowerBank {
    pub fn build(manifest: &Manifest, audio: &AudioSet, extractor: &MelExtractor, n: f64) -> (Self, Vec<ClipError>) {
        let (clips, errors) = build_parallel(manifest, audio, |_, w| {
            segment_waves(w, n)?
                .iter()
                .map(|(_, seg)| extractor.extract_power(seg))
                .collect()
        });
        (
            Self {
                segment_seconds: n,
                clips,
            },
            errors,
        )
    }

    pub fn segment_seconds(&self) -> f64 {
        self.segment_seconds
    }

    pub fn require(&self, clip_id: &str) -> Result<&[MelPower]> {
        self.clips
            .get(clip_id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Missing(format!("mel power for clip {clip_id}")))
    }
}

/// Segment `seg_index` of `wave` at `n` seconds, as audio.
pub(crate) fn segment_audio(wave: &Waveform, n: f64, seg_index: usize) -> Result<Waveform> {
    let spans = spans_for(wave.duration_s(), n);
    let span = spans
        .get(seg_index)
        .ok_or_else(|| Error::InvalidInput(format!("segment {seg_index} out of range")))?;
    segment_wave(wave, span, n)
}
