use serde::{Deserialize, Serialize};

use crate::datagen::ClipRecord;
use crate::dsp::{pad_or_trim, Waveform};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LastChunkPolicy {
    #[default]
    PadZero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationConfig {
    pub segment_seconds: f64,
    #[serde(default)]
    pub last_chunk_policy: LastChunkPolicy,
}

impl SegmentationConfig {
    pub fn new(segment_seconds: f64) -> Result<Self> {
        let cfg = Self {
            segment_seconds,
            last_chunk_policy: LastChunkPolicy::PadZero,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.segment_seconds > 0.0) || !self.segment_seconds.is_finite() {
            return Err(Error::config("segment_seconds", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentSpan {
    pub seg_index: usize,
    pub start_s: f64,
    pub end_s: f64,
    /// Shorter than the segment length; zero-padded before feature extraction.
    pub padded: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SegmentLabel {
    WeakPropagated(Vec<f64>),
    PslSoft(Vec<f64>),
}

impl SegmentLabel {
    pub fn values(&self) -> &[f64] {
        match self {
            SegmentLabel::WeakPropagated(v) | SegmentLabel::PslSoft(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentRecord {
    pub clip_id: String,
    pub seg_index: usize,
    pub start_s: f64,
    pub end_s: f64,
    pub label: SegmentLabel,
}

// Durations that are a whole multiple of the segment length up to float noise
// must not grow a spurious sliver segment.
const SLIVER: f64 = 1e-9;

/// `ceil(duration / segment_seconds)`, at least one.
pub fn segment_count(duration_s: f64, segment_seconds: f64) -> usize {
    ((duration_s / segment_seconds - SLIVER).ceil() as usize).max(1)
}

/// Contiguous, non-overlapping spans covering `[0, duration)`.
pub fn segment_clip(clip: &ClipRecord, cfg: &SegmentationConfig) -> Result<Vec<SegmentSpan>> {
    cfg.validate()?;
    if !(clip.duration_s > 0.0) {
        return Err(Error::InvalidInput(format!("clip {} has non-positive duration", clip.clip_id)));
    }
    Ok(spans_for(clip.duration_s, cfg.segment_seconds))
}

pub(crate) fn spans_for(duration_s: f64, n: f64) -> Vec<SegmentSpan> {
    let count = segment_count(duration_s, n);
    (0..count)
        .map(|i| {
            let start_s = i as f64 * n;
            let end_s = if i + 1 == count { duration_s } else { (i + 1) as f64 * n };
            SegmentSpan {
                seg_index: i,
                start_s,
                end_s,
                padded: end_s - start_s < n - SLIVER,
            }
        })
        .collect()
}

/// Copies the clip's weak label vector onto every span.
pub fn propagate_weak(clip: &ClipRecord, spans: &[SegmentSpan], n_classes: usize) -> Vec<SegmentRecord> {
    let label = clip.weak_labels.multi_hot(n_classes);
    spans
        .iter()
        .map(|s| SegmentRecord {
            clip_id: clip.clip_id.clone(),
            seg_index: s.seg_index,
            start_s: s.start_s,
            end_s: s.end_s,
            label: SegmentLabel::WeakPropagated(label.clone()),
        })
        .collect()
}

/// Audio for one span, zero-padded to the full segment length.
pub fn segment_wave(wave: &Waveform, span: &SegmentSpan, segment_seconds: f64) -> Result<Waveform> {
    let sr = wave.sample_rate_hz() as f64;
    let start = (span.start_s * sr).round() as usize;
    let end = (span.end_s * sr).round() as usize;
    pad_or_trim(&wave.slice(start, end), segment_seconds)
}
