//! Waveforms, WAV I/O and the log-mel front end.

mod mel;
pub mod wav;

pub use mel::{frame_count, log_mel, mel_filterbank, mel_to_hz, hz_to_mel, MelExtractor, MelFilter, MelPower};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mono audio. Samples are nominally in [-1, 1]; only finiteness is enforced.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f32>,
    sample_rate_hz: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(Error::InvalidInput("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!("waveform sample {i}")));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn silence(len: usize, sample_rate_hz: u32) -> Self {
        Self {
            samples: vec![0.0; len],
            sample_rate_hz: sample_rate_hz.max(1),
        }
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    /// Samples `[start, end)` copied into a new waveform; out-of-range bounds are clamped.
    pub fn slice(&self, start: usize, end: usize) -> Waveform {
        let end = end.min(self.samples.len());
        let start = start.min(end);
        Waveform {
            samples: self.samples[start..end].to_vec(),
            sample_rate_hz: self.sample_rate_hz,
        }
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|&s| (s as f64) * (s as f64)).sum()
    }
}

/// Right-pads with zeros or truncates so the result holds exactly
/// `round(target_seconds * sample_rate)` samples.
pub fn pad_or_trim(wave: &Waveform, target_seconds: f64) -> Result<Waveform> {
    if !(target_seconds > 0.0) || !target_seconds.is_finite() {
        return Err(Error::InvalidInput(format!(
            "target duration must be positive, got {target_seconds}"
        )));
    }
    let target = (target_seconds * wave.sample_rate_hz as f64).round() as usize;
    let mut samples = wave.samples.clone();
    samples.resize(target, 0.0);
    Ok(Waveform {
        samples,
        sample_rate_hz: wave.sample_rate_hz,
    })
}

/// Log-mel front-end parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MelConfig {
    pub n_mels: usize,
    pub win_ms: f64,
    pub hop_ms: f64,
    pub sample_rate_hz: u32,
    pub fmin_hz: f64,
    pub fmax_hz: f64,
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            n_mels: 64,
            win_ms: 32.0,
            hop_ms: 10.0,
            sample_rate_hz: 16_000,
            fmin_hz: 0.0,
            fmax_hz: 8_000.0,
            log_floor: 1e-10,
        }
    }
}

impl MelConfig {
    /// Default front end at another sample rate, with `fmax` at Nyquist.
    pub fn at_sample_rate(sample_rate_hz: u32) -> Self {
        Self {
            sample_rate_hz,
            fmax_hz: sample_rate_hz as f64 / 2.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_mels == 0 {
            return Err(Error::config("n_mels", "must be at least 1"));
        }
        if self.sample_rate_hz == 0 {
            return Err(Error::config("sample_rate_hz", "must be positive"));
        }
        if !(self.hop_ms > 0.0) {
            return Err(Error::config("hop_ms", "must be positive"));
        }
        if !(self.win_ms >= self.hop_ms) {
            return Err(Error::config("win_ms", "must be at least hop_ms"));
        }
        if !(self.fmin_hz >= 0.0) {
            return Err(Error::config("fmin_hz", "must be non-negative"));
        }
        if !(self.fmin_hz < self.fmax_hz) {
            return Err(Error::config("fmin_hz", "must be below fmax_hz"));
        }
        if self.fmax_hz > self.sample_rate_hz as f64 / 2.0 {
            return Err(Error::config("fmax_hz", "must not exceed the Nyquist frequency"));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::config("log_floor", "must be positive"));
        }
        if self.hop_len() == 0 {
            return Err(Error::config("hop_ms", "shorter than one sample"));
        }
        Ok(())
    }

    pub fn win_len(&self) -> usize {
        (self.win_ms * self.sample_rate_hz as f64 / 1000.0).round() as usize
    }

    pub fn hop_len(&self) -> usize {
        (self.hop_ms * self.sample_rate_hz as f64 / 1000.0).round() as usize
    }

    pub fn n_fft(&self) -> usize {
        self.win_len().max(1).next_power_of_two()
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft() / 2 + 1
    }
}

/// Where a feature segment came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentOrigin {
    pub clip_id: String,
    pub seg_index: usize,
    pub start_s: f64,
    pub end_s: f64,
}

impl SegmentOrigin {
    pub fn whole(clip_id: impl Into<String>, duration_s: f64) -> Self {
        Self {
            clip_id: clip_id.into(),
            seg_index: 0,
            start_s: 0.0,
            end_s: duration_s,
        }
    }
}

/// Log-mel matrix for one segment, `n_frames x n_mels`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSegment {
    frames: Vec<f32>,
    n_frames: usize,
    n_mels: usize,
    pub origin: SegmentOrigin,
}

impl FeatureSegment {
    pub fn new(frames: Vec<f32>, n_mels: usize, origin: SegmentOrigin) -> Result<Self> {
        if n_mels == 0 || frames.is_empty() || frames.len() % n_mels != 0 {
            return Err(Error::Shape(format!(
                "{} values do not form whole frames of width {n_mels}",
                frames.len()
            )));
        }
        if frames.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature segment".into()));
        }
        Ok(Self {
            n_frames: frames.len() / n_mels,
            frames,
            n_mels,
            origin,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn values(&self) -> &[f32] {
        &self.frames
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.frames
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.frames[t * self.n_mels..(t + 1) * self.n_mels]
    }

    pub fn get(&self, t: usize, m: usize) -> f32 {
        self.frames[t * self.n_mels + m]
    }

    pub fn mean(&self) -> f64 {
        self.frames.iter().map(|&v| v as f64).sum::<f64>() / self.frames.len() as f64
    }

    /// Mean over time for each mel bin.
    pub fn time_mean(&self) -> Vec<f64> {
        let mut acc = vec![0.0f64; self.n_mels];
        for row in self.frames.chunks_exact(self.n_mels) {
            for (a, &v) in acc.iter_mut().zip(row) {
                *a += v as f64;
            }
        }
        let inv = 1.0 / self.n_frames as f64;
        acc.iter_mut().for_each(|a| *a *= inv);
        acc
    }
}
