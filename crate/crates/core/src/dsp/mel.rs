use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{FeatureSegment, MelConfig, SegmentOrigin, Waveform};
use crate::error::{Error, Result};

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Number of analysis frames for `n_samples` samples. Frames start at sample 0
/// with no centering; inputs shorter than one window yield a single
/// zero-padded frame.
pub fn frame_count(n_samples: usize, win: usize, hop: usize) -> usize {
    if n_samples >= win {
        (n_samples - win) / hop + 1
    } else {
        1
    }
}

/// One triangular filter stored sparsely from its first nonzero bin.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilter {
    pub start_bin: usize,
    pub weights: Vec<f64>,
    pub center_hz: f64,
}

impl MelFilter {
    pub fn apply(&self, power: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(&power[self.start_bin..])
            .map(|(w, p)| w * p)
            .sum()
    }

    /// Dense row of length `n_bins`.
    pub fn dense(&self, n_bins: usize) -> Vec<f64> {
        let mut row = vec![0.0; n_bins];
        row[self.start_bin..self.start_bin + self.weights.len()].copy_from_slice(&self.weights);
        row
    }
}

/// HTK-style triangular filterbank with peak weight 1, edges equally spaced
/// on the mel scale between `fmin` and `fmax`.
///
/// A filter narrower than the FFT bin spacing can miss every bin; such a
/// filter degenerates to a single unit weight at the bin nearest its center.
pub fn mel_filterbank(cfg: &MelConfig) -> Result<Vec<MelFilter>> {
    cfg.validate()?;
    let n_bins = cfg.n_bins();
    let bin_hz = cfg.sample_rate_hz as f64 / cfg.n_fft() as f64;
    let (mel_lo, mel_hi) = (hz_to_mel(cfg.fmin_hz), hz_to_mel(cfg.fmax_hz));
    let step = (mel_hi - mel_lo) / (cfg.n_mels + 1) as f64;
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + step * i as f64))
        .collect();

    let filters = (0..cfg.n_mels)
        .map(|m| {
            let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            let dense: Vec<f64> = (0..n_bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= center {
                        (f - lo) / (center - lo)
                    } else {
                        (hi - f) / (hi - center)
                    }
                })
                .collect();
            match (dense.iter().position(|&w| w > 0.0), dense.iter().rposition(|&w| w > 0.0)) {
                (Some(first), Some(last)) => MelFilter {
                    start_bin: first,
                    weights: dense[first..=last].to_vec(),
                    center_hz: center,
                },
                _ => MelFilter {
                    start_bin: ((center / bin_hz).round() as usize).min(n_bins - 1),
                    weights: vec![1.0],
                    center_hz: center,
                },
            }
        })
        .collect();
    Ok(filters)
}

/// Reusable log-mel extractor holding the FFT plan, window and filterbank.
#[derive(Clone)]
pub struct MelExtractor {
    cfg: MelConfig,
    filters: Vec<MelFilter>,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for MelExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MelExtractor").field("cfg", &self.cfg).finish_non_exhaustive()
    }
}

impl MelExtractor {
    pub fn new(cfg: &MelConfig) -> Result<Self> {
        let filters = mel_filterbank(cfg)?;
        let win = cfg.win_len();
        // Periodic Hann.
        let window = (0..win)
            .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / win as f64).cos())
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(cfg.n_fft());
        Ok(Self {
            cfg: cfg.clone(),
            filters,
            window,
            fft,
        })
    }

    pub fn config(&self) -> &MelConfig {
        &self.cfg
    }

    pub fn filters(&self) -> &[MelFilter] {
        &self.filters
    }

    pub fn n_frames(&self, n_samples: usize) -> usize {
        frame_count(n_samples, self.cfg.win_len(), self.cfg.hop_len())
    }

    /// `ln(mel_power + log_floor)` for every frame.
    pub fn extract(&self, wave: &Waveform, origin: SegmentOrigin) -> Result<FeatureSegment> {
        self.extract_power(wave)?.to_log(1.0, self.cfg.log_floor, origin)
    }

    /// Linear mel power for every frame, before the log.
    pub fn extract_power(&self, wave: &Waveform) -> Result<MelPower> {
        if wave.sample_rate_hz() != self.cfg.sample_rate_hz {
            return Err(Error::SampleRate {
                wave: wave.sample_rate_hz(),
                config: self.cfg.sample_rate_hz,
            });
        }
        if wave.is_empty() {
            return Err(Error::InvalidInput("empty waveform".into()));
        }
        let (win, hop, n_fft) = (self.cfg.win_len(), self.cfg.hop_len(), self.cfg.n_fft());
        let samples = wave.samples();
        let n_frames = self.n_frames(samples.len());
        let n_mels = self.cfg.n_mels;
        let n_bins = self.cfg.n_bins();

        let mut out = Vec::with_capacity(n_frames * n_mels);
        let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0.0f64; n_bins];
        for t in 0..n_frames {
            let start = t * hop;
            for (i, slot) in buf.iter_mut().enumerate() {
                let s = if i < win {
                    samples.get(start + i).copied().unwrap_or(0.0) as f64 * self.window[i]
                } else {
                    0.0
                };
                *slot = Complex::new(s, 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            out.extend(self.filters.iter().map(|f| f.apply(&power) as f32));
        }
        Ok(MelPower { values: out, n_mels })
    }
}

/// Linear mel power, `n_frames x n_mels`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MelPower {
    values: Vec<f32>,
    n_mels: usize,
}

impl MelPower {
    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn n_frames(&self) -> usize {
        self.values.len() / self.n_mels
    }

    /// `ln(power_gain * power + log_floor)`. Scaling a waveform by `g`
    /// scales its power by `g^2`, so this is the log-mel of the scaled audio.
    pub fn to_log(&self, power_gain: f64, log_floor: f64, origin: SegmentOrigin) -> Result<FeatureSegment> {
        let frames = self
            .values
            .iter()
            .map(|&p| (power_gain * p as f64 + log_floor).ln() as f32)
            .collect();
        FeatureSegment::new(frames, self.n_mels, origin)
    }
}

/// One-shot log-mel extraction; prefer [`MelExtractor`] in loops.
pub fn log_mel(wave: &Waveform, cfg: &MelConfig) -> Result<FeatureSegment> {
    MelExtractor::new(cfg)?.extract(wave, SegmentOrigin::whole("", wave.duration_s()))
}
