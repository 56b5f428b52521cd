use std::f64::consts::PI;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dsp::{hz_to_mel, mel_to_hz};
use crate::error::{Error, Result};

/// Synthesis recipe of one event class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "synth_kind", content = "synth_params", rename_all = "snake_case")]
pub enum SynthKind {
    Tone { freq_hz: f64 },
    Chord { freqs_hz: Vec<f64> },
    NoiseBand { lo_hz: f64, hi_hz: f64 },
    Chirp { f0_hz: f64, f1_hz: f64 },
    AmTone { carrier_hz: f64, mod_hz: f64 },
}

impl SynthKind {
    pub fn kind_name(&self) -> &'static str {
        match self {
            SynthKind::Tone { .. } => "tone",
            SynthKind::Chord { .. } => "chord",
            SynthKind::NoiseBand { .. } => "noise_band",
            SynthKind::Chirp { .. } => "chirp",
            SynthKind::AmTone { .. } => "am_tone",
        }
    }

    /// Unit-RMS event signal of `len` samples with 10 ms linear fades.
    pub fn render(&self, len: usize, sample_rate_hz: u32, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let sr = sample_rate_hz as f64;
        let phase0: f64 = rng.random_range(0.0..2.0 * PI);
        let mut sig: Vec<f64> = match self {
            SynthKind::Tone { freq_hz } => (0..len)
                .map(|i| (2.0 * PI * freq_hz * i as f64 / sr + phase0).sin())
                .collect(),
            SynthKind::Chord { freqs_hz } => {
                let phases: Vec<f64> = freqs_hz.iter().map(|_| rng.random_range(0.0..2.0 * PI)).collect();
                (0..len)
                    .map(|i| {
                        freqs_hz
                            .iter()
                            .zip(&phases)
                            .map(|(f, p)| (2.0 * PI * f * i as f64 / sr + p).sin())
                            .sum()
                    })
                    .collect()
            }
            SynthKind::NoiseBand { lo_hz, hi_hz } => band_noise(len, sr, *lo_hz, *hi_hz, rng),
            SynthKind::Chirp { f0_hz, f1_hz } => {
                let dur = len.max(1) as f64 / sr;
                let k = (f1_hz - f0_hz) / dur;
                (0..len)
                    .map(|i| {
                        let t = i as f64 / sr;
                        (2.0 * PI * (f0_hz * t + 0.5 * k * t * t) + phase0).sin()
                    })
                    .collect()
            }
            SynthKind::AmTone { carrier_hz, mod_hz } => (0..len)
                .map(|i| {
                    let t = i as f64 / sr;
                    (0.5 + 0.5 * (2.0 * PI * mod_hz * t).sin()) * (2.0 * PI * carrier_hz * t + phase0).sin()
                })
                .collect(),
        };
        let rms = (sig.iter().map(|v| v * v).sum::<f64>() / len.max(1) as f64).sqrt();
        if rms > 0.0 {
            sig.iter_mut().for_each(|v| *v /= rms);
        }
        let fade = ((0.01 * sr) as usize).min(len / 2);
        for i in 0..fade {
            let g = i as f64 / fade as f64;
            sig[i] *= g;
            sig[len - 1 - i] *= g;
        }
        sig
    }
}

fn band_noise(len: usize, sr: f64, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if len == 0 {
        return Vec::new();
    }
    let n = len.next_power_of_two();
    let mut buf: Vec<Complex<f64>> = (0..n)
        .map(|_| Complex::new(rng.random_range(-1.0..1.0), 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let f = k.min(n - k) as f64 * sr / n as f64;
        if f < lo || f > hi {
            *c = Complex::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.truncate(len);
    buf.into_iter().map(|c| c.re).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventClass {
    pub class_id: usize,
    pub name: String,
    #[serde(flatten)]
    pub synth: SynthKind,
}

/// Dense, ordered set of event classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassSchema {
    classes: Vec<EventClass>,
}

impl ClassSchema {
    pub fn new(classes: Vec<EventClass>) -> Result<Self> {
        if classes.len() < 2 {
            return Err(Error::config("n_classes", "at least two classes are required"));
        }
        for (i, c) in classes.iter().enumerate() {
            if c.class_id != i {
                return Err(Error::InvalidInput(format!(
                    "class ids must be dense and ordered: position {i} has id {}",
                    c.class_id
                )));
            }
            if classes[..i].iter().any(|o| o.synth == c.synth) {
                return Err(Error::InvalidInput(format!("class {i} duplicates another class's synthesis")));
            }
        }
        Ok(Self { classes })
    }

    /// Spectrally separated classes: anchor frequencies equally spaced on the
    /// mel scale, synthesis kinds cycling through all five recipes. Schemas
    /// with different `variant` values interleave their anchors and rotate
    /// the kinds, so they share no class.
    pub fn standard(n_classes: usize, sample_rate_hz: u32, variant: u32) -> Result<Self> {
        if n_classes < 2 {
            return Err(Error::config("n_classes", "at least two classes are required"));
        }
        let nyq = sample_rate_hz as f64 / 2.0;
        let (lo, hi) = (hz_to_mel(150.0), hz_to_mel(0.8 * nyq));
        let shift = match variant % 4 {
            0 => 0.0,
            1 => 0.5,
            2 => 0.25,
            _ => 0.75,
        };
        let cap = |f: f64| f.min(0.95 * nyq);
        let classes = (0..n_classes)
            .map(|i| {
                let anchor = mel_to_hz(lo + (hi - lo) * (i as f64 + shift) / n_classes as f64);
                let synth = match (i + 2 * variant as usize) % 5 {
                    0 => SynthKind::Tone { freq_hz: anchor },
                    1 => SynthKind::Chord {
                        freqs_hz: vec![anchor, cap(anchor * 1.26), cap(anchor * 1.5)],
                    },
                    2 => SynthKind::NoiseBand {
                        lo_hz: anchor / 1.12,
                        hi_hz: cap(anchor * 1.12),
                    },
                    3 => SynthKind::Chirp {
                        f0_hz: anchor / 1.15,
                        f1_hz: cap(anchor * 1.15),
                    },
                    _ => SynthKind::AmTone {
                        carrier_hz: anchor,
                        mod_hz: 4.0 + (i % 4) as f64 * 2.0,
                    },
                };
                EventClass {
                    class_id: i,
                    name: format!("{}_{:.0}hz_v{variant}", synth.kind_name(), anchor),
                    synth,
                }
            })
            .collect();
        Self::new(classes)
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn classes(&self) -> &[EventClass] {
        &self.classes
    }

    pub fn get(&self, class_id: usize) -> Option<&EventClass> {
        self.classes.get(class_id)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        for c in &self.classes {
            serde_json::to_writer(&mut out, c)?;
            out.push(b'\n');
        }
        fs::File::create(path)
            .and_then(|mut f| f.write_all(&out))
            .map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut classes = Vec::new();
        for (n, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            classes.push(
                serde_json::from_str(&line)
                    .map_err(|e| Error::format("class schema", path, format!("line {}: {e}", n + 1)))?,
            );
        }
        Self::new(classes)
    }
}
