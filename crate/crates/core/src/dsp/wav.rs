//! 16-bit PCM mono RIFF/WAVE reading and writing.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::Waveform;
use crate::error::{Error, Result};

const PCM_SCALE: f32 = 32767.0;

pub fn encode(wave: &Waveform) -> Vec<u8> {
    let data_len = (wave.len() * 2) as u32;
    let sr = wave.sample_rate_hz();
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&sr.to_le_bytes());
    out.extend_from_slice(&(sr * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in wave.samples() {
        let q = (s * PCM_SCALE).round().clamp(-PCM_SCALE, PCM_SCALE) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Waveform> {
    let bad = |reason: &str| Error::format("WAV", path, reason);
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(bad("missing RIFF/WAVE header"));
    }
    let mut pos = 12;
    let mut sample_rate = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let len = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body = pos + 8;
        let end = body.checked_add(len).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated chunk"))?;
        match id {
            b"fmt " => {
                if len < 16 {
                    return Err(bad("short fmt chunk"));
                }
                let field = |o: usize| u16::from_le_bytes([bytes[body + o], bytes[body + o + 1]]);
                if field(0) != 1 {
                    return Err(bad("only PCM is supported"));
                }
                if field(2) != 1 {
                    return Err(bad("only mono is supported"));
                }
                if field(14) != 16 {
                    return Err(bad("only 16-bit samples are supported"));
                }
                sample_rate = Some(u32::from_le_bytes(bytes[body + 4..body + 8].try_into().unwrap()));
            }
            b"data" => {
                let sr = sample_rate.ok_or_else(|| bad("data chunk before fmt chunk"))?;
                let samples = bytes[body..end]
                    .chunks_exact(2)
                    .map(|b| i16::from_le_bytes([b[0], b[1]]) as f32 / PCM_SCALE)
                    .collect();
                return Waveform::new(samples, sr);
            }
            _ => {}
        }
        pos = end + (len & 1);
    }
    Err(bad("no data chunk"))
}

pub fn write(path: &Path, wave: &Waveform) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode(wave)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Waveform> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
