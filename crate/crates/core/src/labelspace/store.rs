use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::segment::segment_count;
use crate::datagen::Manifest;
use crate::error::{Error, Result};

pub const STORE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoreHeader {
    pub version: u32,
    #[serde(rename = "C")]
    pub n_classes: usize,
    pub segment_seconds: f64,
    pub annotator_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SoftRow {
    pub clip_id: String,
    pub seg_index: usize,
    pub probs: Vec<f64>,
}

/// Segment-level soft labels keyed by `(clip_id, seg_index)`.
///
/// Values are quantized to six decimals on insert, which is exactly what the
/// on-disk format keeps, so a write/read cycle reproduces the store bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabelStore {
    header: StoreHeader,
    rows: Vec<SoftRow>,
    index: HashMap<(String, usize), usize>,
}

fn quantize(p: f64) -> f64 {
    (p * 1e6).round() / 1e6
}

impl SoftLabelStore {
    pub fn new(n_classes: usize, segment_seconds: f64, annotator_id: impl Into<String>) -> Result<Self> {
        if n_classes == 0 {
            return Err(Error::InvalidInput("soft label store needs at least one class".into()));
        }
        if !(segment_seconds > 0.0) {
            return Err(Error::InvalidInput("segment_seconds must be positive".into()));
        }
        Ok(Self {
            header: StoreHeader {
                version: STORE_VERSION,
                n_classes,
                segment_seconds,
                annotator_id: annotator_id.into(),
            },
            rows: Vec::new(),
            index: HashMap::new(),
        })
    }

    pub fn header(&self) -> &StoreHeader {
        &self.header
    }

    pub fn n_classes(&self) -> usize {
        self.header.n_classes
    }

    pub fn segment_seconds(&self) -> f64 {
        self.header.segment_seconds
    }

    pub fn rows(&self) -> &[SoftRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn insert(&mut self, clip_id: &str, seg_index: usize, probs: &[f64]) -> Result<()> {
        if probs.len() != self.header.n_classes {
            return Err(Error::Shape(format!(
                "soft label for {clip_id}/{seg_index} has {} classes, store has {}",
                probs.len(),
                self.header.n_classes
            )));
        }
        if let Some(p) = probs.iter().find(|p| !(p.is_finite() && (0.0..=1.0).contains(*p))) {
            return Err(Error::InvalidInput(format!("soft label {p} for {clip_id}/{seg_index} is outside [0,1]")));
        }
        let key = (clip_id.to_owned(), seg_index);
        if self.index.contains_key(&key) {
            return Err(Error::InvalidInput(format!("duplicate soft label row {clip_id}/{seg_index}")));
        }
        self.index.insert(key, self.rows.len());
        self.rows.push(SoftRow {
            clip_id: clip_id.to_owned(),
            seg_index,
            probs: probs.iter().map(|&p| quantize(p)).collect(),
        });
        Ok(())
    }

    pub fn get(&self, clip_id: &str, seg_index: usize) -> Option<&[f64]> {
        self.index
            .get(&(clip_id.to_owned(), seg_index))
            .map(|&i| self.rows[i].probs.as_slice())
    }

    /// Rows `0, 1, ...` of a clip, stopping at the first gap.
    pub fn clip_rows(&self, clip_id: &str) -> Vec<&[f64]> {
        (0..).map_while(|s| self.get(clip_id, s)).collect()
    }

    /// Every segment of every manifest clip has exactly one row and nothing else is stored.
    pub fn validate_against(&self, manifest: &Manifest) -> Result<()> {
        if manifest.n_classes != self.header.n_classes {
            return Err(Error::Shape(format!(
                "store has {} classes, manifest {}",
                self.header.n_classes, manifest.n_classes
            )));
        }
        let mut expected = 0;
        for clip in &manifest.clips {
            let n = segment_count(clip.duration_s, self.header.segment_seconds);
            expected += n;
            if let Some(s) = (0..n).find(|&s| self.get(&clip.clip_id, s).is_none()) {
                return Err(Error::Missing(format!("soft label row {}/{s}", clip.clip_id)));
            }
        }
        if expected != self.rows.len() {
            return Err(Error::InvalidInput(format!(
                "store holds {} rows, manifest needs {expected}",
                self.rows.len()
            )));
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        serde_json::to_writer(&mut out, &self.header)?;
        out.push(b'\n');
        for row in &self.rows {
            let probs: Vec<String> = row.probs.iter().map(|p| format!("{p:.6}")).collect();
            writeln!(
                out,
                "{{\"clip_id\":{},\"seg_index\":{},\"probs\":[{}]}}",
                serde_json::to_string(&row.clip_id)?,
                row.seg_index,
                probs.join(",")
            )
            .expect("writing to a Vec cannot fail");
        }
        Ok(out)
    }

    /// Atomic write through a temporary sibling file.
    pub fn write(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("jsonl.tmp");
        let bytes = self.to_jsonl()?;
        fs::File::create(&tmp)
            .and_then(|mut f| f.write_all(&bytes).and_then(|_| f.sync_all()))
            .map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(f).lines();
        let bad = |r: String| Error::format("soft label store", path, r);
        let header: StoreHeader = match lines.next() {
            Some(line) => serde_json::from_str(&line.map_err(|e| Error::io(path, e))?)
                .map_err(|e| bad(format!("header: {e}")))?,
            None => return Err(bad("empty file".into())),
        };
        if header.version != STORE_VERSION {
            return Err(bad(format!("unsupported version {}", header.version)));
        }
        let mut store = Self::new(header.n_classes, header.segment_seconds, header.annotator_id)?;
        for (n, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let row: SoftRow = serde_json::from_str(&line).map_err(|e| bad(format!("line {}: {e}", n + 2)))?;
            store
                .insert(&row.clip_id, row.seg_index, &row.probs)
                .map_err(|e| bad(format!("line {}: {e}", n + 2)))?;
        }
        Ok(store)
    }
}
