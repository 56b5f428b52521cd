//! Label-noise analyses over thresholded machine annotations.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::{LabelSet, Manifest};
use crate::error::{Error, Result};
use crate::labelspace::SoftLabelStore;

/// Number of equal-width coverage bins over [0, 1].
pub const COVERAGE_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelCountHistogram {
    pub threshold: f64,
    /// `counts[k]` clips (or segments) carry exactly `k` labels.
    pub counts: Vec<usize>,
}

impl LabelCountHistogram {
    fn from_sizes(threshold: f64, sizes: impl Iterator<Item = usize>) -> Self {
        let mut counts = Vec::new();
        for s in sizes {
            if counts.len() <= s {
                counts.resize(s + 1, 0);
            }
            counts[s] += 1;
        }
        Self { threshold, counts }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
        w.write_record(["labels_per_clip", "count"]).map_err(|e| Error::io(path, e.into()))?;
        for (k, c) in self.counts.iter().enumerate() {
            w.write_record([k.to_string(), c.to_string()]).map_err(|e| Error::io(path, e.into()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub values: Vec<f64>,
    pub histogram: Vec<usize>,
    pub mean: f64,
    /// Clips skipped because they have no original label.
    pub excluded_zero_label: usize,
}

impl CoverageReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut text = String::from("bin_lo,bin_hi,count\n");
        for (b, c) in self.histogram.iter().enumerate() {
            let lo = b as f64 / COVERAGE_BINS as f64;
            let hi = (b + 1) as f64 / COVERAGE_BINS as f64;
            text.push_str(&format!("{lo:.1},{hi:.1},{c}\n"));
        }
        f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

fn check_threshold(threshold: f64) -> Result<()> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidInput(format!("threshold {threshold} must lie in (0, 1)")));
    }
    Ok(())
}

fn thresholded(probs: &[f64], threshold: f64) -> impl Iterator<Item = usize> + '_ {
    probs.iter().enumerate().filter(move |(_, &p)| p >= threshold).map(|(c, _)| c)
}

/// Clip-level label sets: the union over a clip's segments of the classes
/// scoring at least `threshold`. Clips appear in store order.
pub fn predicted_label_sets(store: &SoftLabelStore, threshold: f64) -> Result<Vec<(String, LabelSet)>> {
    check_threshold(threshold)?;
    let mut order: Vec<String> = Vec::new();
    let mut sets: HashMap<String, Vec<usize>> = HashMap::new();
    for row in store.rows() {
        let entry = sets.entry(row.clip_id.clone()).or_insert_with(|| {
            order.push(row.clip_id.clone());
            Vec::new()
        });
        entry.extend(thresholded(&row.probs, threshold));
    }
    Ok(order
        .into_iter()
        .map(|id| {
            let set = LabelSet::new(sets.remove(&id).unwrap_or_default());
            (id, set)
        })
        .collect())
}

/// Distribution of clip-level label counts after thresholding (`>=`),
/// aggregating segments by union.
pub fn label_count_histogram(store: &SoftLabelStore, threshold: f64) -> Result<LabelCountHistogram> {
    let sets = predicted_label_sets(store, threshold)?;
    Ok(LabelCountHistogram::from_sizes(threshold, sets.iter().map(|(_, s)| s.len())))
}

/// Same as [`label_count_histogram`] with every segment counted on its own.
pub fn segment_label_count_histogram(store: &SoftLabelStore, threshold: f64) -> Result<LabelCountHistogram> {
    check_threshold(threshold)?;
    Ok(LabelCountHistogram::from_sizes(
        threshold,
        store.rows().iter().map(|r| thresholded(&r.probs, threshold).count()),
    ))
}

/// Histogram of the original (weak) label counts per clip.
pub fn weak_label_count_histogram(manifest: &Manifest) -> LabelCountHistogram {
    LabelCountHistogram::from_sizes(1.0, manifest.clips.iter().map(|c| c.weak_labels.len()))
}

/// `|original ∩ predicted| / |original|` per aligned pair; pairs without an
/// original label are excluded and counted.
pub fn label_coverage(pairs: &[(LabelSet, LabelSet)]) -> CoverageReport {
    let mut values = Vec::new();
    let mut excluded = 0;
    for (original, predicted) in pairs {
        if original.is_empty() {
            excluded += 1;
        } else {
            values.push(original.intersection_len(predicted) as f64 / original.len() as f64);
        }
    }
    let mut histogram = vec![0; COVERAGE_BINS];
    for &v in &values {
        histogram[((v * COVERAGE_BINS as f64) as usize).min(COVERAGE_BINS - 1)] += 1;
    }
    let mean = if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    };
    CoverageReport {
        values,
        histogram,
        mean,
        excluded_zero_label: excluded,
    }
}

/// Pairs each manifest clip's labels with its predicted set. `use_original`
/// picks the uncorrupted labels instead of the (possibly corrupted) weak ones.
pub fn align_with_predictions(
    manifest: &Manifest,
    predicted: &[(String, LabelSet)],
    use_original: bool,
) -> Result<Vec<(LabelSet, LabelSet)>> {
    let lookup: HashMap<&str, &LabelSet> = predicted.iter().map(|(id, s)| (id.as_str(), s)).collect();
    manifest
        .clips
        .iter()
        .map(|clip| {
            let pred = lookup
                .get(clip.clip_id.as_str())
                .ok_or_else(|| Error::Missing(format!("predictions for clip {}", clip.clip_id)))?;
            let truth = if use_original {
                &clip.original_weak_labels
            } else {
                &clip.weak_labels
            };
            Ok((truth.clone(), (*pred).clone()))
        })
        .collect()
}

/// How many labels removed by corruption reappear in the predicted sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub dropped: usize,
    pub recovered: usize,
    pub rate: f64,
}

pub fn dropped_label_recovery(manifest: &Manifest, predicted: &[(String, LabelSet)]) -> Result<RecoveryReport> {
    let lookup: HashMap<&str, &LabelSet> = predicted.iter().map(|(id, s)| (id.as_str(), s)).collect();
    let (mut dropped, mut recovered) = (0, 0);
    for clip in &manifest.clips {
        let pred = lookup
            .get(clip.clip_id.as_str())
            .ok_or_else(|| Error::Missing(format!("predictions for clip {}", clip.clip_id)))?;
        for &c in clip.original_weak_labels.ids() {
            if !clip.weak_labels.contains(c) {
                dropped += 1;
                recovered += pred.contains(c) as usize;
            }
        }
    }
    Ok(RecoveryReport {
        dropped,
        recovered,
        rate: if dropped == 0 { 1.0 } else { recovered as f64 / dropped as f64 },
    })
}
