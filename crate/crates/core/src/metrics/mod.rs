//! Evaluation metrics and label-noise analyses.

mod analysis;
mod probit;
mod ranking;

pub use analysis::{
    align_with_predictions, dropped_label_recovery, label_count_histogram, label_coverage, predicted_label_sets,
    segment_label_count_histogram, weak_label_count_histogram, CoverageReport, LabelCountHistogram, RecoveryReport,
    COVERAGE_BINS,
};
pub use probit::{norm_cdf, probit};
pub use ranking::{
    average_precision, clip_ap_at_k, dprime, dprime_from_auc, lwlrap, map_at_k, map_score, per_class_ap, roc_auc,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Clip-level scores and binary truths, both `N x C`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalBatch {
    pub scores: Vec<Vec<f64>>,
    pub truths: Vec<Vec<bool>>,
}

impl EvalBatch {
    pub fn new(scores: Vec<Vec<f64>>, truths: Vec<Vec<bool>>) -> Result<Self> {
        if scores.len() != truths.len() || scores.is_empty() {
            return Err(Error::Shape(format!("{} score rows vs {} truth rows", scores.len(), truths.len())));
        }
        let c = scores[0].len();
        if c == 0 || scores.iter().any(|r| r.len() != c) || truths.iter().any(|r| r.len() != c) {
            return Err(Error::Shape("score and truth rows must share one non-zero width".into()));
        }
        if scores.iter().flatten().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("evaluation scores".into()));
        }
        Ok(Self { scores, truths })
    }

    pub fn n_clips(&self) -> usize {
        self.scores.len()
    }

    pub fn n_classes(&self) -> usize {
        self.scores[0].len()
    }

    pub fn class_scores(&self, c: usize) -> Vec<f64> {
        self.scores.iter().map(|r| r[c]).collect()
    }

    pub fn class_truths(&self, c: usize) -> Vec<bool> {
        self.truths.iter().map(|r| r[c]).collect()
    }
}

/// Headline numbers for one evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_clips: usize,
    pub map: f64,
    pub dprime: f64,
    pub map_at_3: f64,
    pub lwlrap: f64,
    /// Classes left out of the macro means for lack of positives.
    pub excluded_classes: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label_count_histogram: Option<LabelCountHistogram>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coverage: Option<CoverageReport>,
}

impl MetricsReport {
    pub fn evaluate(batch: &EvalBatch) -> Result<Self> {
        let excluded_classes = per_class_ap(batch)
            .iter()
            .enumerate()
            .filter(|(_, ap)| ap.is_none())
            .map(|(c, _)| c)
            .collect();
        Ok(Self {
            n_clips: batch.n_clips(),
            map: map_score(batch)?,
            dprime: dprime(batch)?,
            map_at_3: map_at_k(batch, 3)?,
            lwlrap: lwlrap(batch)?,
            excluded_classes,
            label_count_histogram: None,
            coverage: None,
        })
    }
}
