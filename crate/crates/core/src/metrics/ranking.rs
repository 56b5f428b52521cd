//! Rank-based multi-label metrics. Every metric here depends on scores only
//! through their order; equal scores keep input order (a stable sort).

use super::probit::probit;
use super::EvalBatch;
use crate::error::{Error, Result};

const AUC_CLAMP: f64 = 1e-6;

/// Indices by descending score, ties in input order.
fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx
}

/// Non-interpolated AP: mean precision at each positive, walking down the
/// ranking. `None` when there are no positives.
pub fn average_precision(scores: &[f64], truths: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), truths.len(), "scores and truths must align");
    let n_pos = truths.iter().filter(|&&t| t).count();
    if n_pos == 0 {
        return None;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in ranking(scores).iter().enumerate() {
        if truths[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(sum / n_pos as f64)
}

/// Per-class AP; classes without positives are `None`.
pub fn per_class_ap(batch: &EvalBatch) -> Vec<Option<f64>> {
    (0..batch.n_classes())
        .map(|c| average_precision(&batch.class_scores(c), &batch.class_truths(c)))
        .collect()
}

/// Unweighted mean AP over classes that have at least one positive.
pub fn map_score(batch: &EvalBatch) -> Result<f64> {
    let aps: Vec<f64> = per_class_ap(batch).into_iter().flatten().collect();
    if aps.is_empty() {
        return Err(Error::InvalidInput("no class has a positive example; mAP is undefined".into()));
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

/// ROC AUC by the Mann-Whitney statistic, ties counting one half.
/// `None` unless both positives and negatives are present.
pub fn roc_auc(scores: &[f64], truths: &[bool]) -> Option<f64> {
    let n_pos = truths.iter().filter(|&&t| t).count();
    let n_neg = truths.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Average 1-based ranks over tie groups.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_pos += avg_rank * idx[i..=j].iter().filter(|&&k| truths[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

/// `sqrt(2) * probit(auc)` with the AUC clamped away from 0 and 1.
pub fn dprime_from_auc(auc: f64) -> f64 {
    std::f64::consts::SQRT_2 * probit(auc.clamp(AUC_CLAMP, 1.0 - AUC_CLAMP))
}

/// Macro-averaged d' over classes with both positives and negatives.
pub fn dprime(batch: &EvalBatch) -> Result<f64> {
    let ds: Vec<f64> = (0..batch.n_classes())
        .filter_map(|c| roc_auc(&batch.class_scores(c), &batch.class_truths(c)))
        .map(dprime_from_auc)
        .collect();
    if ds.is_empty() {
        return Err(Error::InvalidInput("no class has both positives and negatives; d' is undefined".into()));
    }
    Ok(ds.iter().sum::<f64>() / ds.len() as f64)
}

/// Per-clip average precision at `k` (the FSD2018 challenge MAP@k): precision
/// at each correct prediction among the top `k`, over `min(|truth|, k)`.
/// `None` for a clip without truths.
pub fn clip_ap_at_k(scores: &[f64], truths: &[bool], k: usize) -> Option<f64> {
    let n_true = truths.iter().filter(|&&t| t).count();
    if n_true == 0 {
        return None;
    }
    let mut hits = 0;
    let mut sum = 0.0;
    for (rank, &c) in ranking(scores).iter().take(k).enumerate() {
        if truths[c] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(sum / n_true.min(k) as f64)
}

/// Mean of [`clip_ap_at_k`] over clips with at least one truth.
pub fn map_at_k(batch: &EvalBatch, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    let per_clip: Vec<f64> = (0..batch.n_clips())
        .filter_map(|i| clip_ap_at_k(&batch.scores[i], &batch.truths[i], k))
        .collect();
    if per_clip.is_empty() {
        return Err(Error::InvalidInput("no clip has a truth label; mAP@k is undefined".into()));
    }
    Ok(per_clip.iter().sum::<f64>() / per_clip.len() as f64)
}

/// Label-weighted label-ranking average precision (the FSD2019 challenge
/// metric). Each (clip, positive label) pair contributes the precision of
/// the clip's ranking prefix ending at that label, and all pairs are
/// weighted equally, which weights classes by their label frequency.
pub fn lwlrap(batch: &EvalBatch) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for i in 0..batch.n_clips() {
        let truths = &batch.truths[i];
        let mut hits = 0;
        for (rank, &c) in ranking(&batch.scores[i]).iter().enumerate() {
            if truths[c] {
                hits += 1;
                total += hits as f64 / (rank + 1) as f64;
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::InvalidInput("no positive labels; lwlrap is undefined".into()));
    }
    Ok(total / n as f64)
}
