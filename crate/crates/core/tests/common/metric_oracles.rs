//! Brute-force metric references. None of these sort; an item's rank is
//! counted directly from pairwise comparisons, with ties going to the item
//! that appears first.
#![allow(dead_code)]

use std::f64::consts::{PI, SQRT_2};

use rand::Rng;

/// Whether item `j` is ranked at or above item `i`.
fn at_or_above(s: &[f64], j: usize, i: usize) -> bool {
    s[j] > s[i] || (s[j] == s[i] && j <= i)
}

fn prefix_precision(s: &[f64], t: &[bool], i: usize) -> f64 {
    let above: Vec<usize> = (0..s.len()).filter(|&j| at_or_above(s, j, i)).collect();
    above.iter().filter(|&&j| t[j]).count() as f64 / above.len() as f64
}

pub fn ap(s: &[f64], t: &[bool]) -> Option<f64> {
    let pos: Vec<usize> = (0..s.len()).filter(|&i| t[i]).collect();
    if pos.is_empty() {
        return None;
    }
    Some(pos.iter().map(|&i| prefix_precision(s, t, i)).sum::<f64>() / pos.len() as f64)
}

fn column<T: Copy>(m: &[Vec<T>], c: usize) -> Vec<T> {
    m.iter().map(|r| r[c]).collect()
}

pub fn map(scores: &[Vec<f64>], truths: &[Vec<bool>]) -> Option<f64> {
    let aps: Vec<f64> = (0..scores[0].len())
        .filter_map(|c| ap(&column(scores, c), &column(truths, c)))
        .collect();
    (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64)
}

/// Probability that a random positive outscores a random negative.
pub fn auc(s: &[f64], t: &[bool]) -> Option<f64> {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for i in 0..s.len() {
        for j in 0..s.len() {
            if t[i] && !t[j] {
                pairs += 1.0;
                wins += if s[i] > s[j] {
                    1.0
                } else if s[i] == s[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    (pairs > 0.0).then(|| wins / pairs)
}

/// Φ from its Taylor series, independent of any erf implementation.
pub fn series_cdf(x: f64) -> f64 {
    let mut term = x;
    let mut sum = x;
    let mut n = 0.0;
    while term.abs() > 1e-30 * sum.abs().max(1e-300) && n < 2000.0 {
        n += 1.0;
        term *= x * x / (2.0 * n + 1.0);
        sum += term;
    }
    0.5 + (-x * x / 2.0).exp() / (2.0 * PI).sqrt() * sum
}

/// Φ⁻¹ by bisection on the series.
pub fn bisect_probit(p: f64) -> f64 {
    let (mut lo, mut hi) = (-8.0, 8.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if series_cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn dprime(scores: &[Vec<f64>], truths: &[Vec<bool>]) -> Option<f64> {
    let ds: Vec<f64> = (0..scores[0].len())
        .filter_map(|c| auc(&column(scores, c), &column(truths, c)))
        .map(|a| SQRT_2 * bisect_probit(a.clamp(1e-6, 1.0 - 1e-6)))
        .collect();
    (!ds.is_empty()).then(|| ds.iter().sum::<f64>() / ds.len() as f64)
}

/// Kaggle `apk` on the top-k predicted list, selected by repeated argmax.
pub fn apk(s: &[f64], t: &[bool], k: usize) -> Option<f64> {
    let n_true = t.iter().filter(|&&x| x).count();
    if n_true == 0 {
        return None;
    }
    let mut predicted: Vec<usize> = Vec::new();
    while predicted.len() < k.min(s.len()) {
        let next = (0..s.len())
            .filter(|c| !predicted.contains(c))
            .fold(None, |best: Option<usize>, c| match best {
                Some(b) if s[b] >= s[c] => Some(b),
                _ => Some(c),
            })
            .unwrap();
        predicted.push(next);
    }
    let mut score = 0.0;
    let mut hits = 0.0;
    for (i, &p) in predicted.iter().enumerate() {
        if t[p] {
            hits += 1.0;
            score += hits / (i as f64 + 1.0);
        }
    }
    Some(score / n_true.min(k) as f64)
}

pub fn map_at_k(scores: &[Vec<f64>], truths: &[Vec<bool>], k: usize) -> Option<f64> {
    let v: Vec<f64> = scores.iter().zip(truths).filter_map(|(s, t)| apk(s, t, k)).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// lwlrap as in the challenge reference: per-class mean of the per-sample
/// label-ranking precisions, then a sum weighted by each class's share of
/// positive labels.
pub fn lwlrap(scores: &[Vec<f64>], truths: &[Vec<bool>]) -> Option<f64> {
    let n_classes = scores[0].len();
    let mut per_class_sum = vec![0.0; n_classes];
    let mut per_class_n = vec![0usize; n_classes];
    for (s, t) in scores.iter().zip(truths) {
        for c in 0..n_classes {
            if t[c] {
                per_class_sum[c] += prefix_precision(s, t, c);
                per_class_n[c] += 1;
            }
        }
    }
    let total: usize = per_class_n.iter().sum();
    if total == 0 {
        return None;
    }
    Some(
        (0..n_classes)
            .filter(|&c| per_class_n[c] > 0)
            .map(|c| (per_class_sum[c] / per_class_n[c] as f64) * (per_class_n[c] as f64 / total as f64))
            .sum(),
    )
}

/// A random instance with `N <= 8`, `C <= 6`. Scores sit on a coarse grid
/// half the time so that ties are common.
pub fn random_instance(rng: &mut impl Rng) -> (Vec<Vec<f64>>, Vec<Vec<bool>>) {
    let n = rng.random_range(1..=8);
    let c = rng.random_range(1..=6);
    let coarse = rng.random_bool(0.5);
    let p_pos = rng.random_range(0.1..0.7);
    let scores = (0..n)
        .map(|_| {
            (0..c)
                .map(|_| {
                    if coarse {
                        rng.random_range(0..5) as f64 / 4.0
                    } else {
                        rng.random::<f64>()
                    }
                })
                .collect()
        })
        .collect();
    let truths = (0..n).map(|_| (0..c).map(|_| rng.random_bool(p_pos)).collect()).collect();
    (scores, truths)
}
