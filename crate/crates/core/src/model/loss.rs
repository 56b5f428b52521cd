//! Binary cross-entropy, averaged over every (segment, class) cell.

use super::tagger::sigmoid;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BceOutput {
    pub loss: f64,
    /// dL/dlogits, already divided by `B * C`.
    pub grad_logits: Vec<Vec<f64>>,
}

fn check_shapes(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<usize> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape(format!("batch sizes {} vs {}", a.len(), b.len())));
    }
    let c = a[0].len();
    if a.iter().chain(b).any(|r| r.len() != c) || c == 0 {
        return Err(Error::Shape("ragged or empty label rows".into()));
    }
    Ok(a.len() * c)
}

/// `-mean[y ln p + (1-y) ln(1-p)]` from probabilities `p` in (0, 1).
pub fn bce_loss(probs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<BceOutput> {
    let n = check_shapes(probs, targets)? as f64;
    let mut loss = 0.0;
    let grad_logits = probs
        .iter()
        .zip(targets)
        .map(|(pr, yr)| {
            pr.iter()
                .zip(yr)
                .map(|(&p, &y)| {
                    loss -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
                    (p - y) / n
                })
                .collect()
        })
        .collect();
    Ok(BceOutput {
        loss: loss / n,
        grad_logits,
    })
}

/// Numerically stable BCE on logits:
/// `max(z,0) - z y + ln(1 + e^{-|z|})`, gradient `(sigmoid(z) - y) / (B C)`.
pub fn bce_with_logits(logits: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<BceOutput> {
    let n = check_shapes(logits, targets)? as f64;
    let mut loss = 0.0;
    let grad_logits = logits
        .iter()
        .zip(targets)
        .map(|(zr, yr)| {
            zr.iter()
                .zip(yr)
                .map(|(&z, &y)| {
                    loss += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
                    (sigmoid(z) - y) / n
                })
                .collect()
        })
        .collect();
    if !loss.is_finite() {
        return Err(Error::NonFinite("BCE loss".into()));
    }
    Ok(BceOutput {
        loss: loss / n,
        grad_logits,
    })
}

/// `alpha * BCE(z, soft) + (1 - alpha) * BCE(z, weak)`.
///
/// At `alpha == 1` (or `0`) only the soft (or weak) term is evaluated, so the
/// endpoints are bitwise identical to the plain loss and the absent target
/// set may be `None`.
pub fn distill_loss(
    logits: &[Vec<f64>],
    soft: Option<&[Vec<f64>]>,
    weak: Option<&[Vec<f64>]>,
    alpha: f64,
) -> Result<BceOutput> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::config("alpha", "must be in [0,1]"));
    }
    fn need<'a>(t: Option<&'a [Vec<f64>]>, what: &str, alpha: f64) -> Result<&'a [Vec<f64>]> {
        t.ok_or_else(|| Error::InvalidInput(format!("alpha = {alpha} requires {what} targets")))
    }
    if alpha == 1.0 {
        return bce_with_logits(logits, need(soft, "soft", alpha)?);
    }
    if alpha == 0.0 {
        return bce_with_logits(logits, need(weak, "weak", alpha)?);
    }
    let s = bce_with_logits(logits, need(soft, "soft", alpha)?)?;
    let w = bce_with_logits(logits, need(weak, "weak", alpha)?)?;
    let grad_logits = s
        .grad_logits
        .iter()
        .zip(&w.grad_logits)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| alpha * x + (1.0 - alpha) * y).collect())
        .collect();
    Ok(BceOutput {
        loss: alpha * s.loss + (1.0 - alpha) * w.loss,
        grad_logits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn half_probability_positive_is_ln2() {
        let out = bce_loss(&[vec![0.5]], &[vec![1.0]]).unwrap();
        assert!((out.loss - std::f64::consts::LN_2).abs() < 1e-12);
        let out = bce_with_logits(&[vec![0.0]], &[vec![1.0]]).unwrap();
        assert!((out.loss - 0.693147).abs() < 1e-6);
    }

    #[test]
    fn matching_soft_targets_are_stationary() {
        let p = vec![vec![0.2, 0.7, 0.5], vec![0.9, 0.01, 0.33]];
        let out = bce_loss(&p, &p).unwrap();
        assert!(out.grad_logits.iter().flatten().all(|&g| g == 0.0));
        let z = vec![vec![-1.3, 0.4], vec![2.0, 0.0]];
        let y: Vec<Vec<f64>> = z.iter().map(|r| r.iter().map(|&v| sigmoid(v)).collect()).collect();
        let out = bce_with_logits(&z, &y).unwrap();
        assert!(out.grad_logits.iter().flatten().all(|&g| g == 0.0));
    }

    #[test]
    fn logit_gradient_matches_central_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let z: Vec<Vec<f64>> = (0..3).map(|_| (0..4).map(|_| rng.random_range(-4.0..4.0)).collect()).collect();
            let y: Vec<Vec<f64>> = (0..3).map(|_| (0..4).map(|_| rng.random_range(0.0..=1.0)).collect()).collect();
            let g = bce_with_logits(&z, &y).unwrap().grad_logits;
            for b in 0..3 {
                for c in 0..4 {
                    let (mut zp, mut zm) = (z.clone(), z.clone());
                    zp[b][c] += 1e-5;
                    zm[b][c] -= 1e-5;
                    let fd = (bce_with_logits(&zp, &y).unwrap().loss - bce_with_logits(&zm, &y).unwrap().loss) / 2e-5;
                    let rel = (fd - g[b][c]).abs() / fd.abs().max(g[b][c].abs()).max(1e-6);
                    assert!(rel < 1e-4, "rel {rel}");
                }
            }
        }
    }

    #[test]
    fn probability_and_logit_forms_agree() {
        let z = vec![vec![-2.0, 0.3, 1.7]];
        let p: Vec<Vec<f64>> = z.iter().map(|r| r.iter().map(|&v| sigmoid(v)).collect()).collect();
        let y = vec![vec![1.0, 0.0, 0.4]];
        let a = bce_loss(&p, &y).unwrap();
        let b = bce_with_logits(&z, &y).unwrap();
        assert!((a.loss - b.loss).abs() < 1e-12);
    }

    #[test]
    fn distill_endpoints_are_bitwise_plain_losses() {
        let z = vec![vec![-0.5, 1.5, 0.1], vec![2.5, -3.0, 0.0]];
        let soft = vec![vec![0.1, 0.8, 0.5], vec![0.9, 0.05, 0.2]];
        let weak = vec![vec![0.0, 1.0, 1.0], vec![1.0, 0.0, 0.0]];
        let a1 = distill_loss(&z, Some(&soft), Some(&weak), 1.0).unwrap();
        assert_eq!(a1, bce_with_logits(&z, &soft).unwrap());
        let a0 = distill_loss(&z, Some(&soft), Some(&weak), 0.0).unwrap();
        assert_eq!(a0, bce_with_logits(&z, &weak).unwrap());
        assert!(distill_loss(&z, Some(&soft), None, 0.5).is_err());
        assert!(distill_loss(&z, None, Some(&weak), 1.0).is_err());
        assert!(distill_loss(&z, Some(&soft), Some(&weak), 1.5).is_err());
    }

    #[test]
    fn coincident_targets_reduce_to_plain_bce() {
        let z = vec![vec![-0.5, 1.5], vec![0.25, -1.0]];
        let t = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        let mixed = distill_loss(&z, Some(&t), Some(&t), 0.5).unwrap();
        let plain = bce_with_logits(&z, &t).unwrap();
        assert!((mixed.loss - plain.loss).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        assert!(bce_loss(&[vec![0.5, 0.5]], &[vec![1.0]]).is_err());
        assert!(bce_with_logits(&[vec![0.5]], &[vec![1.0], vec![0.0]]).is_err());
    }
}
