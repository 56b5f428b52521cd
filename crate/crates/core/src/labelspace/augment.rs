//! Annotator-side augmentations. Students train without any of these.

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::dsp::{FeatureSegment, Waveform};
use crate::error::{Error, Result};

/// Raw-waveform gain, polarity inversion and circular time shift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaveAugSpec {
    /// Gain drawn uniformly from `[-gain_db_range, gain_db_range]` dB.
    pub gain_db_range: f64,
    pub polarity_invert_p: f64,
    pub time_shift_max_s: f64,
}

impl Default for WaveAugSpec {
    fn default() -> Self {
        Self {
            gain_db_range: 0.0,
            polarity_invert_p: 0.0,
            time_shift_max_s: 0.0,
        }
    }
}

impl WaveAugSpec {
    pub fn is_identity(&self) -> bool {
        self.gain_db_range == 0.0 && self.polarity_invert_p == 0.0 && self.time_shift_max_s == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gain_db_range >= 0.0) {
            return Err(Error::config("wave_aug.gain_db_range", "must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.polarity_invert_p) {
            return Err(Error::config("wave_aug.polarity_invert_p", "must be in [0,1]"));
        }
        if !(self.time_shift_max_s >= 0.0) {
            return Err(Error::config("wave_aug.time_shift_max_s", "must be non-negative"));
        }
        Ok(())
    }
}

/// Rotates samples right by `k` (left for negative `k`).
pub fn time_shift(wave: &Waveform, k: isize) -> Waveform {
    let mut s = wave.samples().to_vec();
    if !s.is_empty() {
        let k = k.rem_euclid(s.len() as isize) as usize;
        s.rotate_right(k);
    }
    Waveform::new(s, wave.sample_rate_hz()).expect("rotation preserves finiteness")
}

/// One realization of a [`WaveAugSpec`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveAugDraw {
    /// Signed amplitude factor; negative means polarity inversion.
    pub scale: f64,
    /// Circular shift in samples.
    pub shift: isize,
}

impl WaveAugSpec {
    /// Draws gain, polarity and shift in that order, skipping disabled ones.
    pub fn draw<R: Rng + ?Sized>(&self, sample_rate_hz: u32, rng: &mut R) -> WaveAugDraw {
        let mut scale = 1.0f64;
        if self.gain_db_range > 0.0 {
            let db = rng.random_range(-self.gain_db_range..=self.gain_db_range);
            scale *= 10f64.powf(db / 20.0);
        }
        if self.polarity_invert_p > 0.0 && rng.random_bool(self.polarity_invert_p) {
            scale = -scale;
        }
        let max_shift = (self.time_shift_max_s * sample_rate_hz as f64).round() as i64;
        let shift = if max_shift > 0 {
            rng.random_range(-max_shift..=max_shift) as isize
        } else {
            0
        };
        WaveAugDraw { scale, shift }
    }
}

pub fn apply_wave_aug(wave: &Waveform, draw: WaveAugDraw) -> Result<Waveform> {
    let scaled = if draw.scale == 1.0 {
        wave.clone()
    } else {
        Waveform::new(
            wave.samples().iter().map(|&s| (s as f64 * draw.scale) as f32).collect(),
            wave.sample_rate_hz(),
        )?
    };
    Ok(if draw.shift != 0 {
        time_shift(&scaled, draw.shift)
    } else {
        scaled
    })
}

pub fn augment_wave<R: Rng + ?Sized>(wave: &Waveform, spec: &WaveAugSpec, rng: &mut R) -> Result<Waveform> {
    spec.validate()?;
    if spec.is_identity() {
        return Ok(wave.clone());
    }
    apply_wave_aug(wave, spec.draw(wave.sample_rate_hz(), rng))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpecAugSpec {
    pub n_time_masks: usize,
    pub max_time_w: usize,
    pub n_freq_masks: usize,
    pub max_freq_w: usize,
}

impl Default for SpecAugSpec {
    fn default() -> Self {
        Self {
            n_time_masks: 0,
            max_time_w: 0,
            n_freq_masks: 0,
            max_freq_w: 0,
        }
    }
}

impl SpecAugSpec {
    pub fn is_identity(&self) -> bool {
        (self.n_time_masks == 0 || self.max_time_w == 0) && (self.n_freq_masks == 0 || self.max_freq_w == 0)
    }
}

/// Sets the given `(start, width)` time and frequency bands to the mean of
/// the unmasked input matrix.
pub fn apply_masks(
    features: &FeatureSegment,
    time_masks: &[(usize, usize)],
    freq_masks: &[(usize, usize)],
) -> Result<FeatureSegment> {
    let (t_len, f_len) = (features.n_frames(), features.n_mels());
    for &(s, w) in time_masks {
        if s + w > t_len {
            return Err(Error::Shape(format!("time mask {s}+{w} exceeds {t_len} frames")));
        }
    }
    for &(s, w) in freq_masks {
        if s + w > f_len {
            return Err(Error::Shape(format!("frequency mask {s}+{w} exceeds {f_len} bins")));
        }
    }
    let fill = features.mean() as f32;
    let mut out = features.clone();
    let values = out.values_mut();
    for &(s, w) in time_masks {
        values[s * f_len..(s + w) * f_len].fill(fill);
    }
    for &(s, w) in freq_masks {
        for t in 0..t_len {
            values[t * f_len + s..t * f_len + s + w].fill(fill);
        }
    }
    Ok(out)
}

/// Random time and frequency masking; widths are uniform in `[0, max_w]`.
pub fn spec_augment<R: Rng + ?Sized>(features: &FeatureSegment, spec: &SpecAugSpec, rng: &mut R) -> Result<FeatureSegment> {
    if spec.max_time_w > features.n_frames() || spec.max_freq_w > features.n_mels() {
        return Err(Error::Shape(format!(
            "mask widths ({}, {}) exceed feature shape ({}, {})",
            spec.max_time_w,
            spec.max_freq_w,
            features.n_frames(),
            features.n_mels()
        )));
    }
    let mut draw = |n: usize, max_w: usize, dim: usize| -> Vec<(usize, usize)> {
        (0..n)
            .map(|_| {
                let w = rng.random_range(0..=max_w);
                (rng.random_range(0..=dim - w), w)
            })
            .collect()
    };
    let time = draw(spec.n_time_masks, spec.max_time_w, features.n_frames());
    let freq = draw(spec.n_freq_masks, spec.max_freq_w, features.n_mels());
    apply_masks(features, &time, &freq)
}

/// `lambda * a + (1 - lambda) * b` for features and labels alike.
pub fn mixup_with_lambda(
    a: (&FeatureSegment, &[f64]),
    b: (&FeatureSegment, &[f64]),
    lambda: f64,
) -> Result<(FeatureSegment, Vec<f64>)> {
    if a.0.n_frames() != b.0.n_frames() || a.0.n_mels() != b.0.n_mels() {
        return Err(Error::Shape(format!(
            "mixup features {}x{} vs {}x{}",
            a.0.n_frames(),
            a.0.n_mels(),
            b.0.n_frames(),
            b.0.n_mels()
        )));
    }
    if a.1.len() != b.1.len() {
        return Err(Error::Shape(format!("mixup labels {} vs {}", a.1.len(), b.1.len())));
    }
    let mu = 1.0 - lambda;
    let values = a
        .0
        .values()
        .iter()
        .zip(b.0.values())
        .map(|(&x, &y)| (lambda * x as f64 + mu * y as f64) as f32)
        .collect();
    let label = a.1.iter().zip(b.1).map(|(&x, &y)| (lambda * x + mu * y).clamp(0.0, 1.0)).collect();
    Ok((FeatureSegment::new(values, a.0.n_mels(), a.0.origin.clone())?, label))
}

/// Mixup with `lambda ~ Beta(beta_alpha, beta_alpha)`; returns the drawn lambda too.
pub fn mixup<R: Rng + ?Sized>(
    a: (&FeatureSegment, &[f64]),
    b: (&FeatureSegment, &[f64]),
    beta_alpha: f64,
    rng: &mut R,
) -> Result<(FeatureSegment, Vec<f64>, f64)> {
    let beta = Beta::new(beta_alpha, beta_alpha)
        .map_err(|e| Error::config("mixup.beta_alpha", e.to_string()))?;
    let lambda = beta.sample(rng);
    let (f, l) = mixup_with_lambda(a, b, lambda)?;
    Ok((f, l, lambda))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::SegmentOrigin;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn wave() -> Waveform {
        Waveform::new((0..500).map(|i| ((i * 7919) % 200) as f32 / 200.0 - 0.5).collect(), 1000).unwrap()
    }

    fn feats(t: usize, f: usize) -> FeatureSegment {
        FeatureSegment::new(
            (0..t * f).map(|i| (i % 13) as f32 - 4.0).collect(),
            f,
            SegmentOrigin::whole("x", 1.0),
        )
        .unwrap()
    }

    #[test]
    fn disabled_wave_aug_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(augment_wave(&wave(), &WaveAugSpec::default(), &mut rng).unwrap(), wave());
    }

    #[test]
    fn polarity_only_negates() {
        let spec = WaveAugSpec {
            polarity_invert_p: 1.0,
            ..WaveAugSpec::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = augment_wave(&wave(), &spec, &mut rng).unwrap();
        assert!(out.samples().iter().zip(wave().samples()).all(|(a, b)| *a == -*b));
        assert_eq!(out.energy(), wave().energy());
    }

    #[test]
    fn gain_and_shift_preserve_length() {
        let spec = WaveAugSpec {
            gain_db_range: 6.0,
            polarity_invert_p: 0.5,
            time_shift_max_s: 0.1,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            assert_eq!(augment_wave(&wave(), &spec, &mut rng).unwrap().len(), 500);
        }
    }

    #[test]
    fn zero_masks_is_identity() {
        let f = feats(10, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(spec_augment(&f, &SpecAugSpec::default(), &mut rng).unwrap(), f);
    }

    #[test]
    fn full_time_mask_flattens_to_mean() {
        let f = feats(10, 4);
        let mean = f.mean() as f32;
        let out = apply_masks(&f, &[(0, 10)], &[]).unwrap();
        assert!(out.values().iter().all(|&v| v == mean));
    }

    #[test]
    fn masks_leave_other_cells_alone() {
        let f = feats(10, 4);
        let out = apply_masks(&f, &[(2, 3)], &[(1, 1)]).unwrap();
        for t in 0..10 {
            for m in 0..4 {
                let masked = (2..5).contains(&t) || m == 1;
                if !masked {
                    assert_eq!(out.get(t, m), f.get(t, m));
                }
            }
        }
        assert!(apply_masks(&f, &[(8, 3)], &[]).is_err());
    }

    #[test]
    fn masked_cells_bounded_by_mask_budget() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        // Distinct values so unchanged cells can be told apart from the fill.
        let f = FeatureSegment::new((0..50 * 8).map(|i| i as f32 + 0.5).collect(), 8, SegmentOrigin::whole("x", 1.0)).unwrap();
        let spec = SpecAugSpec {
            n_time_masks: 2,
            max_time_w: 5,
            n_freq_masks: 2,
            max_freq_w: 3,
        };
        for _ in 0..200 {
            let out = spec_augment(&f, &spec, &mut rng).unwrap();
            let changed = out.values().iter().zip(f.values()).filter(|(a, b)| a != b).count();
            assert!(changed <= 2 * 5 * 8 + 2 * 3 * 50);
        }
    }

    #[test]
    fn lambda_one_returns_first_sample() {
        let (a, b) = (feats(5, 3), FeatureSegment::new(vec![9.0; 15], 3, SegmentOrigin::whole("y", 1.0)).unwrap());
        let (f, l) = mixup_with_lambda((&a, &[1.0, 0.0]), (&b, &[0.0, 1.0]), 1.0).unwrap();
        assert_eq!(f.values(), a.values());
        assert_eq!(l, vec![1.0, 0.0]);
    }

    #[test]
    fn midpoint_labels() {
        let a = feats(5, 3);
        let (_, l) = mixup_with_lambda((&a, &[1.0, 0.0, 0.0]), (&a, &[0.0, 1.0, 0.0]), 0.5).unwrap();
        assert_eq!(l, vec![0.5, 0.5, 0.0]);
    }

    #[test]
    fn mixup_rejects_shape_mismatch() {
        let (a, b) = (feats(5, 3), feats(6, 3));
        assert!(mixup_with_lambda((&a, &[1.0]), (&b, &[0.0]), 0.5).is_err());
        assert!(mixup_with_lambda((&a, &[1.0]), (&a, &[0.0, 1.0]), 0.5).is_err());
    }

    proptest! {
        #[test]
        fn shift_then_unshift_restores(k in -1000isize..1000) {
            prop_assert_eq!(time_shift(&time_shift(&wave(), k), -k), wave());
        }

        #[test]
        fn mixed_labels_stay_in_unit_box(lambda in 0.0f64..=1.0, a in prop::collection::vec(0.0f64..=1.0, 6), b in prop::collection::vec(0.0f64..=1.0, 6)) {
            let f = feats(2, 2);
            let (_, l) = mixup_with_lambda((&f, &a), (&f, &b), lambda).unwrap();
            prop_assert!(l.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }

        #[test]
        fn augmentation_replays_bitwise(seed in 0u64..500) {
            let spec = WaveAugSpec { gain_db_range: 6.0, polarity_invert_p: 0.5, time_shift_max_s: 0.2 };
            let a = augment_wave(&wave(), &spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let b = augment_wave(&wave(), &spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
