use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::FeatureSegment;
use crate::error::{Error, Result};
use crate::rng::{rng_for, stream};

// Keeps probabilities strictly inside (0, 1).
const PROB_EPS: f64 = 1e-15;

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggerShape {
    pub n_in: usize,
    pub hidden: usize,
    pub n_classes: usize,
}

impl TaggerShape {
    pub fn new(n_in: usize, hidden: usize, n_classes: usize) -> Self {
        Self {
            n_in,
            hidden,
            n_classes,
        }
    }

    pub fn n_params(&self) -> usize {
        let (i, h, c) = (self.n_in, self.hidden, self.n_classes);
        i * h + h + h * h + h + h * c + c
    }

    /// Parameters before the head.
    pub fn backbone_len(&self) -> usize {
        let (i, h) = (self.n_in, self.hidden);
        i * h + h + h * h + h
    }

    // Offsets of W1, b1, W2, b2, W3, b3 in the flat vector.
    fn offsets(&self) -> [usize; 6] {
        let (i, h, c) = (self.n_in, self.hidden, self.n_classes);
        let w1 = 0;
        let b1 = w1 + i * h;
        let w2 = b1 + h;
        let b2 = w2 + h * h;
        let w3 = b2 + h;
        let b3 = w3 + h * c;
        [w1, b1, w2, b2, w3, b3]
    }
}

/// Activations kept from a forward pass for [`MicroTagger::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub pooled: Vec<Vec<f64>>,
    pub h1: Vec<Vec<f64>>,
    pub h2: Vec<Vec<f64>>,
    pub logits: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn probs(&self) -> Vec<Vec<f64>> {
        self.logits
            .iter()
            .map(|row| row.iter().map(|&z| sigmoid(z).clamp(PROB_EPS, 1.0 - PROB_EPS)).collect())
            .collect()
    }

    pub fn batch_len(&self) -> usize {
        self.logits.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MicroTagger {
    shape: TaggerShape,
    params: Vec<f64>,
    frozen_backbone: bool,
}

fn dense(w: &[f64], b: &[f64], x: &[f64], relu: bool) -> Vec<f64> {
    let n_in = x.len();
    b.iter()
        .enumerate()
        .map(|(o, &bias)| {
            let row = &w[o * n_in..(o + 1) * n_in];
            let z = bias + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            if relu {
                z.max(0.0)
            } else {
                z
            }
        })
        .collect()
}

impl MicroTagger {
    /// Glorot-uniform weights, zero biases.
    pub fn new(shape: TaggerShape, seed: u64) -> Self {
        let mut rng = rng_for(seed, &[stream::INIT]);
        let mut params = vec![0.0; shape.n_params()];
        let [w1, _, w2, _, w3, _] = shape.offsets();
        let (i, h, c) = (shape.n_in, shape.hidden, shape.n_classes);
        for (start, fan_in, fan_out) in [(w1, i, h), (w2, h, h), (w3, h, c)] {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in &mut params[start..start + fan_in * fan_out] {
                *p = rng.random_range(-a..=a);
            }
        }
        Self {
            shape,
            params,
            frozen_backbone: false,
        }
    }

    pub fn from_params(shape: TaggerShape, params: Vec<f64>) -> Result<Self> {
        if params.len() != shape.n_params() {
            return Err(Error::Shape(format!(
                "{} parameters for a model needing {}",
                params.len(),
                shape.n_params()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(Self {
            shape,
            params,
            frozen_backbone: false,
        })
    }

    pub fn shape(&self) -> TaggerShape {
        self.shape
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn is_backbone_frozen(&self) -> bool {
        self.frozen_backbone
    }

    pub fn set_backbone_frozen(&mut self, frozen: bool) {
        self.frozen_backbone = frozen;
    }

    /// Per-parameter trainability mask, `None` when everything trains.
    pub fn frozen_mask(&self) -> Option<Vec<bool>> {
        self.frozen_backbone.then(|| {
            let b = self.shape.backbone_len();
            (0..self.shape.n_params()).map(|i| i < b).collect()
        })
    }

    /// Zeroes the final layer so every output is exactly 0.5.
    pub fn zero_head(&mut self) {
        let b = self.shape.backbone_len();
        self.params[b..].fill(0.0);
    }

    /// Time-mean of a feature segment: the network input.
    pub fn pool(&self, features: &FeatureSegment) -> Result<Vec<f64>> {
        if features.n_mels() != self.shape.n_in {
            return Err(Error::Shape(format!(
                "feature width {} but model expects {}",
                features.n_mels(),
                self.shape.n_in
            )));
        }
        if features.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature segment".into()));
        }
        Ok(features.time_mean())
    }

    pub fn forward_pooled(&self, pooled: &[Vec<f64>]) -> Result<ForwardCache> {
        let [w1, b1, w2, b2, w3, b3] = self.shape.offsets();
        let p = &self.params;
        let (h, c) = (self.shape.hidden, self.shape.n_classes);
        let mut cache = ForwardCache {
            pooled: Vec::with_capacity(pooled.len()),
            h1: Vec::with_capacity(pooled.len()),
            h2: Vec::with_capacity(pooled.len()),
            logits: Vec::with_capacity(pooled.len()),
        };
        for x in pooled {
            if x.len() != self.shape.n_in {
                return Err(Error::Shape(format!("input width {} but model expects {}", x.len(), self.shape.n_in)));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("model input".into()));
            }
            let a1 = dense(&p[w1..b1], &p[b1..b1 + h], x, true);
            let a2 = dense(&p[w2..b2], &p[b2..b2 + h], &a1, true);
            let z = dense(&p[w3..b3], &p[b3..b3 + c], &a2, false);
            cache.pooled.push(x.clone());
            cache.h1.push(a1);
            cache.h2.push(a2);
            cache.logits.push(z);
        }
        Ok(cache)
    }

    /// Probabilities in (0, 1), one row per segment.
    pub fn forward(&self, batch: &[FeatureSegment]) -> Result<Vec<Vec<f64>>> {
        let pooled = batch.iter().map(|f| self.pool(f)).collect::<Result<Vec<_>>>()?;
        Ok(self.forward_pooled(&pooled)?.probs())
    }

    /// Gradient of the loss with respect to every parameter, given the
    /// loss gradient with respect to the logits.
    pub fn backward(&self, cache: &ForwardCache, dlogits: &[Vec<f64>]) -> Result<Vec<f64>> {
        if dlogits.len() != cache.batch_len() {
            return Err(Error::Shape(format!(
                "{} logit gradients for a batch of {}",
                dlogits.len(),
                cache.batch_len()
            )));
        }
        let [w1, b1, w2, b2, w3, b3] = self.shape.offsets();
        let (n_in, h, c) = (self.shape.n_in, self.shape.hidden, self.shape.n_classes);
        let p = &self.params;
        let mut g = vec![0.0; self.params.len()];
        for (b, dz) in dlogits.iter().enumerate() {
            if dz.len() != c {
                return Err(Error::Shape(format!("logit gradient width {} but model has {c} classes", dz.len())));
            }
            let (x, a1, a2) = (&cache.pooled[b], &cache.h1[b], &cache.h2[b]);
            // Head.
            for o in 0..c {
                g[b3 + o] += dz[o];
                let row = &mut g[w3 + o * h..w3 + (o + 1) * h];
                for (gw, &a) in row.iter_mut().zip(a2) {
                    *gw += dz[o] * a;
                }
            }
            // Into h2, through ReLU.
            let mut d2 = vec![0.0; h];
            for (o, &dzo) in dz.iter().enumerate() {
                let row = &p[w3 + o * h..w3 + (o + 1) * h];
                for (d, &w) in d2.iter_mut().zip(row) {
                    *d += dzo * w;
                }
            }
            for (d, &a) in d2.iter_mut().zip(a2) {
                if a <= 0.0 {
                    *d = 0.0;
                }
            }
            for o in 0..h {
                g[b2 + o] += d2[o];
                let row = &mut g[w2 + o * h..w2 + (o + 1) * h];
                for (gw, &a) in row.iter_mut().zip(a1) {
                    *gw += d2[o] * a;
                }
            }
            // Into h1, through ReLU.
            let mut d1 = vec![0.0; h];
            for (o, &d2o) in d2.iter().enumerate() {
                if d2o == 0.0 {
                    continue;
                }
                let row = &p[w2 + o * h..w2 + (o + 1) * h];
                for (d, &w) in d1.iter_mut().zip(row) {
                    *d += d2o * w;
                }
            }
            for (d, &a) in d1.iter_mut().zip(a1) {
                if a <= 0.0 {
                    *d = 0.0;
                }
            }
            for o in 0..h {
                g[b1 + o] += d1[o];
                let row = &mut g[w1 + o * n_in..w1 + (o + 1) * n_in];
                for (gw, &xi) in row.iter_mut().zip(x) {
                    *gw += d1[o] * xi;
                }
            }
        }
        Ok(g)
    }
}

/// Keeps the backbone, replaces the head with a fresh `hidden -> new_classes`
/// layer and freezes everything else.
pub fn freeze_backbone_reinit_head(model: &MicroTagger, new_classes: usize, seed: u64) -> MicroTagger {
    let shape = TaggerShape::new(model.shape.n_in, model.shape.hidden, new_classes);
    let mut fresh = MicroTagger::new(shape, crate::rng::derive_seed(seed, &[stream::HEAD]));
    let b = shape.backbone_len();
    fresh.params[..b].copy_from_slice(&model.params[..b]);
    fresh.frozen_backbone = true;
    fresh
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::SegmentOrigin;
    use crate::model::{bce_with_logits, adam_step, AdamState};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn batch(seed: u64, b: usize, n_in: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..b).map(|_| (0..n_in).map(|_| rng.random_range(-2.0..2.0)).collect()).collect()
    }

    fn targets(seed: u64, b: usize, c: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xff);
        (0..b).map(|_| (0..c).map(|_| rng.random_range(0.0..=1.0)).collect()).collect()
    }

    fn loss_at(model: &MicroTagger, x: &[Vec<f64>], y: &[Vec<f64>]) -> f64 {
        bce_with_logits(&model.forward_pooled(x).unwrap().logits, y).unwrap().loss
    }

    #[test]
    fn parameter_count_formula() {
        let s = TaggerShape::new(64, 128, 10);
        assert_eq!(s.n_params(), 64 * 128 + 128 + 128 * 128 + 128 + 128 * 10 + 10);
        assert_eq!(MicroTagger::new(s, 0).params().len(), s.n_params());
    }

    #[test]
    fn zero_head_gives_half() {
        let mut m = MicroTagger::new(TaggerShape::new(4, 8, 3), 1);
        m.zero_head();
        let probs = m.forward_pooled(&batch(0, 5, 4)).unwrap().probs();
        assert!(probs.iter().flatten().all(|&p| p == 0.5));
    }

    #[test]
    fn identical_rows_and_permutation_equivariance() {
        let m = MicroTagger::new(TaggerShape::new(4, 8, 3), 2);
        let x = batch(1, 4, 4);
        let same = m.forward_pooled(&[x[0].clone(), x[0].clone()]).unwrap().probs();
        assert_eq!(same[0], same[1]);
        let fwd = m.forward_pooled(&x).unwrap().probs();
        let perm = [2usize, 0, 3, 1];
        let px: Vec<Vec<f64>> = perm.iter().map(|&i| x[i].clone()).collect();
        let pf = m.forward_pooled(&px).unwrap().probs();
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(pf[k], fwd[i]);
        }
    }

    #[test]
    fn outputs_strictly_inside_unit_interval() {
        let m = MicroTagger::new(TaggerShape::new(4, 8, 3), 2);
        let probs = m.forward_pooled(&[vec![1e6; 4], vec![-1e6; 4]]).unwrap().probs();
        assert!(probs.iter().flatten().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn forward_rejects_bad_input() {
        let m = MicroTagger::new(TaggerShape::new(4, 8, 3), 2);
        assert!(matches!(m.forward_pooled(&[vec![0.0, f64::NAN, 0.0, 0.0]]), Err(Error::NonFinite(_))));
        assert!(m.forward_pooled(&[vec![0.0; 5]]).is_err());
        let seg = FeatureSegment::new(vec![0.0; 10], 5, SegmentOrigin::whole("x", 1.0)).unwrap();
        assert!(m.forward(&[seg]).is_err());
    }

    #[test]
    fn zero_upstream_gradient_gives_zero() {
        let m = MicroTagger::new(TaggerShape::new(4, 8, 3), 3);
        let cache = m.forward_pooled(&batch(2, 3, 4)).unwrap();
        let g = m.backward(&cache, &vec![vec![0.0; 3]; 3]).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn duplicated_element_matches_single() {
        let m = MicroTagger::new(TaggerShape::new(4, 8, 3), 4);
        let x = batch(3, 1, 4);
        let y = targets(3, 1, 3);
        let single = {
            let c = m.forward_pooled(&x).unwrap();
            let l = bce_with_logits(&c.logits, &y).unwrap();
            m.backward(&c, &l.grad_logits).unwrap()
        };
        let xx = vec![x[0].clone(), x[0].clone()];
        let yy = vec![y[0].clone(), y[0].clone()];
        let double = {
            let c = m.forward_pooled(&xx).unwrap();
            let l = bce_with_logits(&c.logits, &yy).unwrap();
            m.backward(&c, &l.grad_logits).unwrap()
        };
        for (a, b) in single.iter().zip(&double) {
            assert!((a - b).abs() <= 1e-15 * a.abs().max(1.0));
        }
    }

    #[test]
    fn layerwise_gradients_match_central_differences() {
        for seed in 0..10u64 {
            let shape = TaggerShape::new(6, 7, 4);
            let m = MicroTagger::new(shape, seed);
            let (x, y) = (batch(seed, 5, 6), targets(seed, 5, 4));
            let cache = m.forward_pooled(&x).unwrap();
            let grad = m.backward(&cache, &bce_with_logits(&cache.logits, &y).unwrap().grad_logits).unwrap();
            let h = 1e-5;
            let mut worst: f64 = 0.0;
            for i in 0..shape.n_params() {
                let (mut plus, mut minus) = (m.clone(), m.clone());
                plus.params_mut()[i] += h;
                minus.params_mut()[i] -= h;
                let fd = (loss_at(&plus, &x, &y) - loss_at(&minus, &x, &y)) / (2.0 * h);
                let denom = fd.abs().max(grad[i].abs()).max(1e-6);
                worst = worst.max((fd - grad[i]).abs() / denom);
            }
            assert!(worst < 1e-4, "seed {seed}: max relative error {worst}");
        }
    }

    #[test]
    fn transfer_reinit_keeps_backbone_and_freezes_it() {
        let m = MicroTagger::new(TaggerShape::new(4, 8, 3), 5);
        let t = freeze_backbone_reinit_head(&m, 3, 9);
        let b = m.shape().backbone_len();
        assert_eq!(t.shape(), m.shape());
        assert_eq!(&t.params()[..b], &m.params()[..b]);
        assert_ne!(&t.params()[b..], &m.params()[b..]);
        assert!(t.is_backbone_frozen());

        let mut t = freeze_backbone_reinit_head(&m, 5, 9);
        assert_eq!(t.shape().n_classes, 5);
        let before = t.params()[..b].to_vec();
        let mut state = AdamState::new(t.params().len(), 1e-2);
        let (x, y) = (batch(7, 4, 4), targets(7, 4, 5));
        for _ in 0..25 {
            let c = t.forward_pooled(&x).unwrap();
            let g = t.backward(&c, &bce_with_logits(&c.logits, &y).unwrap().grad_logits).unwrap();
            let mask = t.frozen_mask();
            adam_step(t.params_mut(), &g, &mut state, 1e-2, mask.as_deref()).unwrap();
        }
        assert_eq!(&t.params()[..b], before.as_slice());
    }

    #[test]
    fn head_gradient_matches_finite_differences_with_frozen_backbone() {
        let m = MicroTagger::new(TaggerShape::new(5, 6, 3), 8);
        let t = freeze_backbone_reinit_head(&m, 4, 1);
        let (x, y) = (batch(8, 6, 5), targets(8, 6, 4));
        let c = t.forward_pooled(&x).unwrap();
        let g = t.backward(&c, &bce_with_logits(&c.logits, &y).unwrap().grad_logits).unwrap();
        let b = t.shape().backbone_len();
        for i in b..t.shape().n_params() {
            let (mut plus, mut minus) = (t.clone(), t.clone());
            plus.params_mut()[i] += 1e-5;
            minus.params_mut()[i] -= 1e-5;
            let fd = (loss_at(&plus, &x, &y) - loss_at(&minus, &x, &y)) / 2e-5;
            assert!((fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-6) < 1e-4);
        }
    }
}
