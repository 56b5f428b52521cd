use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::datagen::LabelSet;
use crate::error::{Error, Result};
use crate::rng::{rng_for, stream};

/// Class-uniform, then clip-uniform draws over clip indices. Infinite.
#[derive(Debug, Clone)]
pub struct PseudoBalancedSampler {
    by_class: Vec<Vec<usize>>,
    rng: ChaCha8Rng,
}

impl PseudoBalancedSampler {
    /// `labels[i]` is the label set of clip `i`. Classes without positives
    /// are dropped with a warning.
    pub fn new(labels: &[LabelSet], n_classes: usize, seed: u64) -> Result<Self> {
        let mut by_class = vec![Vec::new(); n_classes];
        for (i, l) in labels.iter().enumerate() {
            for &c in l.ids() {
                by_class
                    .get_mut(c)
                    .ok_or_else(|| Error::InvalidInput(format!("label {c} out of range")))?
                    .push(i);
            }
        }
        let empty: Vec<usize> = (0..n_classes).filter(|&c| by_class[c].is_empty()).collect();
        if !empty.is_empty() && empty.len() < n_classes {
            log::warn!("pseudo-balanced sampler: classes {empty:?} have no positive clips and are excluded");
        }
        by_class.retain(|v| !v.is_empty());
        if by_class.is_empty() {
            return Err(Error::InvalidInput("no labeled clips to sample from".into()));
        }
        Ok(Self {
            by_class,
            rng: rng_for(seed, &[stream::SAMPLER]),
        })
    }

    pub fn n_active_classes(&self) -> usize {
        self.by_class.len()
    }
}

impl Iterator for PseudoBalancedSampler {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        let class = &self.by_class[self.rng.random_range(0..self.by_class.len())];
        Some(class[self.rng.random_range(0..class.len())])
    }
}

/// Fresh uniform permutation of `0..n` every epoch. Infinite.
#[derive(Debug, Clone)]
pub struct RandomSampler {
    order: Vec<usize>,
    pos: usize,
    epoch: usize,
    rng: ChaCha8Rng,
}

impl RandomSampler {
    pub fn new(n: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput("cannot sample from an empty segment list".into()));
        }
        let mut rng = rng_for(seed, &[stream::SAMPLER]);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        Ok(Self {
            order,
            pos: 0,
            epoch: 0,
            rng,
        })
    }

    /// Completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn epoch_len(&self) -> usize {
        self.order.len()
    }
}

impl Iterator for RandomSampler {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        if self.pos == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
            self.epoch += 1;
        }
        self.pos += 1;
        Some(self.order[self.pos - 1])
    }
}
