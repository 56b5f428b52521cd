//! Binary checkpoints and top-K weight averaging.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic "PSLCKPT\0" | version u32 | n_in u32 | hidden u32 | n_classes u32
//! | hash_len u32 | config_hash utf-8 | epoch u64 | step u64 | validation_map f64
//! | rng_seed u64 | rng_position u64 | n_params u64 | params f64 * n_params
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{MicroTagger, TaggerShape};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PSLCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Enough to resume the sampler stream: the run seed and draws consumed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RngState {
    pub seed: u64,
    pub position: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub shape: TaggerShape,
    pub params: Vec<f64>,
    pub epoch: u64,
    pub step: u64,
    pub validation_map: f64,
    pub rng_state: RngState,
    pub config_hash: String,
}

impl ModelCheckpoint {
    pub fn from_model(model: &MicroTagger, epoch: u64, step: u64, validation_map: f64, rng_state: RngState, config_hash: &str) -> Self {
        Self {
            shape: model.shape(),
            params: model.params().to_vec(),
            epoch,
            step,
            validation_map,
            rng_state,
            config_hash: config_hash.to_owned(),
        }
    }

    pub fn model(&self) -> Result<MicroTagger> {
        MicroTagger::from_params(self.shape, self.params.clone())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(80 + self.config_hash.len() + 8 * self.params.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        for d in [self.shape.n_in, self.shape.hidden, self.shape.n_classes] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.config_hash.len() as u32).to_le_bytes());
        out.extend_from_slice(self.config_hash.as_bytes());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.validation_map.to_le_bytes());
        out.extend_from_slice(&self.rng_state.seed.to_le_bytes());
        out.extend_from_slice(&self.rng_state.position.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(r.bad("bad magic"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(r.bad(&format!("unsupported version {version}")));
        }
        let shape = TaggerShape::new(r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
        let hash_len = r.u32()? as usize;
        let config_hash = String::from_utf8(r.take(hash_len)?.to_vec()).map_err(|_| r.bad("config hash is not utf-8"))?;
        let epoch = r.u64()?;
        let step = r.u64()?;
        let validation_map = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
        let rng_state = RngState {
            seed: r.u64()?,
            position: r.u64()?,
        };
        let n = r.u64()? as usize;
        if n != shape.n_params() {
            return Err(r.bad(&format!("{n} parameters stored for a shape needing {}", shape.n_params())));
        }
        let params = r
            .take(n.checked_mul(8).ok_or_else(|| r.bad("parameter count overflow"))?)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if r.pos != bytes.len() {
            return Err(r.bad("trailing bytes"));
        }
        Ok(Self {
            shape,
            params,
            epoch,
            step,
            validation_map,
            rng_state,
            config_hash,
        })
    }

    /// Atomic write through a temporary sibling file.
    pub fn write(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("ckpt.tmp");
        fs::File::create(&tmp)
            .and_then(|mut f| f.write_all(&self.to_bytes()).and_then(|_| f.sync_all()))
            .map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn bad(&self, reason: &str) -> Error {
        Error::format("checkpoint", self.path, reason)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| self.bad("truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn rank_order(a: &ModelCheckpoint, b: &ModelCheckpoint) -> std::cmp::Ordering {
    b.validation_map
        .total_cmp(&a.validation_map)
        .then(b.step.cmp(&a.step))
}

/// Elementwise mean of the `k` checkpoints with the highest validation mAP
/// (later step wins ties).
pub fn average_checkpoints(checkpoints: &[ModelCheckpoint], k: usize) -> Result<Vec<f64>> {
    let first = checkpoints
        .first()
        .ok_or_else(|| Error::InvalidInput("no checkpoints to average".into()))?;
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    for c in checkpoints {
        if c.config_hash != first.config_hash {
            return Err(Error::HashMismatch {
                expected: first.config_hash.clone(),
                found: c.config_hash.clone(),
            });
        }
        if c.shape != first.shape || c.params.len() != first.params.len() {
            return Err(Error::Shape("checkpoints have different parameter shapes".into()));
        }
    }
    let mut ranked: Vec<&ModelCheckpoint> = checkpoints.iter().collect();
    ranked.sort_by(|a, b| rank_order(a, b));
    ranked.truncate(k);
    let inv = 1.0 / ranked.len() as f64;
    let mut mean = vec![0.0; first.params.len()];
    for c in &ranked {
        for (m, p) in mean.iter_mut().zip(&c.params) {
            *m += p;
        }
    }
    mean.iter_mut().for_each(|m| *m *= inv);
    Ok(mean)
}

/// Bounded pool of the best checkpoints seen so far.
#[derive(Debug, Clone)]
pub struct TopK {
    k: usize,
    kept: Vec<ModelCheckpoint>,
}

impl TopK {
    pub fn new(k: usize) -> Self {
        Self {
            k: k.max(1),
            kept: Vec::new(),
        }
    }

    pub fn offer(&mut self, ckpt: ModelCheckpoint) {
        self.kept.push(ckpt);
        self.kept.sort_by(rank_order);
        self.kept.truncate(self.k);
    }

    pub fn best_map(&self) -> Option<f64> {
        self.kept.first().map(|c| c.validation_map)
    }

    pub fn checkpoints(&self) -> &[ModelCheckpoint] {
        &self.kept
    }

    pub fn average(&self) -> Result<Vec<f64>> {
        average_checkpoints(&self.kept, self.k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ckpt(params: Vec<f64>, map: f64, step: u64) -> ModelCheckpoint {
        ModelCheckpoint {
            shape: TaggerShape::new(1, 1, 1),
            params,
            epoch: 0,
            step,
            validation_map: map,
            rng_state: RngState::default(),
            config_hash: "h".into(),
        }
    }

    fn p(v: f64) -> Vec<f64> {
        vec![v; TaggerShape::new(1, 1, 1).n_params()]
    }

    #[test]
    fn k_one_returns_best() {
        let cs = vec![ckpt(p(1.0), 0.5, 1), ckpt(p(2.0), 0.9, 2), ckpt(p(3.0), 0.7, 3)];
        assert_eq!(average_checkpoints(&cs, 1).unwrap(), p(2.0));
    }

    #[test]
    fn ties_prefer_later_step() {
        let cs = vec![ckpt(p(1.0), 0.9, 1), ckpt(p(2.0), 0.9, 5)];
        assert_eq!(average_checkpoints(&cs, 1).unwrap(), p(2.0));
    }

    #[test]
    fn midpoint_and_idempotence() {
        assert_eq!(average_checkpoints(&[ckpt(p(0.0), 0.1, 1), ckpt(p(2.0), 0.2, 2)], 2).unwrap(), p(1.0));
        let same: Vec<_> = (0..4).map(|i| ckpt(p(0.375), 0.5, i)).collect();
        assert_eq!(average_checkpoints(&same, 4).unwrap(), p(0.375));
    }

    #[test]
    fn mixed_hashes_rejected() {
        let mut b = ckpt(p(1.0), 0.5, 2);
        b.config_hash = "other".into();
        assert!(matches!(
            average_checkpoints(&[ckpt(p(0.0), 0.5, 1), b], 2),
            Err(Error::HashMismatch { .. })
        ));
        assert!(average_checkpoints(&[], 1).is_err());
    }

    #[test]
    fn top_k_keeps_best() {
        let mut t = TopK::new(2);
        for (i, m) in [0.1, 0.6, 0.3, 0.8].into_iter().enumerate() {
            t.offer(ckpt(p(i as f64), m, i as u64));
        }
        let maps: Vec<f64> = t.checkpoints().iter().map(|c| c.validation_map).collect();
        assert_eq!(maps, vec![0.8, 0.6]);
        assert_eq!(t.average().unwrap(), p(2.0));
    }

    #[test]
    fn truncated_or_corrupt_bytes_rejected() {
        let bytes = ckpt(p(1.0), 0.5, 3).to_bytes();
        let path = Path::new("x.ckpt");
        assert!(ModelCheckpoint::from_bytes(&bytes[..bytes.len() - 1], path).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(ModelCheckpoint::from_bytes(&bad, path).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(ModelCheckpoint::from_bytes(&long, path).is_err());
    }

    proptest! {
        #[test]
        fn bytes_round_trip_exactly(vals in prop::collection::vec(any::<f64>(), 6), map in 0.0f64..=1.0, step in any::<u64>(), seed in any::<u64>()) {
            let mut c = ckpt(vals, map, step);
            c.rng_state = RngState { seed, position: step / 3 };
            c.config_hash = "abc123".into();
            let back = ModelCheckpoint::from_bytes(&c.to_bytes(), Path::new("x")).unwrap();
            prop_assert_eq!(back.to_bytes(), c.to_bytes());
        }

        #[test]
        fn averaging_commutes_with_permutation(a in prop::collection::vec(-5.0f64..5.0, 4), b in prop::collection::vec(-5.0f64..5.0, 4), perm_seed in 0u64..24) {
            let mut perm: Vec<usize> = (0..4).collect();
            let mut s = perm_seed;
            for i in (1..4).rev() {
                perm.swap(i, (s % (i as u64 + 1)) as usize);
                s /= i as u64 + 1;
            }
            let apply = |v: &Vec<f64>| perm.iter().map(|&i| v[i]).collect::<Vec<f64>>();
            let avg = average_checkpoints(&[ckpt(a.clone(), 0.3, 1), ckpt(b.clone(), 0.4, 2)], 2).unwrap();
            let avg_p = average_checkpoints(&[ckpt(apply(&a), 0.3, 1), ckpt(apply(&b), 0.4, 2)], 2).unwrap();
            prop_assert_eq!(apply(&avg), avg_p);
        }
    }
}
