use std::cmp::Ordering;
use std::path::Path;

use super::gate::GateModel;
use crate::error::{Error, Result};
use crate::seqio::{load_sequence, save_sequence};
use crate::skeleton::{Encoding, SkeletonPose, SkeletonSequence, VelocityVector, POSE_DIM};

/// Default neighbour count.
pub const DEFAULT_K: usize = 300;

/// Key/target pose pairs searched by exact Euclidean distance on the keys.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborStore {
    keys: Vec<[f64; POSE_DIM]>,
    targets: Vec<[f64; POSE_DIM]>,
    k: usize,
}

impl NeighborStore {
    pub fn new(keys: Vec<[f64; POSE_DIM]>, targets: Vec<[f64; POSE_DIM]>, k: usize) -> Result<Self> {
        if keys.is_empty() {
            return Err(Error::Empty("neighbour store"));
        }
        if keys.len() != targets.len() {
            return Err(Error::LengthMismatch {
                left: keys.len(),
                right: targets.len(),
            });
        }
        if k == 0 {
            return Err(Error::config("neighbour count K must be at least 1"));
        }
        if keys.iter().chain(&targets).flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("neighbour store"));
        }
        Ok(Self { keys, targets, k })
    }

    /// Pairs frame `i` of `keys[s]` with frame `i` of `targets[s]` for every `s`.
    pub fn from_sequences(
        keys: &[SkeletonSequence],
        targets: &[SkeletonSequence],
        k: usize,
    ) -> Result<Self> {
        if keys.len() != targets.len() {
            return Err(Error::LengthMismatch {
                left: keys.len(),
                right: targets.len(),
            });
        }
        let mut kk = Vec::new();
        let mut tt = Vec::new();
        for (a, b) in keys.iter().zip(targets) {
            a.expect_encoding(Encoding::Absolute)?;
            b.expect_encoding(Encoding::Absolute)?;
            if a.len() != b.len() {
                return Err(Error::LengthMismatch {
                    left: a.len(),
                    right: b.len(),
                });
            }
            kk.extend(a.frames().iter().map(|f| *f.coords()));
            tt.extend(b.frames().iter().map(|f| *f.coords()));
        }
        Self::new(kk, tt, k)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn with_k(mut self, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::config("neighbour count K must be at least 1"));
        }
        self.k = k;
        Ok(self)
    }

    pub fn key(&self, i: usize) -> &[f64; POSE_DIM] {
        &self.keys[i]
    }

    pub fn target(&self, i: usize) -> &[f64; POSE_DIM] {
        &self.targets[i]
    }

    /// Indices of the `min(K, N)` keys closest to `query`, nearest first.
    /// Equal distances go to the lower index.
    pub fn nearest(&self, query: &[f64; POSE_DIM]) -> Vec<usize> {
        let mut scored: Vec<(f64, usize)> = self
            .keys
            .iter()
            .enumerate()
            .map(|(i, key)| (squared_distance(key, query), i))
            .collect();
        let by_rank = |a: &(f64, usize), b: &(f64, usize)| -> Ordering {
            a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
        };
        let k = self.k.min(scored.len());
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, by_rank);
            scored.truncate(k);
        }
        scored.sort_unstable_by(by_rank);
        scored.into_iter().map(|(_, i)| i).collect()
    }

    /// Writes keys and targets as two sequence files.
    pub fn save(&self, keys_path: impl AsRef<Path>, targets_path: impl AsRef<Path>) -> Result<()> {
        save_sequence(keys_path, &as_sequence(&self.keys)?)?;
        save_sequence(targets_path, &as_sequence(&self.targets)?)
    }

    pub fn load(keys_path: impl AsRef<Path>, targets_path: impl AsRef<Path>, k: usize) -> Result<Self> {
        let keys = load_sequence(keys_path)?;
        let targets = load_sequence(targets_path)?;
        Self::from_sequences(&[keys], &[targets], k)
    }
}

fn as_sequence(rows: &[[f64; POSE_DIM]]) -> Result<SkeletonSequence> {
    let frames = rows
        .iter()
        .map(|c| SkeletonPose::new(*c, Encoding::Absolute))
        .collect::<Result<Vec<_>>>()?;
    SkeletonSequence::new(frames, 30.0)
}

#[inline]
fn squared_distance(a: &[f64; POSE_DIM], b: &[f64; POSE_DIM]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// One soft-KNN step.
///
/// For each component `j`, neighbour `i` is kept when its implied velocity
/// `key_i[j] - previous[j]` lies within the gate around `velocity[j]`. The
/// output is the mean target over kept neighbours, or over all `K` when the
/// gate keeps none.
pub fn sknn_step(
    store: &NeighborStore,
    gate: &GateModel,
    query: &SkeletonPose,
    velocity: &VelocityVector,
    previous: &SkeletonPose,
) -> Result<SkeletonPose> {
    query.expect_encoding(Encoding::Absolute)?;
    previous.expect_encoding(Encoding::Absolute)?;
    let neighbours = store.nearest(query.coords());
    let prev = previous.coords();
    let mut out = [0.0; POSE_DIM];
    for (j, o) in out.iter_mut().enumerate() {
        let mut sum = 0.0;
        let mut kept = 0usize;
        for &i in &neighbours {
            let candidate = store.keys[i][j] - prev[j];
            if gate.passes(j, candidate - velocity.0[j]) {
                sum += store.targets[i][j];
                kept += 1;
            }
        }
        if kept == 0 {
            for &i in &neighbours {
                sum += store.targets[i][j];
            }
            kept = neighbours.len();
        }
        *o = sum / kept as f64;
    }
    SkeletonPose::new(out, Encoding::Absolute)
}
