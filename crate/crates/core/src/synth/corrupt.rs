use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::derive_seed;
use crate::error::{Error, Result};
use crate::skeleton::{Encoding, JointId, SkeletonSequence};

/// Tracker-like damage: per-coordinate jitter plus occlusion episodes during
/// which a joint freezes at a displaced position and then snaps back.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorruptionConfig {
    pub jitter_sigma: f64,
    /// Chance per joint per frame that an episode starts.
    pub occlusion_rate: f64,
    /// Inclusive episode length range in frames.
    pub occlusion_duration_frames: [usize; 2],
    /// Per-axis standard deviation of the frozen position's offset.
    pub displacement_sigma: f64,
    pub seed: u64,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        Self {
            jitter_sigma: 0.01,
            occlusion_rate: 0.02,
            occlusion_duration_frames: [3, 10],
            displacement_sigma: 0.05,
            seed: 0,
        }
    }
}

impl CorruptionConfig {
    /// No damage at all.
    pub fn none() -> Self {
        Self {
            jitter_sigma: 0.0,
            occlusion_rate: 0.0,
            occlusion_duration_frames: [1, 1],
            displacement_sigma: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.occlusion_rate) {
            return Err(Error::config("occlusion_rate must lie in [0, 1]"));
        }
        for (name, s) in [
            ("jitter_sigma", self.jitter_sigma),
            ("displacement_sigma", self.displacement_sigma),
        ] {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::config(format!("{name} must be finite and non-negative")));
            }
        }
        let [lo, hi] = self.occlusion_duration_frames;
        if lo == 0 || lo > hi {
            return Err(Error::config(
                "occlusion_duration_frames must be a range [min, max] with 1 <= min <= max",
            ));
        }
        Ok(())
    }
}

/// Applies occlusion episodes, then jitter. Occlusions and jitter draw from
/// independent streams, so disabling one leaves the other unchanged.
pub fn corrupt(seq: &SkeletonSequence, cfg: &CorruptionConfig) -> Result<SkeletonSequence> {
    cfg.validate()?;
    seq.expect_encoding(Encoding::Absolute)?;
    let mut frames = seq.frames().to_vec();
    let n = frames.len();

    if cfg.occlusion_rate > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1, 0));
        let offset = Normal::new(0.0, cfg.displacement_sigma).expect("validated sigma");
        let [lo, hi] = cfg.occlusion_duration_frames;
        for joint in JointId::ALL {
            let mut t = 0;
            while t < n {
                if rng.random::<f64>() >= cfg.occlusion_rate {
                    t += 1;
                    continue;
                }
                let len = rng.random_range(lo..=hi);
                let anchor = seq.frames()[t].joint(joint);
                let frozen: [f64; 3] =
                    std::array::from_fn(|k| anchor[k] + offset.sample(&mut rng));
                for f in frames.iter_mut().skip(t).take(len) {
                    f.set_joint(joint, frozen);
                }
                t += len;
            }
        }
    }

    if cfg.jitter_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 2, 0));
        let noise = Normal::new(0.0, cfg.jitter_sigma).expect("validated sigma");
        for f in frames.iter_mut() {
            for c in f.coords_mut().iter_mut() {
                *c += noise.sample(&mut rng);
            }
        }
    }
    SkeletonSequence::new(frames, seq.frame_rate_hz())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{aje, ape};
    use crate::synth::{generate_ground_truth, MotionConfig};

    fn clean(n: usize) -> SkeletonSequence {
        generate_ground_truth(&MotionConfig {
            n_frames: n,
            seed: 5,
            ..MotionConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn no_corruption_is_identity() {
        let seq = clean(50);
        assert_eq!(corrupt(&seq, &CorruptionConfig::none()).unwrap(), seq);
    }

    #[test]
    fn jitter_ape_matches_chi_mean() {
        // 16 joints × 700 frames > 10k joint-frames.
        let seq = clean(700);
        let cfg = CorruptionConfig {
            occlusion_rate: 0.0,
            ..CorruptionConfig::default()
        };
        let e = ape(&corrupt(&seq, &cfg).unwrap(), &seq).unwrap();
        // Monte-Carlo mean of ‖N(0, σ²I₃)‖.
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let normal = Normal::new(0.0_f64, 0.01).unwrap();
        let mc: f64 = (0..100_000)
            .map(|_| {
                (0..3)
                    .map(|_| normal.sample(&mut rng).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .sum::<f64>()
            / 100_000.0;
        assert!((e / mc - 1.0).abs() < 0.1, "{e} vs {mc}");
        // Closed form 2σ·√(2/π).
        assert!((mc / (0.02 * (2.0 / std::f64::consts::PI).sqrt()) - 1.0).abs() < 0.01);
    }

    #[test]
    fn occlusions_raise_jerk_error() {
        let seq = clean(300);
        let jitter_only = CorruptionConfig {
            occlusion_rate: 0.0,
            ..CorruptionConfig::default()
        };
        let both = CorruptionConfig::default();
        let a = aje(&corrupt(&seq, &jitter_only).unwrap(), &seq).unwrap();
        let b = aje(&corrupt(&seq, &both).unwrap(), &seq).unwrap();
        assert!(b > a, "{b} <= {a}");
    }

    #[test]
    fn deterministic_per_seed() {
        let seq = clean(80);
        let cfg = CorruptionConfig::default();
        assert_eq!(corrupt(&seq, &cfg).unwrap(), corrupt(&seq, &cfg).unwrap());
        let other = CorruptionConfig { seed: 3, ..cfg };
        assert_ne!(corrupt(&seq, &other).unwrap(), corrupt(&seq, &CorruptionConfig::default()).unwrap());
    }

    #[test]
    fn rejects_bad_configs() {
        let seq = clean(10);
        for cfg in [
            CorruptionConfig { occlusion_rate: 1.5, ..CorruptionConfig::default() },
            CorruptionConfig { jitter_sigma: -1.0, ..CorruptionConfig::default() },
            CorruptionConfig { occlusion_duration_frames: [4, 2], ..CorruptionConfig::default() },
        ] {
            assert!(corrupt(&seq, &cfg).is_err());
        }
    }
}
