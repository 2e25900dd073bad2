use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{corrupt, derive_seed, generate_ground_truth, CorruptionConfig, MotionConfig};
use crate::error::{Error, Result};
use crate::seqio::{load_sequence, save_sequence};
use crate::skeleton::SkeletonSequence;

const MANIFEST_FORMAT: &str = "skeleton-corpus";
const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.validation, self.test];
        if parts.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::config("split ratios must be non-negative"));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("split ratios must sum to 1, got {sum}")));
        }
        Ok(())
    }

    /// Sequence counts per split by largest remainder; ties go to the earlier split.
    pub fn allocate(&self, n: usize) -> Result<[usize; 3]> {
        self.validate()?;
        let exact = [self.train, self.validation, self.test].map(|r| r * n as f64);
        let mut counts = exact.map(|x| x.floor() as usize);
        let mut left = n - counts.iter().sum::<usize>();
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| {
            let ra = exact[a] - exact[a].floor();
            let rb = exact[b] - exact[b].floor();
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        for &i in order.iter().cycle() {
            if left == 0 {
                break;
            }
            counts[i] += 1;
            left -= 1;
        }
        Ok(counts)
    }
}

/// Recipe for a whole corpus of equally long sequences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub sequences: usize,
    /// Motion of every sequence; seed and limb amplitude vary per sequence.
    pub motion: MotionConfig,
    /// Each sequence scales `joint_amplitude_rad` by a factor drawn from
    /// `[1 - spread, 1 + spread]`.
    pub amplitude_spread: f64,
    pub corruption: CorruptionConfig,
    pub split: SplitRatios,
    pub seed: u64,
}

impl Default for CorpusConfig {
    /// 73 sequences of 100 frames: 5000 / 800 / 1500 frames.
    fn default() -> Self {
        Self {
            sequences: 73,
            motion: MotionConfig::default(),
            amplitude_spread: 0.5,
            corruption: CorruptionConfig::default(),
            split: SplitRatios {
                train: 50.0 / 73.0,
                validation: 8.0 / 73.0,
                test: 15.0 / 73.0,
            },
            seed: 0,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sequences == 0 {
            return Err(Error::config("corpus needs at least one sequence"));
        }
        if !(0.0..1.0).contains(&self.amplitude_spread) {
            return Err(Error::config("amplitude_spread must lie in [0, 1)"));
        }
        self.motion.validate()?;
        self.corruption.validate()?;
        self.split.validate()
    }

    /// Per-sequence motion configs with derived seeds.
    pub fn motions(&self) -> Result<Vec<MotionConfig>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, 3, 0));
        Ok((0..self.sequences)
            .map(|i| {
                let factor = if self.amplitude_spread > 0.0 {
                    rng.random_range(1.0 - self.amplitude_spread..=1.0 + self.amplitude_spread)
                } else {
                    1.0
                };
                MotionConfig {
                    joint_amplitude_rad: self.motion.joint_amplitude_rad * factor,
                    seed: derive_seed(self.seed, 4, i as u64),
                    ..self.motion.clone()
                }
            })
            .collect())
    }

    pub fn build(&self) -> Result<Corpus> {
        let corruption = CorruptionConfig {
            seed: derive_seed(self.seed, 5, self.corruption.seed),
            ..self.corruption.clone()
        };
        build_corpus(&self.motions()?, &corruption, &self.split)
    }
}

/// A ground-truth sequence and its corrupted observation.
#[derive(Clone, Debug, PartialEq)]
pub struct SequencePair {
    pub noisy: SkeletonSequence,
    pub clean: SkeletonSequence,
    pub motion: MotionConfig,
    pub corruption: CorruptionConfig,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Corpus {
    pub train: Vec<SequencePair>,
    pub validation: Vec<SequencePair>,
    pub test: Vec<SequencePair>,
}

impl Corpus {
    pub fn splits(&self) -> [(&'static str, &[SequencePair]); 3] {
        [
            ("train", &self.train),
            ("validation", &self.validation),
            ("test", &self.test),
        ]
    }

    pub fn frames(split: &[SequencePair]) -> usize {
        split.iter().map(|p| p.clean.len()).sum()
    }
}

/// Generates, corrupts, and splits sequences in order: the first block goes
/// to training, the next to validation, the rest to test. Sequence `i` is
/// corrupted with a seed derived from `corruption.seed` and `i`.
pub fn build_corpus(
    motions: &[MotionConfig],
    corruption: &CorruptionConfig,
    split: &SplitRatios,
) -> Result<Corpus> {
    if motions.is_empty() {
        return Err(Error::Empty("motion list"));
    }
    let [n_train, n_val, _] = split.allocate(motions.len())?;
    let mut corpus = Corpus::default();
    for (i, motion) in motions.iter().enumerate() {
        let clean = generate_ground_truth(motion)?;
        let cfg = CorruptionConfig {
            seed: derive_seed(corruption.seed, 6, i as u64),
            ..corruption.clone()
        };
        let pair = SequencePair {
            noisy: corrupt(&clean, &cfg)?,
            clean,
            motion: motion.clone(),
            corruption: cfg,
        };
        if i < n_train {
            corpus.train.push(pair);
        } else if i < n_train + n_val {
            corpus.validation.push(pair);
        } else {
            corpus.test.push(pair);
        }
    }
    Ok(corpus)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub noisy: PathBuf,
    pub clean: PathBuf,
    pub frames: usize,
    pub motion: MotionConfig,
    pub corruption: CorruptionConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<CorpusConfig>,
    pub train: Vec<ManifestEntry>,
    pub validation: Vec<ManifestEntry>,
    pub test: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn entries(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.train.iter().chain(&self.validation).chain(&self.test)
    }
}

/// Writes `<split>/<index>_{noisy,clean}.jsonl` and `manifest.json` under
/// `dir`. Paths in the manifest are relative to `dir`.
pub fn write_corpus(dir: &Path, corpus: &Corpus, config: Option<&CorpusConfig>) -> Result<Manifest> {
    let mut lists: Vec<Vec<ManifestEntry>> = Vec::new();
    for (name, pairs) in corpus.splits() {
        fs::create_dir_all(dir.join(name))?;
        let mut entries = Vec::with_capacity(pairs.len());
        for (i, p) in pairs.iter().enumerate() {
            let noisy = PathBuf::from(name).join(format!("{i:03}_noisy.jsonl"));
            let clean = PathBuf::from(name).join(format!("{i:03}_clean.jsonl"));
            save_sequence(dir.join(&noisy), &p.noisy)?;
            save_sequence(dir.join(&clean), &p.clean)?;
            entries.push(ManifestEntry {
                noisy,
                clean,
                frames: p.clean.len(),
                motion: p.motion.clone(),
                corruption: p.corruption.clone(),
            });
        }
        lists.push(entries);
    }
    let test = lists.pop().unwrap_or_default();
    let validation = lists.pop().unwrap_or_default();
    let train = lists.pop().unwrap_or_default();
    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        version: MANIFEST_VERSION,
        config: config.cloned(),
        train,
        validation,
        test,
    };
    let mut w = BufWriter::new(File::create(dir.join(MANIFEST_FILE))?);
    serde_json::to_writer_pretty(&mut w, &manifest)?;
    std::io::Write::write_all(&mut w, b"\n")?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let m: Manifest = serde_json::from_reader(BufReader::new(File::open(&path)?))?;
    if m.format != MANIFEST_FORMAT || m.version != MANIFEST_VERSION {
        return Err(Error::Parse {
            path,
            msg: format!("unsupported corpus format {} v{}", m.format, m.version),
        });
    }
    Ok(m)
}

/// Loads every sequence a manifest lists.
pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let m = read_manifest(dir)?;
    let load = |entries: &[ManifestEntry]| -> Result<Vec<SequencePair>> {
        entries
            .iter()
            .map(|e| {
                let noisy = load_sequence(dir.join(&e.noisy))?;
                let clean = load_sequence(dir.join(&e.clean))?;
                if noisy.len() != clean.len() {
                    return Err(Error::LengthMismatch {
                        left: noisy.len(),
                        right: clean.len(),
                    });
                }
                Ok(SequencePair {
                    noisy,
                    clean,
                    motion: e.motion.clone(),
                    corruption: e.corruption.clone(),
                })
            })
            .collect()
    };
    Ok(Corpus {
        train: load(&m.train)?,
        validation: load(&m.validation)?,
        test: load(&m.test)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drnn::{TrainingBatch, POSITION_WINDOW};
    use crate::drnn::Normalizer;

    fn small() -> CorpusConfig {
        CorpusConfig {
            sequences: 6,
            motion: MotionConfig {
                n_frames: 30,
                ..MotionConfig::default()
            },
            split: SplitRatios {
                train: 0.5,
                validation: 1.0 / 6.0,
                test: 1.0 / 3.0,
            },
            seed: 9,
            ..CorpusConfig::default()
        }
    }

    #[test]
    fn default_sizes() {
        let counts = CorpusConfig::default().split.allocate(73).unwrap();
        assert_eq!(counts, [50, 8, 15]);
        assert_eq!(counts.map(|c| c * 100), [5000, 800, 1500]);
    }

    #[test]
    fn ratios_must_sum_to_one() {
        let bad = SplitRatios {
            train: 0.5,
            validation: 0.2,
            test: 0.2,
        };
        assert!(bad.allocate(10).is_err());
        assert_eq!(
            SplitRatios { train: 1.0 / 3.0, validation: 1.0 / 3.0, test: 1.0 / 3.0 }
                .allocate(10)
                .unwrap(),
            [4, 3, 3]
        );
    }

    #[test]
    fn build_is_deterministic_and_split() {
        let a = small().build().unwrap();
        assert_eq!(a, small().build().unwrap());
        assert_eq!((a.train.len(), a.validation.len(), a.test.len()), (3, 1, 2));
        let other = CorpusConfig { seed: 10, ..small() };
        assert_ne!(a, other.build().unwrap());
    }

    #[test]
    fn window_count_per_sequence() {
        let c = small().build().unwrap();
        let pairs: Vec<_> = c
            .train
            .iter()
            .map(|p| {
                let m = |s: &SkeletonSequence| {
                    ndarray::Array2::from_shape_fn((s.len(), 48), |(t, k)| s.frames()[t].coords()[k])
                };
                (m(&p.noisy), m(&p.clean))
            })
            .collect();
        let batch = TrainingBatch::from_sequences(&pairs, POSITION_WINDOW).unwrap();
        assert_eq!(batch.len(), 3 * (30 - POSITION_WINDOW + 1));
        assert!(Normalizer::fit(pairs.iter().map(|(x, _)| x.view())).is_ok());
    }

    #[test]
    fn disk_round_trip_lists_every_file() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small();
        let corpus = cfg.build().unwrap();
        let m = write_corpus(dir.path(), &corpus, Some(&cfg)).unwrap();
        assert_eq!(read_manifest(dir.path()).unwrap(), m);
        assert_eq!(load_corpus(dir.path()).unwrap(), corpus);

        let mut listed: Vec<PathBuf> = m
            .entries()
            .flat_map(|e| [e.noisy.clone(), e.clean.clone()])
            .collect();
        listed.push(PathBuf::from(MANIFEST_FILE));
        listed.sort();
        let mut found = Vec::new();
        for split in ["train", "validation", "test"] {
            for e in fs::read_dir(dir.path().join(split)).unwrap() {
                found.push(PathBuf::from(split).join(e.unwrap().file_name()));
            }
        }
        found.push(PathBuf::from(MANIFEST_FILE));
        found.sort();
        assert_eq!(listed, found);
    }
}
