//! Synthetic ground truth and tracker-like corruption for training and
//! evaluating the refinement pipeline.

mod corpus;
mod corrupt;
mod motion;

pub use corpus::{
    build_corpus, load_corpus, read_manifest, write_corpus, Corpus, CorpusConfig, Manifest,
    ManifestEntry, SequencePair, SplitRatios, MANIFEST_FILE,
};
pub use corrupt::{corrupt, CorruptionConfig};
pub use motion::{default_bone_lengths, generate_ground_truth, MotionConfig};

/// SplitMix64 over `(base, stream, index)`: independent seeds for named
/// random streams.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
