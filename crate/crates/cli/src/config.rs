use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use skeleton_refine::experiment::ExperimentConfig;
use skeleton_refine::synth::CorpusConfig;

use crate::error::CliError;

/// Everything one experiment needs: where artifacts live, how the corpus is
/// generated, and how each stage is trained and fused.
///
/// `corpus_dir` and `models_dir` are required. Every other field falls back
/// to its default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub corpus_dir: PathBuf,
    pub models_dir: PathBuf,
    /// Where `run` writes reports and refined test sequences.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub corpus: CorpusConfig,
    #[serde(default, flatten)]
    pub experiment: ExperimentConfig,
}

impl PipelineConfig {
    /// Reads TOML when the extension is `.toml`, JSON otherwise. Relative
    /// paths inside the file resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        if text.trim().is_empty() {
            return Err(CliError::Usage(format!("config {} is empty", path.display())));
        }
        let is_toml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
        let mut cfg: Self = if is_toml {
            toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        } else {
            serde_json::from_str(&text)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        };
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.corpus_dir, &mut cfg.models_dir] {
            *p = resolve(base, p);
        }
        if let Some(p) = cfg.output_dir.as_mut() {
            *p = resolve(base, p);
        }
        cfg.corpus.validate()?;
        cfg.experiment.validate()?;
        Ok(cfg)
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_relative() {
        base.join(p)
    } else {
        p.to_path_buf()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_toml_fills_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");
        fs::write(&path, "corpus_dir = \"corpus\"\nmodels_dir = \"/abs/models\"\n[fusion]\nk = 7\n").unwrap();
        let cfg = PipelineConfig::load(&path).unwrap();
        assert_eq!(cfg.corpus_dir, dir.path().join("corpus"));
        assert_eq!(cfg.models_dir, PathBuf::from("/abs/models"));
        assert_eq!(cfg.experiment.fusion.k, 7);
        assert_eq!(cfg.corpus, CorpusConfig::default());
    }

    #[test]
    fn json_and_toml_agree() {
        let dir = tempfile::tempdir().unwrap();
        let json = dir.path().join("cfg.json");
        let toml_path = dir.path().join("cfg.toml");
        fs::write(&json, r#"{"corpus_dir": "c", "models_dir": "m", "corpus": {"sequences": 5}}"#).unwrap();
        fs::write(&toml_path, "corpus_dir = \"c\"\nmodels_dir = \"m\"\n[corpus]\nsequences = 5\n").unwrap();
        assert_eq!(PipelineConfig::load(&json).unwrap(), PipelineConfig::load(&toml_path).unwrap());
    }

    #[test]
    fn rejects_empty_and_invalid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        fs::write(&path, "  \n").unwrap();
        assert!(matches!(PipelineConfig::load(&path), Err(CliError::Usage(_))));
        fs::write(&path, r#"{"corpus_dir": "c", "models_dir": "m", "fusion": {"k": 0}}"#).unwrap();
        assert_eq!(PipelineConfig::load(&path).unwrap_err().exit_code(), 1);
    }
}
