use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelDims, ModelKind};
use crate::training::TrainConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub valid: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub log: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleSettings {
    pub word_k: usize,
    pub sentence_k: usize,
    pub max_words: usize,
    pub length_norm: bool,
}

impl Default for SampleSettings {
    fn default() -> Self {
        SampleSettings {
            word_k: 20,
            sentence_k: 10,
            max_words: 50,
            length_norm: false,
        }
    }
}

/// Effective configuration of one command invocation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub model: ModelKind,
    pub lowercase: bool,
    /// Word vocabulary cap for the baseline, specials included.
    pub max_vocab: Option<usize>,
    pub paths: Paths,
    pub train: TrainConfig,
    pub dims: ModelDims,
    pub sample: SampleSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelKind::C2w2c,
            lowercase: false,
            max_vocab: None,
            paths: Paths::default(),
            train: TrainConfig::default(),
            dims: ModelDims::default(),
            sample: SampleSettings::default(),
        }
    }
}

impl RunConfig {
    /// Defaults overlaid with a TOML file; unknown tables (such as a run
    /// manifest's `[run]`) are ignored.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.dims.validate()?;
        if self.sample.word_k == 0 || self.sample.sentence_k == 0 {
            return Err(Error::Config("beam widths must be positive".into()));
        }
        if self.max_vocab.is_some_and(|v| v < 4) {
            return Err(Error::Config("max vocab must leave room for at least one word besides the 3 specials".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Provenance written next to every trained checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub command: String,
    pub version: String,
    pub checkpoint_format: u32,
    pub seed: u64,
    pub vocab_hash: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    #[serde(flatten)]
    config: &'a RunConfig,
    run: &'a RunMeta,
}

/// Writes `config` plus a `[run]` table; the file can be fed back through
/// `--config` to repeat the run.
pub fn write_manifest(path: &Path, config: &RunConfig, run: &RunMeta) -> Result<()> {
    let text = toml::to_string(&Manifest { config, run }).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_reference_settings() {
        let c = RunConfig::default();
        assert_eq!(c.train.learning_rate, 1e-4);
        assert_eq!(c.train.clip_norm, 2.0);
        assert_eq!(c.train.dropout, 0.5);
        assert_eq!(c.train.batch_size, 150);
        assert_eq!(c.train.bptt_window, 1);
        assert_eq!(c.dims.max_word_len, 20);
        assert_eq!((c.dims.d_c, c.dims.d_wi, c.dims.d_w, c.dims.d_l), (50, 150, 50, 500));
        assert_eq!((c.sample.word_k, c.sample.sentence_k), (20, 10));
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let c: RunConfig = toml::from_str("model = \"wordlstm\"\n[train]\nlearning_rate = 0.01\n").unwrap();
        assert_eq!(c.model, ModelKind::WordLstm);
        assert_eq!(c.train.learning_rate, 0.01);
        assert_eq!(c.train.clip_norm, 2.0);
    }

    #[test]
    fn manifest_reads_back_as_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        let mut c = RunConfig::default();
        c.train.seed = 77;
        c.dims.d_l = 12;
        let meta = RunMeta {
            command: "train".into(),
            version: "0.1.0".into(),
            checkpoint_format: 1,
            seed: 77,
            vocab_hash: "abc".into(),
        };
        write_manifest(&path, &c, &meta).unwrap();
        assert_eq!(RunConfig::from_file(&path).unwrap(), c);
    }
}
