//! The run configuration: one TOML file with nested sections, snapshotted
//! into every run directory.

use std::fs;
use std::path::{Path, PathBuf};

use gpst_core::corpus::TokenizeMode;
use gpst_core::decoding::DecodeConfig;
use gpst_core::training::TrainConfig;
use gpst_core::ModelConfig;
use serde::{Deserialize, Serialize};

use crate::error::{usage, CliResult};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Training text, one sentence per line.
    pub corpus: Option<PathBuf>,
    /// Existing vocabulary; built from the corpus when absent.
    pub vocab: Option<PathBuf>,
    /// Sentences whose induced trees are written at every evaluation.
    /// Defaults to the head of the corpus.
    pub heldout: Option<PathBuf>,
    /// Gold trees aligned with `heldout`, for F1 in the training log.
    pub heldout_gold: Option<PathBuf>,
    pub tokenize: TokenizeMode,
    pub lowercase: bool,
    pub vocab_limit: usize,
    pub min_freq: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            corpus: None,
            vocab: None,
            heldout: None,
            heldout_gold: None,
            tokenize: TokenizeMode::Whitespace,
            lowercase: false,
            vocab_limit: 30_000,
            min_freq: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub checkpoint_every: u64,
    pub eval_every: u64,
    pub eval_sentences: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig { checkpoint_every: 100, eval_every: 100, eval_sentences: 20 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub precision: Precision,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub training: TrainConfig,
    pub schedule: ScheduleConfig,
    pub decoding: DecodeConfig,
}

impl RunConfig {
    /// Reads a config file; relative data paths are taken from the file's
    /// directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let base = match path.parent() {
            Some(d) if !d.as_os_str().is_empty() => d,
            _ => Path::new("."),
        };
        let base = std::path::absolute(base).map_err(|e| usage(format!("{}: {e}", base.display())))?;
        let d = &mut cfg.data;
        for p in [&mut d.corpus, &mut d.vocab, &mut d.heldout, &mut d.heldout_gold].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_toml() {
        let mut c = RunConfig::default();
        c.data.corpus = Some("/x/corpus.txt".into());
        c.training.steps = 7;
        c.model.vocab_size = 40;
        let back: RunConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_files_fill_defaults_and_resolve_paths() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        fs::write(&p, "precision = \"f64\"\n[data]\ncorpus = \"c.txt\"\n[training]\nsteps = 3\n").unwrap();
        let c = RunConfig::load(&p).unwrap();
        assert_eq!(c.precision, Precision::F64);
        assert_eq!(c.training.steps, 3);
        assert_eq!(c.training.lr, TrainConfig::default().lr);
        assert_eq!(c.data.corpus.unwrap(), dir.path().join("c.txt"));
    }
}
