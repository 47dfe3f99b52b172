//! Run directories, model loading and output files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use gpst_core::corpus::{tokenize, TokenizedSentence, Vocab};
use gpst_core::numerics::{checkpoint, ParamStore, Real};
use gpst_core::{Error, Gpst};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{DataConfig, RunConfig};
use crate::error::{runtime, usage, CliResult};

pub const CONFIG_FILE: &str = "config.toml";
pub const VOCAB_FILE: &str = "vocab.txt";

pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunDir { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join(CONFIG_FILE)
    }

    pub fn vocab(&self) -> PathBuf {
        self.root.join(VOCAB_FILE)
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn logs(&self) -> PathBuf {
        self.root.join("logs")
    }

    pub fn outputs(&self) -> PathBuf {
        self.root.join("outputs")
    }

    pub fn checkpoint(&self, step: u64) -> PathBuf {
        self.checkpoints().join(format!("step-{step:08}.ckpt"))
    }

    pub fn create(&self) -> CliResult<()> {
        for d in [self.root.clone(), self.checkpoints(), self.logs(), self.outputs()] {
            fs::create_dir_all(&d).map_err(|e| runtime(format!("cannot create {}: {e}", d.display())))?;
        }
        Ok(())
    }

    /// The checkpoint with the highest step number.
    pub fn latest_checkpoint(&self) -> Option<(u64, PathBuf)> {
        fs::read_dir(self.checkpoints())
            .ok()?
            .filter_map(|e| {
                let p = e.ok()?.path();
                let step = p.file_name()?.to_str()?.strip_prefix("step-")?.strip_suffix(".ckpt")?.parse().ok()?;
                Some((step, p))
            })
            .max()
    }

    pub fn load_config(&self) -> CliResult<RunConfig> {
        let p = self.config();
        if !p.is_file() {
            return Err(usage(format!("{} is not a run directory (no {CONFIG_FILE})", self.root.display())));
        }
        RunConfig::load(&p)
    }
}

pub fn require_file(p: &Path, what: &str) -> CliResult<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(usage(format!("{what} {} does not exist", p.display())))
    }
}

/// Writes `contents` to `path` through a temporary file in the same
/// directory, so a failed command never leaves a partial file behind.
pub fn write_atomic(path: &Path, contents: &str) -> gpst_core::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(contents.as_bytes()).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Writes to `path`, or to stdout when no path is given.
pub fn emit(path: Option<&Path>, contents: &str) -> CliResult<()> {
    match path {
        Some(p) => Ok(write_atomic(p, contents)?),
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

pub fn read_lines(path: &Path, lowercase: bool) -> CliResult<Vec<String>> {
    require_file(path, "input")?;
    let text = fs::read_to_string(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    Ok(text.lines().map(|l| if lowercase { l.to_lowercase() } else { l.to_string() }).collect())
}

pub fn tokenize_all(lines: &[String], vocab: &Vocab, data: &DataConfig) -> Vec<TokenizedSentence> {
    lines.iter().map(|l| tokenize(l, vocab, data.tokenize)).collect()
}

/// A trained model ready for decoding.
pub struct Loaded<R: Real> {
    pub cfg: RunConfig,
    pub vocab: Vocab,
    pub store: ParamStore<R>,
    pub model: Gpst,
}

/// Rebuilds the model structure from the config and checks that the
/// checkpoint holds exactly its parameters.
pub fn model_from_checkpoint<R: Real>(cfg: &RunConfig, store: &ParamStore<R>) -> CliResult<Gpst> {
    let mut fresh = ParamStore::<R>::new();
    let model = Gpst::new(&mut fresh, &cfg.model, &mut ChaCha8Rng::seed_from_u64(0))?;
    let expected: Vec<(&str, &[usize])> = fresh.iter().map(|(_, p)| (p.name.as_str(), p.value.shape())).collect();
    let found: Vec<(&str, &[usize])> = store.iter().map(|(_, p)| (p.name.as_str(), p.value.shape())).collect();
    if expected != found {
        return Err(runtime("checkpoint parameters do not match the model config"));
    }
    Ok(model)
}

pub fn load_run<R: Real>(dir: &RunDir, checkpoint: Option<&Path>) -> CliResult<Loaded<R>> {
    let cfg = dir.load_config()?;
    require_file(&dir.vocab(), "vocabulary")?;
    let vocab = Vocab::from_text(
        &fs::read_to_string(dir.vocab()).map_err(|e| runtime(format!("{}: {e}", dir.vocab().display())))?,
    )?;
    let path = match checkpoint {
        Some(p) => {
            require_file(p, "checkpoint")?;
            p.to_path_buf()
        }
        None => dir.latest_checkpoint().map(|(_, p)| p).ok_or_else(|| usage(format!("no checkpoint in {}", dir.root.display())))?,
    };
    let (store, _) = checkpoint::load::<R>(&path)?;
    let model = model_from_checkpoint(&cfg, &store)?;
    if vocab.len() != cfg.model.vocab_size {
        return Err(runtime(format!("vocabulary has {} entries, model expects {}", vocab.len(), cfg.model.vocab_size)));
    }
    log::info!("loaded {} at step {}", path.display(), store.step_count());
    Ok(Loaded { cfg, vocab, store, model })
}
