//! `gpst train`: hard-EM training inside a run directory.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use gpst_core::corpus::{read_bracketed_trees, Vocab, DEFAULT_PUNCT_TAGS};
use gpst_core::evaluation::{collapse_pieces, corpus_f1, tree_spans, F1Config};
use gpst_core::numerics::{checkpoint, ParamStore, Real};
use gpst_core::training::{induce, train, LossReport};
use gpst_core::{Error, Gpst};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{Precision, RunConfig};
use crate::error::{runtime, usage, CliResult};
use crate::run::{model_from_checkpoint, read_lines, require_file, tokenize_all, write_atomic, RunDir};

#[derive(clap::Args, Debug)]
pub struct TrainArgs {
    /// Run configuration (TOML). Not needed with --resume.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory receiving the config snapshot, checkpoints, logs and outputs.
    #[arg(long)]
    pub run_dir: PathBuf,
    /// Continue from the latest checkpoint in --run-dir.
    #[arg(long)]
    pub resume: bool,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<u64>,
    /// Fixes parameter initialization and batch order.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_tokens: Option<usize>,
    /// Let the autoregressive loss reach the split scores.
    #[arg(long)]
    pub no_grad_stop: bool,
    #[arg(long, value_enum)]
    pub precision: Option<Precision>,
}

impl TrainArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(p) = &self.corpus {
            cfg.data.corpus = Some(p.clone());
        }
        if let Some(p) = &self.vocab {
            cfg.data.vocab = Some(p.clone());
        }
        if let Some(s) = self.steps {
            cfg.training.steps = s;
        }
        if let Some(s) = self.seed {
            cfg.training.seed = s;
        }
        if let Some(lr) = self.lr {
            cfg.training.lr = lr;
        }
        if let Some(b) = self.batch_tokens {
            cfg.training.batch_tokens = b;
        }
        if self.no_grad_stop {
            cfg.training.grad_stop = false;
        }
        if let Some(p) = self.precision {
            cfg.precision = p;
        }
    }
}

#[derive(Serialize)]
struct LogRecord<'a> {
    #[serde(flatten)]
    report: &'a LossReport,
    tokens_per_sec: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    heldout_f1: Option<f64>,
}

pub fn run(args: &TrainArgs) -> CliResult<()> {
    let dir = RunDir::new(&args.run_dir);
    let mut cfg = if args.resume {
        if args.precision.is_some() {
            return Err(usage("--precision cannot change on resume"));
        }
        dir.load_config()?
    } else {
        let path = args.config.as_ref().ok_or_else(|| usage("--config is required for a new run"))?;
        require_file(path, "config")?;
        if dir.config().exists() {
            return Err(usage(format!("{} already holds a run; pass --resume to continue it", dir.root.display())));
        }
        RunConfig::load(path)?
    };
    args.apply(&mut cfg);
    cfg.training.validate()?;
    let corpus = cfg.data.corpus.clone().ok_or_else(|| usage("no corpus given (data.corpus or --corpus)"))?;
    require_file(&corpus, "corpus")?;
    match cfg.precision {
        Precision::F32 => run_typed::<f32>(&dir, cfg, args.resume),
        Precision::F64 => run_typed::<f64>(&dir, cfg, args.resume),
    }
}

fn load_vocab(dir: &RunDir, cfg: &RunConfig, lines: &[String], resume: bool) -> CliResult<Vocab> {
    let read = |p: &std::path::Path| -> CliResult<Vocab> {
        let text = fs::read_to_string(p).map_err(|e| runtime(format!("{}: {e}", p.display())))?;
        Ok(Vocab::from_text(&text)?)
    };
    if resume {
        return read(&dir.vocab());
    }
    if let Some(p) = &cfg.data.vocab {
        require_file(p, "vocabulary")?;
        return read(p);
    }
    let it = lines.iter().map(String::as_str);
    Ok(match cfg.data.tokenize {
        gpst_core::corpus::TokenizeMode::Whitespace => Vocab::build(it, cfg.data.vocab_limit, cfg.data.min_freq)?,
        gpst_core::corpus::TokenizeMode::Wordpiece => Vocab::build_wordpiece(it, cfg.data.vocab_limit, cfg.data.min_freq)?,
    })
}

fn checkpoint_meta(cfg: &RunConfig, step: u64) -> String {
    serde_json::json!({ "step": step, "precision": cfg.precision }).to_string()
}

fn run_typed<R: Real>(dir: &RunDir, mut cfg: RunConfig, resume: bool) -> CliResult<()> {
    let lines = read_lines(cfg.data.corpus.as_ref().expect("checked"), cfg.data.lowercase)?;
    let vocab = load_vocab(dir, &cfg, &lines, resume)?;
    if resume && cfg.model.vocab_size != vocab.len() {
        return Err(runtime("run vocabulary does not match its config"));
    }
    cfg.model.vocab_size = vocab.len();

    let heldout_lines = match &cfg.data.heldout {
        Some(p) => read_lines(p, cfg.data.lowercase)?,
        None => lines.iter().take(cfg.schedule.eval_sentences).cloned().collect(),
    };
    let gold = match &cfg.data.heldout_gold {
        Some(p) => {
            require_file(p, "held-out gold trees")?;
            let g = read_bracketed_trees(p, DEFAULT_PUNCT_TAGS)?;
            if g.len() != heldout_lines.len() {
                return Err(usage(format!("{} gold trees for {} held-out sentences", g.len(), heldout_lines.len())));
            }
            Some(g)
        }
        None => None,
    };
    let data = tokenize_all(&lines, &vocab, &cfg.data);
    let heldout = tokenize_all(&heldout_lines, &vocab, &cfg.data);

    let (mut store, model) = if resume {
        let (step, path) = dir.latest_checkpoint().ok_or_else(|| usage(format!("no checkpoint in {}", dir.root.display())))?;
        let (store, _) = checkpoint::load::<R>(&path)?;
        let model = model_from_checkpoint(&cfg, &store)?;
        log::info!("resuming from step {step}");
        (store, model)
    } else {
        let mut store = ParamStore::<R>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.training.seed);
        let model = Gpst::new(&mut store, &cfg.model, &mut rng)?;
        (store, model)
    };
    dir.create()?;
    write_atomic(&dir.config(), &cfg.to_toml())?;
    if !resume {
        write_atomic(&dir.vocab(), &vocab.to_text())?;
    }
    log::info!(
        "{} sentences, vocabulary {}, {} parameters, steps {}..{}",
        data.len(),
        vocab.len(),
        store.num_scalars(),
        store.step_count(),
        cfg.training.steps
    );

    let log_path = dir.logs().join("train.jsonl");
    let mut log_file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .map_err(|e| runtime(format!("{}: {e}", log_path.display())))?;
    let mut last_saved = None;
    let mut last_eval = None;
    let mut tick = Instant::now();
    let evaluate = |store: &ParamStore<R>, step: u64| -> gpst_core::Result<Option<f64>> {
        let mut out = String::new();
        let mut spans = Vec::new();
        for (line, sent) in heldout_lines.iter().zip(&heldout) {
            if sent.is_empty() {
                out.push('\n');
                spans.push(Default::default());
                continue;
            }
            let tree = collapse_pieces(&induce(store, &model, sent)?, &sent.word_of)?;
            let words: Vec<&str> = line.split_whitespace().collect();
            out.push_str(&tree.to_labeled(&words, "X"));
            out.push('\n');
            spans.push(tree_spans(&tree));
        }
        let path = dir.outputs().join(format!("trees-step-{step:08}.txt"));
        write_atomic(&path, &out)?;
        match &gold {
            Some(g) => Ok(Some(corpus_f1(&spans, g, &F1Config::default())?.mean_f1)),
            None => Ok(None),
        }
    };
    let start_step = store.step_count();
    let summary = train(&mut store, &model, &data, &cfg.training, |report, store| {
        let secs = tick.elapsed().as_secs_f64();
        tick = Instant::now();
        let step = store.step_count();
        let heldout_f1 = if cfg.schedule.eval_every > 0 && step % cfg.schedule.eval_every == 0 {
            last_eval = Some(step);
            evaluate(store, step)?
        } else {
            None
        };
        let rec = LogRecord { report, tokens_per_sec: report.tokens as f64 / secs.max(1e-9), heldout_f1 };
        writeln!(log_file, "{}", serde_json::to_string(&rec).expect("record serializes")).map_err(|e| Error::io(&log_path, e))?;
        if report.skipped.is_some() {
            log::warn!("step {}: update skipped ({})", report.step, report.skipped.as_deref().unwrap_or(""));
        } else {
            log::info!("step {} loss {:.4} (ae {:.3} ar {:.3} p {:.3} h {:.3})", report.step, report.total, report.l_ae, report.l_ar, report.l_p, report.l_h);
        }
        if cfg.schedule.checkpoint_every > 0 && step % cfg.schedule.checkpoint_every == 0 {
            checkpoint::save(&dir.checkpoint(step), store, &checkpoint_meta(&cfg, step))?;
            last_saved = Some(step);
        }
        Ok(())
    })?;
    let step = store.step_count();
    if last_saved != Some(step) && (step > start_step || dir.latest_checkpoint().is_none()) {
        checkpoint::save(&dir.checkpoint(step), &store, &checkpoint_meta(&cfg, step))?;
    }
    let heldout_f1 = if last_eval != Some(step) { evaluate(&store, step)? } else { None };
    let rec = LogRecord { report: &summary, tokens_per_sec: 0.0, heldout_f1 };
    write_atomic(&dir.outputs().join("summary.json"), &serde_json::to_string_pretty(&rec).expect("summary serializes"))?;
    println!("trained to step {step}, final loss {:.4}, run directory {}", summary.total, dir.root.display());
    Ok(())
}
