//! `gpst parse`, `gpst generate` and `gpst surprisal`.

use std::path::PathBuf;

use gpst_core::corpus::{detokenize, tokenize};
use gpst_core::decoding::{generate, parse, surprisal, BeamMode, GenMode};
use gpst_core::evaluation::collapse_pieces;
use gpst_core::numerics::Real;
use gpst_core::training::induce;
use serde::{Deserialize, Serialize};

use crate::config::Precision;
use crate::error::{runtime, usage, CliResult};
use crate::run::{emit, load_run, read_lines, Loaded, RunDir};

#[derive(clap::Args, Debug)]
pub struct ModelArgs {
    /// Run directory written by `gpst train`.
    #[arg(long)]
    pub run_dir: PathBuf,
    /// Specific checkpoint; defaults to the latest one in the run.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Beam size; defaults to the run's decoding config.
    #[arg(long)]
    pub beam: Option<usize>,
}

impl ModelArgs {
    fn precision(&self) -> CliResult<Precision> {
        Ok(RunDir::new(&self.run_dir).load_config()?.precision)
    }

    fn load<R: Real>(&self) -> CliResult<Loaded<R>> {
        let mut l = load_run::<R>(&RunDir::new(&self.run_dir), self.checkpoint.as_deref())?;
        if let Some(b) = self.beam {
            if b == 0 {
                return Err(usage("--beam must be positive"));
            }
            l.cfg.decoding.beam = b;
        }
        Ok(l)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum ParseMethod {
    /// Left-to-right constrained beam search with the generator.
    Beam,
    /// The composition model's inside-score tree.
    Inside,
}

#[derive(clap::Args, Debug)]
pub struct ParseArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Sentences, one per line.
    #[arg(long)]
    pub input: PathBuf,
    /// Bracketed trees, one per line; stdout when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ParseMethod::Beam)]
    pub method: ParseMethod,
    /// Compare hypotheses per action instead of per word.
    #[arg(long)]
    pub action_beam: bool,
}

pub fn cmd_parse(args: &ParseArgs) -> CliResult<()> {
    match args.model.precision()? {
        Precision::F32 => parse_typed::<f32>(args),
        Precision::F64 => parse_typed::<f64>(args),
    }
}

fn parse_typed<R: Real>(args: &ParseArgs) -> CliResult<()> {
    let mut l = args.model.load::<R>()?;
    if args.action_beam {
        l.cfg.decoding.mode = BeamMode::Action;
    }
    let lines = read_lines(&args.input, l.cfg.data.lowercase)?;
    let mut out = String::new();
    for line in &lines {
        let sent = tokenize(line, &l.vocab, l.cfg.data.tokenize);
        if sent.is_empty() {
            out.push('\n');
            continue;
        }
        let pieces = match args.method {
            ParseMethod::Beam => parse(&l.store, &l.model, &sent.ids, &l.cfg.decoding)?.tree,
            ParseMethod::Inside => induce(&l.store, &l.model, &sent)?,
        };
        let tree = collapse_pieces(&pieces, &sent.word_of)?;
        let words: Vec<&str> = line.split_whitespace().collect();
        out.push_str(&tree.to_labeled(&words, "X"));
        out.push('\n');
    }
    emit(args.output.as_deref(), &out)
}

#[derive(clap::Args, Debug)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Words to continue from.
    #[arg(long, default_value = "")]
    pub prompt: String,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// Sample each word from the top K instead of running beam search.
    #[arg(long)]
    pub sample: Option<usize>,
    /// Seed of the first sample; sample i uses seed + i.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub max_words: Option<usize>,
    /// JSON lines with text, tree and log-probability; stdout when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Serialize)]
struct GenRecord {
    text: String,
    tree: Option<String>,
    logp: f64,
    truncated: bool,
}

pub fn cmd_generate(args: &GenerateArgs) -> CliResult<()> {
    match args.model.precision()? {
        Precision::F32 => generate_typed::<f32>(args),
        Precision::F64 => generate_typed::<f64>(args),
    }
}

fn generate_typed<R: Real>(args: &GenerateArgs) -> CliResult<()> {
    if args.count > 1 && args.sample.is_none() {
        return Err(usage("beam search is deterministic; --count above 1 needs --sample"));
    }
    if args.sample == Some(0) {
        return Err(usage("--sample must be positive"));
    }
    let mut l = args.model.load::<R>()?;
    if let Some(m) = args.max_words {
        l.cfg.decoding.max_words = m;
    }
    let prompt = if l.cfg.data.lowercase { args.prompt.to_lowercase() } else { args.prompt.clone() };
    let ids = tokenize(&prompt, &l.vocab, l.cfg.data.tokenize).ids;
    let mut out = String::new();
    for i in 0..args.count {
        let mode = match args.sample {
            Some(k) => GenMode::Sample { k, seed: args.seed.wrapping_add(i as u64) },
            None => GenMode::Beam,
        };
        let g = generate(&l.store, &l.model, &ids, &l.cfg.decoding, mode)?;
        let toks: Vec<&str> = g.tokens.iter().map(|&t| l.vocab.token(t)).collect();
        let rec = GenRecord {
            text: detokenize(&g.tokens, &l.vocab),
            tree: g.tree.as_ref().map(|t| t.to_labeled(&toks, "X")),
            logp: g.logp,
            truncated: g.truncated,
        };
        out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
        out.push('\n');
    }
    emit(args.output.as_deref(), &out)
}

#[derive(clap::Args, Debug)]
pub struct SurprisalArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// JSON lines `{"text": ..., "regions": [[start, end], ...]}` with
    /// 1-based inclusive word regions, or plain sentences (one region per
    /// word).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Deserialize)]
struct SurprisalItem {
    text: String,
    regions: Option<Vec<(usize, usize)>>,
}

#[derive(Serialize)]
struct Region {
    start: usize,
    end: usize,
    bits: f64,
}

#[derive(Serialize)]
struct SurprisalRecord {
    text: String,
    sentence_logp: f64,
    regions: Vec<Region>,
}

pub fn cmd_surprisal(args: &SurprisalArgs) -> CliResult<()> {
    match args.model.precision()? {
        Precision::F32 => surprisal_typed::<f32>(args),
        Precision::F64 => surprisal_typed::<f64>(args),
    }
}

fn surprisal_typed<R: Real>(args: &SurprisalArgs) -> CliResult<()> {
    let mut l = args.model.load::<R>()?;
    l.cfg.decoding.mode = BeamMode::Word;
    let lines = read_lines(&args.input, false)?;
    let mut out = String::new();
    for (n, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item = if line.trim_start().starts_with('{') {
            serde_json::from_str::<SurprisalItem>(line)
                .map_err(|e| usage(format!("{}:{}: {e}", args.input.display(), n + 1)))?
        } else {
            SurprisalItem { text: line.clone(), regions: None }
        };
        let text = if l.cfg.data.lowercase { item.text.to_lowercase() } else { item.text.clone() };
        let sent = tokenize(&text, &l.vocab, l.cfg.data.tokenize);
        let words = sent.num_words();
        let r = parse(&l.store, &l.model, &sent.ids, &l.cfg.decoding)?;
        // Pieces up to and including each word.
        let mut through = vec![0; words + 1];
        for &w in &sent.word_of {
            through[w + 1] += 1;
        }
        for w in 1..=words {
            through[w] += through[w - 1];
        }
        let regions = item.regions.unwrap_or_else(|| (1..=words).map(|w| (w, w)).collect());
        let mut rec = SurprisalRecord { text: item.text, sentence_logp: r.sentence_logp, regions: Vec::new() };
        for (s, e) in regions {
            if s < 1 || s > e || e > words {
                return Err(runtime(format!("line {}: region ({s}, {e}) outside {words} words", n + 1)));
            }
            let bits = surprisal(&r.prefix_logp, through[s - 1] + 1, through[e])?;
            rec.regions.push(Region { start: s, end: e, bits });
        }
        out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
        out.push('\n');
    }
    emit(args.output.as_deref(), &out)
}
