//! Commands that need no trained model: evaluation, checks, benchmarks
//! and data preparation.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use gpst_core::composition::{fit_exponent, time_charts, timing_model};
use gpst_core::corpus::{parse_bracketed, read_bracketed_trees, synthetic::Grammar, Vocab};
use gpst_core::evaluation::{corpus_f1, left_branching_spans, right_branching_spans, CorpusF1, F1Config};
use gpst_core::training::{objective_suite, GRAD_TOLERANCE};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{runtime, usage, CliResult};
use crate::run::{emit, read_lines, require_file, write_atomic};

#[derive(clap::Args, Debug)]
pub struct EvalArgs {
    /// Predicted bracketed trees, one per sentence.
    #[arg(long)]
    pub pred: PathBuf,
    /// Gold bracketed trees in the same order.
    #[arg(long)]
    pub gold: PathBuf,
    /// JSON report; stdout when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Comma-separated POS tags removed before scoring.
    #[arg(long, value_delimiter = ',')]
    pub punct_tags: Option<Vec<String>>,
    /// Score single-word and whole-sentence spans too.
    #[arg(long)]
    pub keep_trivial: bool,
}

#[derive(Serialize)]
struct EvalReport {
    #[serde(flatten)]
    f1: CorpusF1,
    right_branching_f1: f64,
    left_branching_f1: f64,
    config: F1Config,
}

pub fn cmd_eval_f1(args: &EvalArgs) -> CliResult<()> {
    require_file(&args.pred, "predictions")?;
    require_file(&args.gold, "gold trees")?;
    let mut cfg = F1Config { exclude_trivial: !args.keep_trivial, ..Default::default() };
    if let Some(t) = &args.punct_tags {
        cfg.punct_tags = t.clone();
    }
    let tags: Vec<&str> = cfg.punct_tags.iter().map(String::as_str).collect();
    let gold = read_bracketed_trees(&args.gold, &tags)?;
    let text = fs::read_to_string(&args.pred).map_err(|e| runtime(format!("{}: {e}", args.pred.display())))?;
    let pred = parse_bracketed(&text, &args.pred.display().to_string(), &[])?;
    if pred.len() != gold.len() {
        return Err(runtime(format!("{} predicted trees for {} gold trees", pred.len(), gold.len())));
    }
    for (i, (p, g)) in pred.iter().zip(&gold).enumerate() {
        if p.tokens.len() != g.tokens.len() {
            return Err(runtime(format!(
                "tree {}: prediction has {} tokens, gold {}",
                i + 1,
                p.tokens.len(),
                g.tokens.len()
            )));
        }
    }
    let spans: Vec<BTreeSet<_>> = pred.into_iter().map(|t| t.spans).collect();
    let f1 = corpus_f1(&spans, &gold, &cfg)?;
    let rb: Vec<_> = gold.iter().map(|g| right_branching_spans(g.tokens.len())).collect();
    let lb: Vec<_> = gold.iter().map(|g| left_branching_spans(g.tokens.len())).collect();
    let report = EvalReport {
        right_branching_f1: corpus_f1(&rb, &gold, &cfg)?.mean_f1,
        left_branching_f1: corpus_f1(&lb, &gold, &cfg)?.mean_f1,
        f1,
        config: cfg,
    };
    eprintln!("mean F1 {:.4} over {} sentences", report.f1.mean_f1, report.f1.sentences);
    emit(args.output.as_deref(), &(serde_json::to_string_pretty(&report).expect("report serializes") + "\n"))
}

#[derive(clap::Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Random sentences of 2 to 6 tokens.
    #[arg(long, default_value_t = 3)]
    pub sentences: usize,
    /// Parameter coordinates probed per objective and sentence.
    #[arg(long, default_value_t = 60)]
    pub coords: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// Exit status 0 exactly when every relative error is below the tolerance.
pub fn cmd_gradcheck(args: &GradcheckArgs) -> CliResult<()> {
    if args.sentences == 0 || args.coords == 0 {
        return Err(usage("--sentences and --coords must be positive"));
    }
    let checks = objective_suite(args.seed, args.sentences, args.coords, args.eps)?;
    let worst = checks.iter().map(|c| c.max_rel_err).fold(0.0, f64::max);
    for c in &checks {
        eprintln!("{:<9} n={} max rel err {:.3e}", format!("{:?}", c.objective).to_lowercase(), c.sentence.len(), c.max_rel_err);
    }
    if let Some(p) = &args.output {
        write_atomic(p, &serde_json::to_string_pretty(&checks).expect("checks serialize"))?;
    }
    if worst < GRAD_TOLERANCE {
        println!("gradcheck passed: max rel err {worst:.3e}");
        Ok(())
    } else {
        Err(runtime(format!("gradcheck failed: max rel err {worst:.3e} >= {GRAD_TOLERANCE:e}")))
    }
}

#[derive(clap::Args, Debug)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "128,256,512,1024")]
    pub lengths: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    pub reps: usize,
    #[arg(long, default_value_t = 16)]
    pub width: usize,
    /// Longest sentence for the cubic chart.
    #[arg(long, default_value_t = 512)]
    pub full_max: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

pub fn cmd_bench(args: &BenchArgs) -> CliResult<()> {
    let max = *args.lengths.iter().max().ok_or_else(|| usage("--lengths is empty"))?;
    if args.lengths.contains(&0) || args.width == 0 {
        return Err(usage("lengths and width must be positive"));
    }
    let (store, model) = timing_model::<f32>(args.width, max, args.seed)?;
    let mut rows = Vec::new();
    for &n in &args.lengths {
        let t = time_charts(&store, &model, n, args.reps, n <= args.full_max, args.seed.wrapping_add(n as u64))?;
        eprintln!(
            "n={n:<5} pruned {:.4}s ({} cells, {} steps)  full {}  speedup {}",
            t.pruned_secs,
            t.pruned_cells,
            t.pruned_steps,
            t.full_secs.map_or("-".into(), |s| format!("{s:.4}s")),
            t.speedup().map_or("-".into(), |s| format!("{s:.1}x"))
        );
        rows.push(t);
    }
    let pruned: Vec<_> = rows.iter().map(|t| (t.n, t.pruned_secs)).collect();
    let full: Vec<_> = rows.iter().filter_map(|t| t.full_secs.map(|s| (t.n, s))).collect();
    let report = serde_json::json!({
        "width": args.width,
        "reps": args.reps,
        "timings": rows,
        "pruned_exponent": (pruned.len() >= 2).then(|| fit_exponent(&pruned)),
        "full_exponent": (full.len() >= 2).then(|| fit_exponent(&full)),
    });
    emit(args.output.as_deref(), &(serde_json::to_string_pretty(&report).expect("report serializes") + "\n"))
}

#[derive(clap::Args, Debug)]
pub struct SynthArgs {
    /// Receives corpus.txt and gold.trees.
    #[arg(long)]
    pub output_dir: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub sentences: usize,
    #[arg(long, default_value_t = 2)]
    pub min_len: usize,
    #[arg(long, default_value_t = 20)]
    pub max_len: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Samples sentences with their derivations from the built-in grammar.
pub fn cmd_synth(args: &SynthArgs) -> CliResult<()> {
    if args.min_len == 0 || args.min_len > args.max_len {
        return Err(usage("need 1 <= --min-len <= --max-len"));
    }
    let grammar = Grammar::toy();
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let (mut text, mut trees) = (String::new(), String::new());
    for _ in 0..args.sentences {
        let d = grammar.sample(&mut rng, args.min_len, args.max_len);
        writeln!(text, "{}", d.words().join(" ")).expect("string write");
        writeln!(trees, "{}", d.to_bracketed()).expect("string write");
    }
    write_atomic(&args.output_dir.join("corpus.txt"), &text)?;
    write_atomic(&args.output_dir.join("gold.trees"), &trees)?;
    Ok(())
}

#[derive(clap::Args, Debug)]
pub struct VocabArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 30_000)]
    pub limit: usize,
    #[arg(long, default_value_t = 1)]
    pub min_freq: usize,
    /// Add character pieces for wordpiece tokenization.
    #[arg(long)]
    pub wordpiece: bool,
    #[arg(long)]
    pub lowercase: bool,
}

pub fn cmd_vocab(args: &VocabArgs) -> CliResult<()> {
    let lines = read_lines(&args.corpus, args.lowercase)?;
    let it = lines.iter().map(String::as_str);
    let v = if args.wordpiece {
        Vocab::build_wordpiece(it, args.limit, args.min_freq)?
    } else {
        Vocab::build(it, args.limit, args.min_freq)?
    };
    write_atomic(&args.output, &v.to_text())?;
    eprintln!("{} entries", v.len());
    Ok(())
}
