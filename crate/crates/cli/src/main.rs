//! `gpst`: train, decode and evaluate syntactic language models.

mod config;
mod decode;
mod error;
mod run;
mod tools;
mod train;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::CliResult;

#[derive(Parser, Debug)]
#[command(name = "gpst", version, about = "Unsupervised syntactic language modelling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model; writes a run directory.
    Train(train::TrainArgs),
    /// Write a bracketed tree for every input sentence.
    Parse(decode::ParseArgs),
    /// Generate sentences with their trees.
    Generate(decode::GenerateArgs),
    /// Word-region surprisal in bits.
    Surprisal(decode::SurprisalArgs),
    /// Unlabeled bracketing F1 of predicted against gold trees.
    EvalF1(tools::EvalArgs),
    /// Finite-difference check of every training objective.
    Gradcheck(tools::GradcheckArgs),
    /// Wall time of the cubic and the pruned chart across lengths.
    Bench(tools::BenchArgs),
    /// Sample a corpus with gold derivations from the built-in grammar.
    Synth(tools::SynthArgs),
    /// Build a vocabulary file from a corpus.
    Vocab(tools::VocabArgs),
}

fn dispatch(cmd: &Command) -> CliResult<()> {
    match cmd {
        Command::Train(a) => train::run(a),
        Command::Parse(a) => decode::cmd_parse(a),
        Command::Generate(a) => decode::cmd_generate(a),
        Command::Surprisal(a) => decode::cmd_surprisal(a),
        Command::EvalF1(a) => tools::cmd_eval_f1(a),
        Command::Gradcheck(a) => tools::cmd_gradcheck(a),
        Command::Bench(a) => tools::cmd_bench(a),
        Command::Synth(a) => tools::cmd_synth(a),
        Command::Vocab(a) => tools::cmd_vocab(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    // clap exits with status 2 on malformed arguments.
    let cli = Cli::parse();
    match dispatch(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
