//! Word-synchronous beam search for generation, parsing and surprisal.

pub mod beam;
pub mod search;

pub use beam::{action_beam_step, log_sum, word_beam_step, Hypothesis, TokenChoice};
pub use search::{generate, parse, surprisal, BeamMode, DecodeConfig, GenMode, Generation, ParseResult};
