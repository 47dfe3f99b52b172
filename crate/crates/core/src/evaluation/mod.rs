//! Bracketing F1 and brute-force oracles.

pub mod f1;
pub mod oracle;

pub use f1::{
    collapse_pieces, corpus_f1, left_branching_spans, remove_tokens, right_branching_spans, sentence_f1, to_word_spans, tree_spans,
    CorpusF1, F1Config, LengthBucket,
};
pub use oracle::{oracle_enumerate_actions, oracle_inside, oracle_outside, sequence_logp, Enumeration, OracleCell};
