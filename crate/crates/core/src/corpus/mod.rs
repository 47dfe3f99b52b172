//! Vocabulary, tokenization, gold trees, batching and synthetic corpora.

pub mod batch;
pub mod synthetic;
pub mod tokenize;
pub mod trees;
pub mod vocab;

pub use batch::{batch_iter, Batch};
pub use tokenize::{detokenize, tokenize, TokenizeMode, TokenizedSentence};
pub use trees::{parse_bracketed, read_bracketed_trees, GoldTree, DEFAULT_PUNCT_TAGS};
pub use vocab::Vocab;
