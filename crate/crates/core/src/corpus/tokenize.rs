use serde::{Deserialize, Serialize};

use super::vocab::{Vocab, CONT_PREFIX, UNK};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenizeMode {
    Whitespace,
    Wordpiece,
}

/// Token ids plus the word-piece groups that parsing must keep together.
/// Spans are 0-based and inclusive.
#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenizedSentence {
    pub ids: Vec<usize>,
    pub atomic: Vec<(usize, usize)>,
    /// Index of the source word each token came from.
    pub word_of: Vec<usize>,
}

impl TokenizedSentence {
    pub fn from_ids(ids: Vec<usize>) -> Self {
        let word_of = (0..ids.len()).collect();
        TokenizedSentence { ids, atomic: Vec::new(), word_of }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn num_words(&self) -> usize {
        self.word_of.last().map_or(0, |w| w + 1)
    }

    /// Keeps the first `n` tokens, dropping atomic spans that would cross
    /// the cut.
    pub fn truncated(&self, n: usize) -> Self {
        if n >= self.len() {
            return self.clone();
        }
        TokenizedSentence {
            ids: self.ids[..n].to_vec(),
            atomic: self.atomic.iter().copied().filter(|&(_, j)| j < n).collect(),
            word_of: self.word_of[..n].to_vec(),
        }
    }
}

pub fn tokenize(line: &str, vocab: &Vocab, mode: TokenizeMode) -> TokenizedSentence {
    let mut out = TokenizedSentence::default();
    for (w, word) in line.split_whitespace().enumerate() {
        let start = out.ids.len();
        match mode {
            TokenizeMode::Whitespace => out.ids.push(vocab.id_or_unk(word)),
            TokenizeMode::Wordpiece => out.ids.extend(wordpiece(word, vocab)),
        }
        let end = out.ids.len() - 1;
        out.word_of.extend(std::iter::repeat_n(w, end + 1 - start));
        if end > start {
            out.atomic.push((start, end));
        }
    }
    out
}

/// Greedy longest-match segmentation. A word with any unmatched remainder
/// becomes a single `<unk>`.
fn wordpiece(word: &str, vocab: &Vocab) -> Vec<usize> {
    let chars: Vec<char> = word.chars().collect();
    let mut pieces = Vec::new();
    let mut start = 0;
    while start < chars.len() {
        let mut found = None;
        for end in (start + 1..=chars.len()).rev() {
            let body: String = chars[start..end].iter().collect();
            let cand = if start == 0 { body } else { format!("{CONT_PREFIX}{body}") };
            if let Some(id) = vocab.id(&cand) {
                found = Some((id, end));
                break;
            }
        }
        match found {
            Some((id, end)) => {
                pieces.push(id);
                start = end;
            }
            None => return vec![UNK],
        }
    }
    pieces
}

pub fn detokenize(ids: &[usize], vocab: &Vocab) -> String {
    let mut out = String::new();
    for &id in ids {
        let tok = vocab.token(id);
        match tok.strip_prefix(CONT_PREFIX) {
            Some(rest) if !out.is_empty() => out.push_str(rest),
            _ => {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push_str(tok);
            }
        }
    }
    out
}
