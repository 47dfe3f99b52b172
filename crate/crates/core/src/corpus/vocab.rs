use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const COMP: usize = 4;

pub const RESERVED: [&str; 5] = ["<pad>", "<unk>", "<bos>", "<eos>", "<comp>"];
pub const CONT_PREFIX: &str = "##";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocab {
    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        for (i, r) in RESERVED.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*r) {
                return Err(Error::Config(format!("reserved token {r} must have id {i}")));
            }
        }
        Ok(Vocab { tokens, ids })
    }

    /// Keeps the `limit` most frequent whitespace tokens occurring at least
    /// `min_freq` times. Ties go to the lexicographically smaller token.
    pub fn build<'a>(
        lines: impl IntoIterator<Item = &'a str>,
        limit: usize,
        min_freq: usize,
    ) -> Result<Self> {
        let counts = count(lines);
        if counts.is_empty() {
            return Err(Error::Config("cannot build a vocabulary from an empty corpus".into()));
        }
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(top_k(&counts, limit, min_freq));
        Self::from_tokens(tokens)
    }

    /// Like [`Vocab::build`] but also adds every observed character both as
    /// a word-initial piece and as a `##` continuation, so greedy wordpiece
    /// segmentation never falls back to `<unk>` on seen characters.
    pub fn build_wordpiece<'a>(
        lines: impl IntoIterator<Item = &'a str>,
        limit: usize,
        min_freq: usize,
    ) -> Result<Self> {
        let counts = count(lines);
        if counts.is_empty() {
            return Err(Error::Config("cannot build a vocabulary from an empty corpus".into()));
        }
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let words = top_k(&counts, limit, min_freq);
        let mut chars: Vec<char> = counts.keys().flat_map(|w| w.chars()).collect();
        chars.sort_unstable();
        chars.dedup();
        let mut seen: std::collections::HashSet<String> = words.iter().cloned().collect();
        tokens.extend(words);
        for c in chars {
            for piece in [c.to_string(), format!("{CONT_PREFIX}{c}")] {
                if seen.insert(piece.clone()) {
                    tokens.push(piece);
                }
            }
        }
        Self::from_tokens(tokens)
    }

    /// A vocabulary over exactly the given tokens, in order, after the
    /// reserved ones.
    pub fn from_words<S: AsRef<str>>(words: &[S]) -> Result<Self> {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(words.iter().map(|w| w.as_ref().to_string()));
        Self::from_tokens(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> usize {
        self.id(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map_or(RESERVED[UNK], String::as_str)
    }

    pub fn to_text(&self) -> String {
        self.tokens.iter().enumerate().map(|(i, t)| format!("{t}\t{i}\n")).collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let parse_err = |msg: &str| Error::Parse {
                path: "<vocab>".into(),
                line: n + 1,
                msg: msg.to_string(),
            };
            let (tok, id) = line.rsplit_once('\t').ok_or_else(|| parse_err("expected token<TAB>id"))?;
            let id: usize = id.trim().parse().map_err(|_| parse_err("id is not an integer"))?;
            entries.push((id, tok.to_string()));
        }
        entries.sort();
        if entries.iter().enumerate().any(|(i, (id, _))| *id != i) {
            return Err(Error::Config("vocabulary ids must be dense from 0".into()));
        }
        Self::from_tokens(entries.into_iter().map(|(_, t)| t).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text).map_err(|e| match e {
            Error::Parse { line, msg, .. } => Error::Parse { path: path.display().to_string(), line, msg },
            other => other,
        })
    }
}

fn count<'a>(lines: impl IntoIterator<Item = &'a str>) -> HashMap<String, usize> {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for line in lines {
        for w in line.split_whitespace() {
            if RESERVED.contains(&w) {
                continue;
            }
            *counts.entry(w.to_string()).or_default() += 1;
        }
    }
    counts
}

fn top_k(counts: &HashMap<String, usize>, limit: usize, min_freq: usize) -> Vec<String> {
    let mut ranked: Vec<(&String, usize)> =
        counts.iter().filter(|(_, &c)| c >= min_freq).map(|(w, &c)| (w, c)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.into_iter().take(limit).map(|(w, _)| w.clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keeps_reserved_and_frequent_tokens() {
        let v = Vocab::build(["a a b"], 10, 1).unwrap();
        assert_eq!(v.len(), 7);
        assert_eq!(v.id("a"), Some(5));
        assert_eq!(v.id("b"), Some(6));
        assert_eq!(v.id("<eos>"), Some(EOS));
    }

    #[test]
    fn limit_drops_rare_tokens_to_unk() {
        let v = Vocab::build(["a a b"], 1, 1).unwrap();
        assert_eq!(v.id_or_unk("a"), 5);
        assert_eq!(v.id_or_unk("b"), UNK);
    }

    #[test]
    fn ties_break_lexicographically() {
        let v = Vocab::build(["z y x y z x"], 2, 1).unwrap();
        assert_eq!(v.token(5), "x");
        assert_eq!(v.token(6), "y");
        assert_eq!(v.id("z"), None);
    }

    #[test]
    fn min_frequency_filters() {
        let v = Vocab::build(["a a b"], 10, 2).unwrap();
        assert_eq!(v.id("b"), None);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(Vocab::build(["", "  "], 10, 1).is_err());
    }

    #[test]
    fn text_round_trip() {
        let v = Vocab::build_wordpiece(["the cat sat", "cats"], 3, 1).unwrap();
        assert_eq!(Vocab::from_text(&v.to_text()).unwrap(), v);
    }

    #[test]
    fn rejects_sparse_ids() {
        let text = "<pad>\t0\n<unk>\t1\n<bos>\t2\n<eos>\t3\n<comp>\t4\na\t6\n";
        assert!(Vocab::from_text(text).is_err());
    }
}
