//! Bracketed (s-expression) constituency trees.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// POS tags treated as punctuation by default.
pub const DEFAULT_PUNCT_TAGS: &[&str] = &[",", ".", ":", "``", "''", "-LRB-", "-RRB-"];

/// Unlabeled view of a gold tree. Spans are 0-based and inclusive.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct GoldTree {
    pub tokens: Vec<String>,
    pub tags: Vec<Option<String>>,
    pub spans: BTreeSet<(usize, usize)>,
    pub punct: Vec<bool>,
}

#[derive(Debug, PartialEq)]
enum Tok<'a> {
    Open,
    Close,
    Atom(&'a str),
}

fn lex(text: &str) -> Vec<(Tok<'_>, usize)> {
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let mut rest = line;
        while let Some(c) = rest.chars().next() {
            match c {
                '(' => {
                    out.push((Tok::Open, ln + 1));
                    rest = &rest[1..];
                }
                ')' => {
                    out.push((Tok::Close, ln + 1));
                    rest = &rest[1..];
                }
                c if c.is_whitespace() => rest = &rest[c.len_utf8()..],
                _ => {
                    let end = rest
                        .find(|ch: char| ch == '(' || ch == ')' || ch.is_whitespace())
                        .unwrap_or(rest.len());
                    out.push((Tok::Atom(&rest[..end]), ln + 1));
                    rest = &rest[end..];
                }
            }
        }
    }
    out
}

struct Parser<'a> {
    toks: Vec<(Tok<'a>, usize)>,
    pos: usize,
    source: String,
    punct_tags: Vec<String>,
}

impl<'a> Parser<'a> {
    fn err(&self, line: usize, msg: impl Into<String>) -> Error {
        Error::Parse { path: self.source.clone(), line, msg: msg.into() }
    }

    /// Parses one node after its opening bracket; returns whether it
    /// covered any token.
    fn node(&mut self, tree: &mut GoldTree, open_line: usize) -> Result<bool> {
        let label = match self.toks.get(self.pos) {
            Some((Tok::Atom(a), _)) => {
                self.pos += 1;
                Some(*a)
            }
            _ => None,
        };
        if label == Some("-NONE-") {
            // Trace: skip to the matching bracket.
            let mut depth = 1;
            while depth > 0 {
                match self.toks.get(self.pos) {
                    Some((Tok::Open, _)) => depth += 1,
                    Some((Tok::Close, _)) => depth -= 1,
                    Some(_) => {}
                    None => return Err(self.err(open_line, "unbalanced brackets: missing ')'")),
                }
                self.pos += 1;
            }
            return Ok(false);
        }
        let start = tree.tokens.len();
        let mut atoms = Vec::new();
        let mut subtrees = false;
        loop {
            match self.toks.get(self.pos) {
                None => return Err(self.err(open_line, "unbalanced brackets: missing ')'")),
                Some((Tok::Close, _)) => {
                    self.pos += 1;
                    break;
                }
                Some((Tok::Open, l)) => {
                    let l = *l;
                    self.pos += 1;
                    subtrees = true;
                    self.node(tree, l)?;
                }
                Some((Tok::Atom(a), _)) => {
                    atoms.push(tree.tokens.len());
                    tree.tokens.push(a.to_string());
                    tree.tags.push(None);
                    tree.punct.push(false);
                    self.pos += 1;
                }
            }
        }
        if atoms.len() == 1 && !subtrees {
            if let Some(tag) = label {
                let i = atoms[0];
                tree.tags[i] = Some(tag.to_string());
                tree.punct[i] = self.punct_tags.iter().any(|p| p == tag);
            }
        }
        let end = tree.tokens.len();
        if end > start {
            tree.spans.insert((start, end - 1));
        }
        Ok(end > start)
    }
}

/// Parses every top-level bracketed tree in `text`.
pub fn parse_bracketed(text: &str, source: &str, punct_tags: &[&str]) -> Result<Vec<GoldTree>> {
    let mut p = Parser {
        toks: lex(text),
        pos: 0,
        source: source.to_string(),
        punct_tags: punct_tags.iter().map(|s| s.to_string()).collect(),
    };
    let mut trees = Vec::new();
    while p.pos < p.toks.len() {
        match p.toks[p.pos] {
            (Tok::Open, l) => {
                p.pos += 1;
                let mut tree = GoldTree::default();
                p.node(&mut tree, l)?;
                if !tree.tokens.is_empty() {
                    trees.push(tree);
                }
            }
            (Tok::Close, l) => return Err(p.err(l, "unbalanced brackets: unexpected ')'")),
            (Tok::Atom(a), l) => return Err(p.err(l, format!("token {a:?} outside of brackets"))),
        }
    }
    Ok(trees)
}

pub fn read_bracketed_trees(path: &Path, punct_tags: &[&str]) -> Result<Vec<GoldTree>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_bracketed(&text, &path.display().to_string(), punct_tags)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(text: &str) -> GoldTree {
        let mut t = parse_bracketed(text, "t", DEFAULT_PUNCT_TAGS).unwrap();
        assert_eq!(t.len(), 1);
        t.pop().unwrap()
    }

    #[test]
    fn reads_spans() {
        let t = one("(S (NP a) (VP b c))");
        assert_eq!(t.tokens, ["a", "b", "c"]);
        assert_eq!(t.spans, BTreeSet::from([(0, 0), (1, 2), (0, 2)]));
    }

    #[test]
    fn single_token_tree() {
        let t = one("(NP a)");
        assert_eq!(t.spans, BTreeSet::from([(0, 0)]));
        assert_eq!(t.tags, [Some("NP".to_string())]);
    }

    #[test]
    fn unary_chains_collapse() {
        let t = one("(S (NP (NN a)) (VP (VB b)))");
        assert_eq!(t.spans, BTreeSet::from([(0, 0), (1, 1), (0, 1)]));
    }

    #[test]
    fn punctuation_and_traces() {
        let t = one("( (S (NP (DT the) (NN dog)) (VP (VBD ran) (NP (-NONE- *T*))) (. .)) )");
        assert_eq!(t.tokens, ["the", "dog", "ran", "."]);
        assert_eq!(t.punct, [false, false, false, true]);
        assert!(t.spans.contains(&(2, 2)));
        assert!(t.spans.contains(&(0, 3)));
    }

    #[test]
    fn multiple_trees_across_lines() {
        let trees = parse_bracketed("(S a b)\n(S\n  (A c)\n  (B d))\n", "t", &[]).unwrap();
        assert_eq!(trees.len(), 2);
        assert_eq!(trees[1].tokens, ["c", "d"]);
    }

    #[test]
    fn unbalanced_reports_line() {
        let err = parse_bracketed("(S a b)\n(S (A c)\n", "gold.txt", &[]).unwrap_err();
        match err {
            Error::Parse { path, line, .. } => {
                assert_eq!(path, "gold.txt");
                assert_eq!(line, 2);
            }
            e => panic!("unexpected {e}"),
        }
        let err = parse_bracketed("(S a))", "g", &[]).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }
}
