//! A small probabilistic grammar for generating corpora with known
//! derivations.

use std::collections::BTreeSet;

use rand::Rng;

use super::trees::GoldTree;

#[derive(Clone, Debug)]
pub enum Rhs {
    Binary(&'static str, &'static str),
    /// Rewrite to a word of the named lexical category.
    Lex(&'static str),
}

#[derive(Clone, Debug)]
pub struct Grammar {
    pub start: &'static str,
    pub rules: Vec<(&'static str, f64, Rhs)>,
    pub lexicon: Vec<(&'static str, Vec<&'static str>)>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Derivation {
    Node(String, Box<Derivation>, Box<Derivation>),
    Leaf(String, String, String),
}

impl Derivation {
    fn collect(&self, tree: &mut GoldTree) -> (usize, usize) {
        match self {
            Derivation::Leaf(_, tag, word) => {
                let i = tree.tokens.len();
                tree.tokens.push(word.clone());
                tree.tags.push(Some(tag.clone()));
                tree.punct.push(false);
                tree.spans.insert((i, i));
                (i, i)
            }
            Derivation::Node(_, l, r) => {
                let (i, _) = l.collect(tree);
                let (_, j) = r.collect(tree);
                tree.spans.insert((i, j));
                (i, j)
            }
        }
    }

    pub fn to_gold(&self) -> GoldTree {
        let mut t = GoldTree { spans: BTreeSet::new(), ..Default::default() };
        self.collect(&mut t);
        t
    }

    pub fn to_bracketed(&self) -> String {
        match self {
            Derivation::Leaf(nt, tag, word) if nt == tag => format!("({tag} {word})"),
            Derivation::Leaf(nt, tag, word) => format!("({nt} ({tag} {word}))"),
            Derivation::Node(nt, l, r) => format!("({nt} {} {})", l.to_bracketed(), r.to_bracketed()),
        }
    }

    pub fn words(&self) -> Vec<String> {
        self.to_gold().tokens
    }
}

impl Grammar {
    /// Ten binary rules over disjoint lexical categories, mixing left- and
    /// right-branching attachments.
    pub fn toy() -> Self {
        use Rhs::*;
        Grammar {
            start: "S",
            rules: vec![
                ("S", 0.85, Binary("NP", "VP")),
                ("S", 0.15, Binary("S", "CS")),
                ("CS", 1.0, Binary("C", "S")),
                ("NP", 0.40, Binary("D", "N")),
                ("NP", 0.20, Binary("D", "NB")),
                ("NP", 0.15, Binary("NP", "PP")),
                ("NP", 0.25, Lex("PRON")),
                ("NB", 1.0, Binary("A", "N")),
                ("PP", 1.0, Binary("P", "NP")),
                ("VP", 0.45, Binary("V", "NP")),
                ("VP", 0.20, Binary("VP", "PP")),
                ("VP", 0.35, Lex("VI")),
                ("D", 1.0, Lex("D")),
                ("N", 1.0, Lex("N")),
                ("A", 1.0, Lex("A")),
                ("V", 1.0, Lex("V")),
                ("P", 1.0, Lex("P")),
                ("C", 1.0, Lex("C")),
            ],
            lexicon: vec![
                ("D", vec!["the", "a", "every", "some", "this"]),
                ("N", vec!["dog", "cat", "bird", "child", "farmer", "house", "river", "stone"]),
                ("A", vec!["small", "old", "red", "quiet", "happy"]),
                ("V", vec!["sees", "likes", "chases", "finds", "holds"]),
                ("VI", vec!["sleeps", "runs", "waits", "sings"]),
                ("P", vec!["near", "with", "under", "behind"]),
                ("C", vec!["and", "but", "while"]),
                ("PRON", vec!["she", "he", "they", "it"]),
            ],
        }
    }

    pub fn vocabulary(&self) -> Vec<&'static str> {
        self.lexicon.iter().flat_map(|(_, ws)| ws.iter().copied()).collect()
    }

    fn expand(&self, nt: &str, rng: &mut impl Rng, budget: &mut isize) -> Option<Derivation> {
        *budget -= 1;
        if *budget < 0 {
            return None;
        }
        let opts: Vec<&(&str, f64, Rhs)> = self.rules.iter().filter(|r| r.0 == nt).collect();
        let total: f64 = opts.iter().map(|r| r.1).sum();
        let mut u = rng.random::<f64>() * total;
        let mut pick = opts[opts.len() - 1];
        for r in &opts {
            if u < r.1 {
                pick = r;
                break;
            }
            u -= r.1;
        }
        match &pick.2 {
            Rhs::Binary(a, b) => {
                let l = self.expand(a, rng, budget)?;
                let r = self.expand(b, rng, budget)?;
                Some(Derivation::Node(nt.to_string(), Box::new(l), Box::new(r)))
            }
            Rhs::Lex(cat) => {
                let words = &self.lexicon.iter().find(|(c, _)| c == cat)?.1;
                let w = words[rng.random_range(0..words.len())];
                Some(Derivation::Leaf(nt.to_string(), cat.to_string(), w.to_string()))
            }
        }
    }

    /// Samples a derivation with between `min_len` and `max_len` words
    /// (rejection sampling).
    pub fn sample(&self, rng: &mut impl Rng, min_len: usize, max_len: usize) -> Derivation {
        loop {
            let mut budget = 4 * max_len as isize;
            if let Some(d) = self.expand(self.start, rng, &mut budget) {
                let n = d.words().len();
                if (min_len..=max_len).contains(&n) {
                    return d;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::trees::parse_bracketed;
    use rand::SeedableRng;

    #[test]
    fn toy_grammar_has_ten_binary_rules_and_disjoint_lexicon() {
        let g = Grammar::toy();
        let binary: BTreeSet<_> = g
            .rules
            .iter()
            .filter_map(|(nt, _, r)| match r {
                Rhs::Binary(a, b) if !matches!(*nt, "D" | "N" | "A" | "V" | "P" | "C") => Some((nt, a, b)),
                _ => None,
            })
            .collect();
        assert_eq!(binary.len(), 10);
        let words = g.vocabulary();
        let unique: BTreeSet<_> = words.iter().collect();
        assert_eq!(unique.len(), words.len());
    }

    #[test]
    fn samples_respect_length_and_round_trip_through_brackets() {
        let g = Grammar::toy();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let d = g.sample(&mut rng, 2, 20);
            let gold = d.to_gold();
            assert!((2..=20).contains(&gold.tokens.len()));
            let parsed = parse_bracketed(&d.to_bracketed(), "s", &[]).unwrap();
            assert_eq!(parsed[0].spans, gold.spans);
            assert_eq!(parsed[0].tokens, gold.tokens);
        }
    }
}
