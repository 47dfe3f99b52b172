use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tokenize::TokenizedSentence;

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub sentences: Vec<TokenizedSentence>,
    /// Length of the longest sentence, i.e. the padded width.
    pub padded_len: usize,
}

impl Batch {
    pub fn tokens(&self) -> usize {
        self.sentences.iter().map(|s| s.len()).sum()
    }
}

/// Length-bucketed batches holding at most `max_tokens` padded tokens each
/// (a single over-long sentence still gets its own batch). Sentences longer
/// than `max_len` are truncated with a warning; empty ones are dropped. The
/// batch order is shuffled deterministically from `seed`.
pub fn batch_iter(
    data: &[TokenizedSentence],
    max_tokens: usize,
    max_len: usize,
    seed: u64,
) -> impl Iterator<Item = Batch> {
    let mut sents: Vec<TokenizedSentence> = Vec::with_capacity(data.len());
    for (i, s) in data.iter().enumerate() {
        if s.is_empty() {
            continue;
        }
        if s.len() > max_len {
            log::warn!("sentence {i} has {} tokens, truncated to {max_len}", s.len());
            sents.push(s.truncated(max_len));
        } else {
            sents.push(s.clone());
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Shuffle first so equal-length sentences are mixed, then a stable sort
    // groups lengths.
    sents.shuffle(&mut rng);
    sents.sort_by_key(|s| s.len());
    let mut batches = Vec::new();
    let mut cur: Vec<TokenizedSentence> = Vec::new();
    for s in sents {
        let width = s.len();
        if !cur.is_empty() && (cur.len() + 1) * width > max_tokens {
            let padded_len = cur.last().map_or(0, |x| x.len());
            batches.push(Batch { sentences: std::mem::take(&mut cur), padded_len });
        }
        cur.push(s);
    }
    if !cur.is_empty() {
        let padded_len = cur.last().map_or(0, |x| x.len());
        batches.push(Batch { sentences: cur, padded_len });
    }
    batches.shuffle(&mut rng);
    batches.into_iter()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sent(n: usize) -> TokenizedSentence {
        TokenizedSentence::from_ids((0..n).map(|i| 5 + i).collect())
    }

    #[test]
    fn short_sentences_share_a_batch() {
        let b: Vec<_> = batch_iter(&[sent(3), sent(5)], 16, 64, 0).collect();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].padded_len, 5);
    }

    #[test]
    fn order_is_deterministic_under_seed() {
        let data: Vec<_> = (1..40).map(|i| sent(i % 9 + 1)).collect();
        let a: Vec<_> = batch_iter(&data, 12, 64, 7).collect();
        let b: Vec<_> = batch_iter(&data, 12, 64, 7).collect();
        assert_eq!(a, b);
        let total: usize = a.iter().map(|b| b.sentences.len()).sum();
        assert_eq!(total, 39);
        assert!(a.iter().all(|b| b.sentences.len() * b.padded_len <= 12 || b.sentences.len() == 1));
    }

    #[test]
    fn empty_dataset_gives_empty_stream() {
        assert_eq!(batch_iter(&[], 16, 64, 0).count(), 0);
    }

    #[test]
    fn long_sentences_are_truncated() {
        let b: Vec<_> = batch_iter(&[sent(10)], 100, 4, 0).collect();
        assert_eq!(b[0].sentences[0].len(), 4);
    }
}
