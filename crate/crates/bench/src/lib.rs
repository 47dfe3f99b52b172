//! Shared fixtures for the criterion benchmarks.

use std::sync::Arc;

use gpst_core::composition::{timing_model, MergeSchedule};
use gpst_core::corpus::TokenizedSentence;
use gpst_core::numerics::{Backend, Eager, ParamStore, Tensor};
use gpst_core::Gpst;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A random model plus one sentence, its leaves and its merge schedule.
pub struct ChartFixture {
    pub store: ParamStore<f32>,
    pub model: Gpst,
    pub leaves: Arc<Tensor<f32>>,
    pub schedule: MergeSchedule,
}

impl ChartFixture {
    pub fn new(n: usize, width: usize) -> Self {
        let (store, model) = timing_model::<f32>(width, n.max(8), 0).expect("model builds");
        let ids = random_ids(n, model.cfg.vocab_size, n as u64);
        let (leaves, schedule) = {
            let mut g = Eager::new(&store);
            let leaves = model.leaves(&mut g, &ids).expect("leaves");
            let v = model.comp.parser.scores(&mut g, &leaves).expect("scores");
            let vals: Vec<f64> = g.value(&v).data().iter().map(|&x| x as f64).collect();
            (leaves, MergeSchedule::build(&vals, &[], model.comp.cfg.window).expect("schedule"))
        };
        ChartFixture { store, model, leaves, schedule }
    }
}

pub fn random_ids(n: usize, vocab: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(5..vocab)).collect()
}

pub fn random_batch(sentences: usize, max_len: usize, vocab: usize, seed: u64) -> Vec<TokenizedSentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..sentences)
        .map(|_| {
            let n = rng.random_range(2..=max_len);
            TokenizedSentence::from_ids((0..n).map(|_| rng.random_range(5..vocab)).collect())
        })
        .collect()
}
