use criterion::{criterion_group, criterion_main, Criterion};
use gpst_bench::random_batch;
use gpst_core::decoding::{parse, DecodeConfig};
use gpst_core::numerics::ParamStore;
use gpst_core::training::{train_step, TrainConfig};
use gpst_core::{Gpst, ModelConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn model() -> (ParamStore<f32>, Gpst) {
    let mut store = ParamStore::new();
    let m = Gpst::new(&mut store, &ModelConfig::tiny(40), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    (store, m)
}

fn training_step(c: &mut Criterion) {
    let (store, m) = model();
    let batch = random_batch(16, 20, 40, 1);
    let cfg = TrainConfig::default();
    c.bench_function("train_step/16x20", |b| {
        b.iter_batched(
            || store.clone(),
            |mut s| train_step(&mut s, &m, &batch, &cfg).unwrap(),
            criterion::BatchSize::LargeInput,
        )
    });
}

fn word_beam_parse(c: &mut Criterion) {
    let (store, m) = model();
    let sent = random_batch(1, 20, 40, 2).remove(0);
    for beam in [5, 20] {
        let cfg = DecodeConfig { beam, ..Default::default() };
        c.bench_function(&format!("parse/beam{beam}"), |b| b.iter(|| parse(&store, &m, &sent.ids, &cfg).unwrap()));
    }
}

criterion_group!(benches, training_step, word_beam_parse);
criterion_main!(benches);
