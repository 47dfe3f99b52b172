use std::collections::BTreeSet;

use gpst_core::composition::{inside_full, inside_pruned, outside, ChartOptions, MergeSchedule, Span};
use gpst_core::corpus::parse_bracketed;
use gpst_core::evaluation::{
    corpus_f1, left_branching_spans, oracle_enumerate_actions, oracle_inside, oracle_outside, right_branching_spans,
    sentence_f1, F1Config,
};
use gpst_core::numerics::{Eager, ParamStore};
use gpst_core::{Gpst, ModelConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn set(v: &[Span]) -> BTreeSet<Span> {
    v.iter().copied().collect()
}

fn model(seed: u64) -> (ParamStore<f64>, Gpst) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    let m = Gpst::new(&mut s, &ModelConfig::tiny(12), &mut rng).unwrap();
    (s, m)
}

#[test]
fn sentence_f1_examples() {
    let cfg = F1Config::default();
    // 1-based (1,2) etc. written 0-based over five tokens.
    assert_eq!(sentence_f1(&set(&[(0, 1)]), &set(&[(0, 1)]), 5, &cfg).unwrap(), 1.0);
    assert_eq!(sentence_f1(&set(&[(0, 1)]), &set(&[(1, 2)]), 5, &cfg).unwrap(), 0.0);
    // Over five tokens neither (0, 3) nor (2, 3) is trivial, so P = R = 1/2.
    let f = sentence_f1(&set(&[(0, 1), (0, 3)]), &set(&[(0, 1), (2, 3)]), 5, &cfg).unwrap();
    assert!((f - 0.5).abs() < 1e-12);
    // Over four tokens (0, 3) is the whole sentence and drops out.
    let f = sentence_f1(&set(&[(0, 1), (0, 3)]), &set(&[(0, 1), (2, 3)]), 4, &cfg).unwrap();
    assert!((f - 2.0 / 3.0).abs() < 1e-12);
    assert_eq!(sentence_f1(&set(&[]), &set(&[]), 3, &cfg).unwrap(), 1.0);
    assert_eq!(sentence_f1(&set(&[(0, 1)]), &set(&[]), 3, &cfg).unwrap(), 0.0);
    assert!(sentence_f1(&set(&[(0, 5)]), &set(&[]), 3, &cfg).is_err());
}

#[test]
fn corpus_f1_on_identical_and_branching_trees() {
    let gold = parse_bracketed("(S (NP a b) (VP c (NP d e)) (. .))\n(S x)\n(S (A p) (B q))", "g", &[".", ","]).unwrap();
    let cfg = F1Config::default();
    let pred: Vec<_> = gold.iter().map(|g| g.spans.clone()).collect();
    let r = corpus_f1(&pred, &gold, &cfg).unwrap();
    assert_eq!(r.mean_f1, 1.0);
    assert_eq!(r.sentences, 2);
    assert_eq!(r.skipped, 1);
    assert_eq!(r.by_length[&1].sentences, 2);

    let rb = parse_bracketed("(S a (X b (Y c d)))", "g", &[]).unwrap();
    let r = corpus_f1(&[right_branching_spans(4)], &rb, &cfg).unwrap();
    assert_eq!(r.mean_f1, 1.0);
    let r = corpus_f1(&[left_branching_spans(4)], &rb, &cfg).unwrap();
    assert_eq!(r.mean_f1, 0.0);
    assert!(corpus_f1(&[], &rb, &cfg).is_err());
}

#[test]
fn punctuation_is_removed_before_scoring() {
    let gold = parse_bracketed("(S (NP a b) (, ,) (VP c d))", "g", &[","]).unwrap();
    // The prediction groups the comma with the verb phrase; after removal
    // this is the gold bracket.
    let pred = set(&[(0, 1), (2, 4), (0, 4)]);
    let r = corpus_f1(&[pred], &gold, &F1Config::default()).unwrap();
    assert_eq!(r.mean_f1, 1.0);
}

fn random_leaves(s: &ParamStore<f64>, m: &Gpst, rng: &mut impl Rng, n: usize) -> gpst_core::numerics::Tensor<f64> {
    let ids: Vec<usize> = (0..n).map(|_| rng.random_range(5..12)).collect();
    let mut g = Eager::new(s);
    (*m.leaves(&mut g, &ids).unwrap()).clone()
}

fn check_chart(seed: u64, n: usize, atomic: &[Span]) {
    let (s, m) = model(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
    let leaves = random_leaves(&s, &m, &mut rng, n);
    let mut g = Eager::new(&s);
    let lt = std::sync::Arc::new(leaves.clone());
    let chart = inside_full(&mut g, &m.comp, &lt, atomic, ChartOptions::default()).unwrap();
    let oracle = oracle_inside(&s, &m.comp, &leaves, atomic).unwrap();
    assert_eq!(chart.cell_count(), oracle.len());
    for (span, cell) in &oracle {
        let v = chart.gather_inside(&mut g, &[*span]).unwrap();
        let h = chart.gather_heights(&mut g, &[*span]).unwrap();
        for (a, b) in v.data().iter().zip(&cell.inside) {
            assert!((a - b).abs() < 1e-10, "{span:?}");
        }
        assert!((h.item() - cell.height).abs() < 1e-10);
    }
    let out = outside(&mut g, &m.comp, &chart).unwrap();
    let oo = oracle_outside(&s, &m.comp, &oracle, n).unwrap();
    for (span, v) in &oo {
        let o = out.gather(&mut g, &chart, &[*span]).unwrap();
        for (a, b) in o.data().iter().zip(v) {
            assert!((a - b).abs() < 1e-10, "outside {span:?}");
        }
    }
    let sched = MergeSchedule::unpruned(n, atomic).unwrap();
    let pruned = inside_pruned(&mut g, &m.comp, &lt, &sched, ChartOptions::default()).unwrap();
    let a = chart.gather_inside(&mut g, &[chart.root()]).unwrap();
    let b = pruned.gather_inside(&mut g, &[chart.root()]).unwrap();
    for (x, y) in a.data().iter().zip(b.data()) {
        assert!((x - y).abs() < 1e-10);
    }
}

#[test]
fn charts_match_the_recursive_oracle() {
    for n in 1..=6 {
        check_chart(n as u64, n, &[]);
    }
}

#[test]
fn constrained_charts_match_the_recursive_oracle() {
    check_chart(20, 5, &[(1, 2)]);
    check_chart(21, 6, &[(0, 1), (3, 5)]);
}

#[test]
fn oracle_limits() {
    let (s, m) = model(1);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let leaves = random_leaves(&s, &m, &mut rng, 9);
    assert!(oracle_inside(&s, &m.comp, &leaves, &[]).is_err());
    assert!(oracle_enumerate_actions(&s, &m, &[5; 6]).is_err());
}

#[test]
fn enumeration_counts_and_mass() {
    let (s, m) = model(3);
    assert_eq!(oracle_enumerate_actions(&s, &m, &[5, 6, 7]).unwrap().trees.len(), 2);
    let e = oracle_enumerate_actions(&s, &m, &[5, 6, 7, 8]).unwrap();
    assert_eq!(e.trees.len(), 5);
    assert!(e.sentence_logp < 0.0);
    // Prefix probabilities only shrink, and the sentence sits below its last prefix.
    for w in e.prefix_logp.windows(2) {
        assert!(w[1] <= w[0]);
    }
    assert!(e.sentence_logp <= e.prefix_logp[4]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn f1_is_symmetric_for_equal_sizes(a in proptest::collection::btree_set((0usize..6, 0usize..6), 0..6),
                                       b in proptest::collection::btree_set((0usize..6, 0usize..6), 0..6)) {
        let norm = |s: BTreeSet<(usize, usize)>| s.into_iter().map(|(x, y)| (x.min(y), x.max(y))).collect::<BTreeSet<_>>();
        let (a, b) = (norm(a), norm(b));
        let cfg = F1Config { exclude_trivial: false, ..Default::default() };
        let ab = sentence_f1(&a, &b, 6, &cfg).unwrap();
        let ba = sentence_f1(&b, &a, 6, &cfg).unwrap();
        prop_assert!((0.0..=1.0).contains(&ab));
        if a.len() == b.len() {
            prop_assert!((ab - ba).abs() < 1e-12);
        }
    }

    #[test]
    fn sentence_mass_is_a_probability(seed in 0u64..50, n in 1usize..5) {
        let (s, m) = model(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let toks: Vec<usize> = (0..n).map(|_| rng.random_range(5..12)).collect();
        let e = oracle_enumerate_actions(&s, &m, &toks).unwrap();
        prop_assert!(e.sentence_logp <= 0.0 && e.sentence_logp > f64::NEG_INFINITY);
    }
}
