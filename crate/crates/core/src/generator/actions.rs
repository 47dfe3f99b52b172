//! Action sequences and their stack semantics.

use std::collections::BTreeMap;

use crate::composition::{BinaryTree, Span};
use crate::corpus::vocab::EOS;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    Comp,
    Gen(usize),
}

impl Action {
    /// Dense id used for deterministic tie-breaking: COMP is 0, GEN(x) is x + 1.
    pub fn id(self) -> usize {
        match self {
            Action::Comp => 0,
            Action::Gen(x) => x + 1,
        }
    }

    pub fn is_gen(self) -> bool {
        matches!(self, Action::Gen(_))
    }
}

/// A validated action sequence with the bookkeeping the generator needs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActionSequence {
    pub actions: Vec<Action>,
    /// Span of the node each action completes; `None` for the final end token.
    pub spans: Vec<Option<Span>>,
    /// Words generated before each step.
    pub words: Vec<usize>,
    /// Stack depth (excluding the sentinel) before each step.
    pub depths: Vec<usize>,
}

impl ActionSequence {
    /// Checks the stack discipline and derives spans, word positions and
    /// depths. An end token is accepted only as the last action, at depth 1.
    pub fn new(actions: Vec<Action>) -> Result<Self> {
        let mut stack: Vec<Span> = Vec::new();
        let mut spans = Vec::with_capacity(actions.len());
        let mut words = Vec::with_capacity(actions.len());
        let mut depths = Vec::with_capacity(actions.len());
        let mut w = 0;
        for (t, &a) in actions.iter().enumerate() {
            words.push(w);
            depths.push(stack.len());
            match a {
                Action::Comp => {
                    if stack.len() < 2 {
                        return Err(Error::InvalidAction(format!("COMP at step {t} with stack depth {}", stack.len())));
                    }
                    let r = stack.pop().unwrap();
                    let l = stack.pop().unwrap();
                    stack.push((l.0, r.1));
                    spans.push(Some((l.0, r.1)));
                }
                Action::Gen(EOS) => {
                    if stack.len() != 1 || t + 1 != actions.len() {
                        return Err(Error::InvalidAction(format!("end token at step {t} with stack depth {}", stack.len())));
                    }
                    spans.push(None);
                    w += 1;
                }
                Action::Gen(_) => {
                    stack.push((w, w));
                    spans.push(Some((w, w)));
                    w += 1;
                }
            }
        }
        Ok(ActionSequence { actions, spans, words, depths })
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Number of GEN actions, the end token included.
    pub fn gen_count(&self) -> usize {
        self.actions.iter().filter(|a| a.is_gen()).count()
    }

    pub fn ends_with_eos(&self) -> bool {
        self.actions.last() == Some(&Action::Gen(EOS))
    }

    pub fn with_eos(&self) -> Result<Self> {
        let mut a = self.actions.clone();
        a.push(Action::Gen(EOS));
        Self::new(a)
    }

    /// Words generated, end token excluded.
    pub fn tokens(&self) -> Vec<usize> {
        self.actions
            .iter()
            .filter_map(|a| match a {
                Action::Gen(x) if *x != EOS => Some(*x),
                _ => None,
            })
            .collect()
    }

    /// Rebuilds the tree by replaying the actions on a stack. The sequence
    /// must reduce to a single node.
    pub fn tree(&self) -> Result<BinaryTree> {
        let n = self.tokens().len();
        let splits: BTreeMap<Span, usize> = self
            .actions
            .iter()
            .zip(&self.spans)
            .enumerate()
            .filter(|(_, (a, _))| **a == Action::Comp)
            .map(|(t, (_, s))| {
                let s = s.expect("COMP has a span");
                // The left child is the node completed just before the right one.
                let right = self.right_child(t);
                (s, right.0 - 1)
            })
            .collect();
        if n == 0 {
            return Err(Error::InvalidAction("no words generated".into()));
        }
        BinaryTree::from_splits(n, splits)
    }

    /// Span of the right child of the COMP at step `t`: the node completed
    /// at step `t - 1`.
    fn right_child(&self, t: usize) -> Span {
        self.spans[t - 1].expect("right child is a node")
    }
}

/// Post-order linearization: GEN for each leaf, COMP for each internal
/// node, left child first.
pub fn linearize_postorder(tree: &BinaryTree, tokens: &[usize]) -> Result<ActionSequence> {
    if tokens.len() != tree.len() {
        return Err(Error::InvalidAction(format!("{} tokens for a tree over {}", tokens.len(), tree.len())));
    }
    let actions = tree
        .postorder()
        .into_iter()
        .map(|(i, j)| if i == j { Action::Gen(tokens[i]) } else { Action::Comp })
        .collect();
    ActionSequence::new(actions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const A: usize = 10;
    const B: usize = 11;
    const C: usize = 12;

    #[test]
    fn left_nested_tree_linearizes() {
        let t = BinaryTree::left_branching(3);
        let s = linearize_postorder(&t, &[A, B, C]).unwrap();
        assert_eq!(s.actions, [Action::Gen(A), Action::Gen(B), Action::Comp, Action::Gen(C), Action::Comp]);
        assert_eq!(s.words, [0, 1, 2, 2, 3]);
        assert_eq!(s.depths, [0, 1, 2, 1, 2]);
        assert_eq!(s.spans[2], Some((0, 1)));
        let e = s.with_eos().unwrap();
        assert_eq!(e.len(), 6);
        assert_eq!(e.gen_count(), 4);
    }

    #[test]
    fn single_word() {
        let s = linearize_postorder(&BinaryTree::leaf(), &[A]).unwrap();
        assert_eq!(s.actions, [Action::Gen(A)]);
        assert_eq!(s.tree().unwrap(), BinaryTree::leaf());
    }

    #[test]
    fn stack_discipline_is_enforced() {
        assert!(ActionSequence::new(vec![Action::Gen(A), Action::Comp]).is_err());
        assert!(ActionSequence::new(vec![Action::Gen(A), Action::Gen(B), Action::Gen(EOS)]).is_err());
        assert!(ActionSequence::new(vec![Action::Gen(A), Action::Gen(EOS), Action::Gen(B)]).is_err());
        assert!(ActionSequence::new(vec![Action::Gen(A), Action::Gen(EOS)]).is_ok());
    }

    #[test]
    fn ids_order_comp_first() {
        assert_eq!(Action::Comp.id(), 0);
        assert_eq!(Action::Gen(0).id(), 1);
    }

    proptest! {
        #[test]
        fn replay_reconstructs_tree(n in 1usize..10, pick in 0usize..10_000) {
            let trees = BinaryTree::enumerate(n);
            let t = &trees[pick % trees.len()];
            let toks: Vec<usize> = (0..n).map(|i| 5 + i).collect();
            let s = linearize_postorder(t, &toks).unwrap();
            prop_assert_eq!(s.len(), 2 * n - 1);
            prop_assert_eq!(s.gen_count(), n);
            for t in 1..s.len() {
                // Prefix property: depth never drops below one after the first action.
                let d = s.depths[t];
                prop_assert!(d >= 1);
                prop_assert_eq!(s.words[t], s.actions[..t].iter().filter(|a| a.is_gen()).count());
            }
            prop_assert_eq!(&s.tree().unwrap(), t);
            prop_assert_eq!(s.tokens(), toks);
        }
    }
}
