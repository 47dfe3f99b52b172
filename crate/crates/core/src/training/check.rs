//! Finite-difference checks of every training objective on a small model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::losses::{sentence_losses, LossOptions};
use crate::corpus::tokenize::TokenizedSentence;
use crate::error::Result;
use crate::model::{Gpst, ModelConfig};
use crate::numerics::gradcheck::{grad_check, GradCheckReport, Roots};
use crate::numerics::{Graph, LossRoot, ParamStore};

pub const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Ae,
    Ar,
    Parser,
    Height,
    Combined,
}

impl Objective {
    pub const ALL: [Objective; 5] = [Objective::Ae, Objective::Ar, Objective::Parser, Objective::Height, Objective::Combined];

    /// The barrier removes part of the true derivative of the
    /// autoregressive loss on purpose, so objectives that include it are
    /// checked with the barrier off.
    pub fn grad_stop(self) -> bool {
        !matches!(self, Objective::Ar | Objective::Combined)
    }

    fn roots(self, g: &mut Graph<'_, f64>, model: &Gpst, sent: &TokenizedSentence) -> Result<Roots> {
        // A low threshold keeps the height hinge active.
        let opts = LossOptions { h_thrs: 1.0, grad_stop: self.grad_stop() };
        let l = sentence_losses(g, model, sent, opts)?;
        let ae = (l.ae, Some(LossRoot::AutoEncoding));
        let p = (l.parser, Some(LossRoot::AutoEncoding));
        let h = (l.height, Some(LossRoot::AutoEncoding));
        let ar = (l.ar, Some(LossRoot::AutoRegression));
        Ok(match self {
            Objective::Ae => vec![ae],
            Objective::Ar => vec![ar],
            Objective::Parser => vec![p],
            Objective::Height => vec![h],
            Objective::Combined => vec![ae, p, h, ar],
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ObjectiveCheck {
    pub objective: Objective,
    pub sentence: Vec<usize>,
    pub max_rel_err: f64,
    pub coords: usize,
    /// Parameter name, coordinate, analytic and numeric derivative.
    pub worst: Option<(String, usize, f64, f64)>,
}

impl ObjectiveCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_err < GRAD_TOLERANCE
    }
}

/// Width 16, two layers everywhere.
pub fn check_model_config(vocab_size: usize) -> ModelConfig {
    let mut cfg = ModelConfig::tiny(vocab_size);
    cfg.generator.type_layers = 2;
    cfg.generator.token_layers = 2;
    cfg.composition.layers = 2;
    cfg.composition.parser_layers = 2;
    cfg
}

/// Checks every objective on random sentences of 2 to 6 tokens under a
/// freshly initialized 64-bit model.
pub fn objective_suite(seed: u64, sentences: usize, coords: usize, eps: f64) -> Result<Vec<ObjectiveCheck>> {
    let vocab = 12;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::<f64>::new();
    let model = Gpst::new(&mut store, &check_model_config(vocab), &mut rng)?;
    let mut out = Vec::new();
    for s in 0..sentences {
        let n = rng.random_range(2..=6);
        let ids: Vec<usize> = (0..n).map(|_| rng.random_range(5..vocab)).collect();
        let sent = TokenizedSentence::from_ids(ids.clone());
        for (o, obj) in Objective::ALL.into_iter().enumerate() {
            let r: GradCheckReport = grad_check(&store, eps, coords, seed ^ ((s * 8 + o) as u64), |g: &mut Graph<'_, f64>| {
                obj.roots(g, &model, &sent)
            })?;
            out.push(ObjectiveCheck {
                objective: obj,
                sentence: ids.clone(),
                max_rel_err: r.max_rel_err,
                coords: r.coords,
                worst: r.worst,
            });
        }
    }
    Ok(out)
}
