//! Training loss: weighted sum of pixel-mean binary cross-entropy and soft
//! Jaccard loss.

use lssf_tensor::{Scalar, Tape, Var};
use serde::{Deserialize, Serialize};

use crate::error::{LssfError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub bce_weight: f64,
    pub jaccard_weight: f64,
    /// Smoothing term added to both sides of the soft IoU ratio.
    pub smooth_eps: f64,
    /// Probabilities are clamped to `[prob_clamp, 1 - prob_clamp]` inside
    /// the logarithms.
    pub prob_clamp: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            bce_weight: 1.0,
            jaccard_weight: 1.0,
            smooth_eps: 1.0,
            prob_clamp: 1e-7,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(LssfError::Config(m.to_string()));
        if !(self.bce_weight >= 0.0 && self.jaccard_weight >= 0.0) {
            return bad("loss weights must be >= 0");
        }
        if self.bce_weight == 0.0 && self.jaccard_weight == 0.0 {
            return bad("loss weights must not both be zero");
        }
        if !(self.smooth_eps > 0.0) {
            return bad("smooth_eps must be > 0");
        }
        if !(self.prob_clamp > 0.0 && self.prob_clamp < 0.5) {
            return bad("prob_clamp must lie in (0, 0.5)");
        }
        Ok(())
    }
}

/// The two loss terms and their weighted total, all on the tape.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub bce: Var,
    pub jaccard: Var,
    pub total: Var,
}

pub fn bce_loss<T: Scalar>(tape: &mut Tape<T>, p: Var, g: Var, cfg: &LossConfig) -> Result<Var> {
    Ok(tape.bce(p, g, T::of(cfg.prob_clamp))?)
}

pub fn jaccard_loss<T: Scalar>(tape: &mut Tape<T>, p: Var, g: Var, cfg: &LossConfig) -> Result<Var> {
    Ok(tape.jaccard(p, g, T::of(cfg.smooth_eps))?)
}

pub fn combined_loss<T: Scalar>(tape: &mut Tape<T>, p: Var, g: Var, cfg: &LossConfig) -> Result<LossTerms> {
    cfg.validate()?;
    let bce = bce_loss(tape, p, g, cfg)?;
    let jaccard = jaccard_loss(tape, p, g, cfg)?;
    let total = match (cfg.bce_weight, cfg.jaccard_weight) {
        (w, 0.0) => tape.scale(bce, T::of(w))?,
        (0.0, w) => tape.scale(jaccard, T::of(w))?,
        (wb, wj) => {
            let a = tape.scale(bce, T::of(wb))?;
            let b = tape.scale(jaccard, T::of(wj))?;
            tape.add(a, b)?
        }
    };
    Ok(LossTerms { bce, jaccard, total })
}
