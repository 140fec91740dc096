use crate::error::{invalid, shape_err, Result};
use crate::tape::{Op, Tape, Var};
use crate::tensor::{Scalar, Tensor};

impl<T: Scalar> Tape<T> {
    fn same_shape(&self, op: &'static str, p: Var, g: Var) -> Result<()> {
        if self.shape(p) != self.shape(g) {
            return Err(shape_err(op, format!("{:?} vs {:?}", self.shape(p), self.shape(g))));
        }
        Ok(())
    }

    /// Mean binary cross-entropy of probabilities `p` against targets `g`,
    /// with `p` clamped to `[clamp, 1 - clamp]`.
    pub fn bce(&mut self, p: Var, g: Var, clamp: T) -> Result<Var> {
        self.same_shape("bce", p, g)?;
        if !(clamp > T::zero() && clamp < T::of(0.5)) {
            return Err(invalid("bce", "clamp must lie in (0, 0.5)"));
        }
        let hi = T::one() - clamp;
        let (pv, gv) = (self.data(p), self.data(g));
        let total: T = pv
            .iter()
            .zip(gv)
            .map(|(&pi, &gi)| {
                let pc = pi.max(clamp).min(hi);
                -(gi * pc.ln() + (T::one() - gi) * (T::one() - pc).ln())
            })
            .sum();
        let loss = total / T::of(pv.len() as f64);
        let flops = pv.len() as u64;
        self.push("bce", Tensor::scalar(loss), Op::Bce { p, g, clamp }, &[p, g], flops)
    }

    /// Soft Jaccard loss `1 - (Σpg + eps) / (Σp + Σg - Σpg + eps)`.
    pub fn jaccard(&mut self, p: Var, g: Var, eps: T) -> Result<Var> {
        self.same_shape("jaccard", p, g)?;
        if eps <= T::zero() {
            return Err(invalid("jaccard", "smoothing eps must be > 0"));
        }
        let (inter, union) = jaccard_terms(self.data(p), self.data(g));
        let loss = T::one() - (inter + eps) / (union + eps);
        let flops = self.data(p).len() as u64;
        self.push("jaccard", Tensor::scalar(loss), Op::Jaccard { p, g, eps }, &[p, g], flops)
    }
}

/// `(Σ p·g, Σ p + Σ g - Σ p·g)`.
pub(crate) fn jaccard_terms<T: Scalar>(p: &[T], g: &[T]) -> (T, T) {
    let mut inter = T::zero();
    let mut sp = T::zero();
    let mut sg = T::zero();
    for (&a, &b) in p.iter().zip(g) {
        inter += a * b;
        sp += a;
        sg += b;
    }
    (inter, sp + sg - inter)
}
