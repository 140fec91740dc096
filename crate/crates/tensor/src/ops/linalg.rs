use crate::error::{shape_err, Result};
use crate::tape::{Op, Tape, Var};
use crate::tensor::{Scalar, Tensor};

/// Batch size and `[rows, cols]` of a rank-2 or rank-3 operand; rank 2 has
/// no batch axis (`None`).
pub(crate) fn mat_dims(shape: &[usize]) -> Option<(Option<usize>, usize, usize)> {
    match *shape {
        [r, c] => Some((None, r, c)),
        [b, r, c] => Some((Some(b), r, c)),
        _ => None,
    }
}

impl<T: Scalar> Tape<T> {
    /// Matrix product. Operands are `[m, k]` or `[B, m, k]`; a rank-2 operand
    /// is shared across the batch of the other.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let err = || shape_err("matmul", format!("{sa:?} x {sb:?}"));
        let (ba, m, k) = mat_dims(sa).ok_or_else(err)?;
        let (bb, k2, n) = mat_dims(sb).ok_or_else(err)?;
        if k != k2 {
            return Err(err());
        }
        let batch = match (ba, bb) {
            (Some(x), Some(y)) if x != y => return Err(err()),
            (Some(x), _) | (None, Some(x)) => Some(x),
            (None, None) => None,
        };
        let nb = batch.unwrap_or(1);
        let (av, bv) = (self.data(a), self.data(b));
        let mut out = vec![T::zero(); nb * m * n];
        for i in 0..nb {
            let ai = if ba.is_some() { &av[i * m * k..][..m * k] } else { av };
            let bi = if bb.is_some() { &bv[i * k * n..][..k * n] } else { bv };
            T::gemm(m, k, n, ai, false, bi, false, &mut out[i * m * n..][..m * n], false);
        }
        let shape = match batch {
            Some(b) => vec![b, m, n],
            None => vec![m, n],
        };
        let out = Tensor::new(shape, out)?;
        let flops = 2 * (nb * m * k * n) as u64;
        self.push("matmul", out, Op::MatMul(a, b), &[a, b], flops)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let c = *shape.last().ok_or_else(|| shape_err("softmax", "rank-0 input"))?;
        let mut out = self.data(x).to_vec();
        for row in out.chunks_mut(c) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            let inv = T::one() / total;
            row.iter_mut().for_each(|v| *v *= inv);
        }
        let out = Tensor::new(shape, out)?;
        let flops = out.numel() as u64;
        self.push("softmax", out, Op::Softmax(x), &[x], flops)
    }
}
