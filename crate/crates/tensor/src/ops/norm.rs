use crate::error::{invalid, shape_err, Result};
use crate::tape::{Mode, NormKind, Op, Tape, Var};
use crate::tensor::{Scalar, Tensor};

/// Running mean/variance of a batch-norm layer, updated in place during
/// training as `running = momentum * running + (1 - momentum) * batch`.
pub struct RunningStats<'a, T> {
    pub mean: &'a mut [T],
    pub var: &'a mut [T],
    pub momentum: T,
}

impl<T: Scalar> Tape<T> {
    fn check_affine(&self, op: &'static str, x: Var, gamma: Var, beta: Var, eps: T) -> Result<usize> {
        let c = *self
            .shape(x)
            .last()
            .ok_or_else(|| shape_err(op, "rank-0 input"))?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(shape_err(
                op,
                format!(
                    "gamma {:?} / beta {:?} vs channel dim {c}",
                    self.shape(gamma),
                    self.shape(beta)
                ),
            ));
        }
        if eps <= T::zero() {
            return Err(invalid(op, "eps must be > 0"));
        }
        Ok(c)
    }

    /// Per-channel normalization over every axis but the last (N, H, W for
    /// NHWC). Train mode uses batch statistics (biased variance) and updates
    /// `stats`; infer mode normalizes with `stats`.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: Mode,
        stats: RunningStats<'_, T>,
        eps: T,
    ) -> Result<Var> {
        let c = self.check_affine("batch_norm", x, gamma, beta, eps)?;
        if stats.mean.len() != c || stats.var.len() != c {
            return Err(shape_err("batch_norm", "running stats length != channel dim"));
        }
        let xv = self.data(x);
        let rows = xv.len() / c;
        let (mean, var, kind) = if mode.is_train() {
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for row in xv.chunks(c) {
                mean.iter_mut().zip(row).for_each(|(m, &v)| *m += v);
            }
            let inv_rows = T::one() / T::of(rows as f64);
            mean.iter_mut().for_each(|m| *m *= inv_rows);
            for row in xv.chunks(c) {
                for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
            var.iter_mut().for_each(|s| *s *= inv_rows);
            let mom = stats.momentum;
            for ch in 0..c {
                stats.mean[ch] = mom * stats.mean[ch] + (T::one() - mom) * mean[ch];
                stats.var[ch] = mom * stats.var[ch] + (T::one() - mom) * var[ch];
            }
            (mean, var, NormKind::BatchTrain)
        } else {
            (stats.mean.to_vec(), stats.var.to_vec(), NormKind::Fixed)
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (g, b) = (self.data(gamma), self.data(beta));
        let mut xhat = Vec::with_capacity(xv.len());
        let mut out = Vec::with_capacity(xv.len());
        for row in xv.chunks(c) {
            for ch in 0..c {
                let xh = (row[ch] - mean[ch]) * inv_std[ch];
                xhat.push(xh);
                out.push(g[ch] * xh + b[ch]);
            }
        }
        let out = Tensor::new(self.shape(x).to_vec(), out)?;
        let flops = out.numel() as u64;
        self.push(
            "batch_norm",
            out,
            Op::Norm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                kind,
            },
            &[x, gamma, beta],
            flops,
        )
    }

    /// Normalization over the last (channel) axis with per-channel affine.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let c = self.check_affine("layer_norm", x, gamma, beta, eps)?;
        let xv = self.data(x);
        let (g, b) = (self.data(gamma), self.data(beta));
        let inv_c = T::one() / T::of(c as f64);
        let mut xhat = Vec::with_capacity(xv.len());
        let mut out = Vec::with_capacity(xv.len());
        let mut inv_std = Vec::with_capacity(xv.len() / c.max(1));
        for row in xv.chunks(c) {
            let mean = row.iter().copied().sum::<T>() * inv_c;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_c;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            for ch in 0..c {
                let xh = (row[ch] - mean) * is;
                xhat.push(xh);
                out.push(g[ch] * xh + b[ch]);
            }
        }
        let out = Tensor::new(self.shape(x).to_vec(), out)?;
        let flops = out.numel() as u64;
        self.push(
            "layer_norm",
            out,
            Op::Norm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                kind: NormKind::Layer,
            },
            &[x, gamma, beta],
            flops,
        )
    }
}
