//! Forward-pass context: a tape with every parameter bound as a leaf, the
//! batch-norm running statistics, the mode, and the dropout stream.

use indexmap::IndexMap;
use lssf_tensor::{Mode, Padding, RunningStats, Scalar, Tape, Tensor, Var, BN_EPS, BN_MOMENTUM, LN_EPS};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{LssfError, Result};
use crate::params::{BnBuffers, ParamStore};

pub struct Cx<'a, T> {
    pub tape: &'a mut Tape<T>,
    pub mode: Mode,
    vars: IndexMap<String, Var>,
    bn: &'a mut IndexMap<String, BnBuffers<T>>,
    rng: ChaCha8Rng,
}

impl<'a, T: Scalar> Cx<'a, T> {
    /// Bind every parameter of `store` onto `tape`. Running statistics are
    /// updated in place when `mode` is train.
    pub fn bind(tape: &'a mut Tape<T>, store: &'a mut ParamStore<T>, mode: Mode, track_grads: bool, seed: u64) -> Self {
        let vars = store
            .iter()
            .map(|(k, v)| (k.to_string(), tape.leaf(v.clone(), track_grads)))
            .collect();
        Self {
            tape,
            mode,
            vars,
            bn: &mut store.bn,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Context over parameters already placed on the tape.
    pub fn from_vars(
        tape: &'a mut Tape<T>,
        vars: IndexMap<String, Var>,
        bn: &'a mut IndexMap<String, BnBuffers<T>>,
        mode: Mode,
        seed: u64,
    ) -> Self {
        Self {
            tape,
            mode,
            vars,
            bn,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn p(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| LssfError::MissingParam(name.to_string()))
    }

    pub fn has(&self, name: &str) -> bool {
        self.vars.contains_key(name)
    }

    pub fn vars(&self) -> &IndexMap<String, Var> {
        &self.vars
    }

    pub fn input(&mut self, x: Tensor<T>) -> Var {
        self.tape.constant(x)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.tape.value(v)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.tape.shape(v)
    }

    /// Stride-1 same-padded convolution with `{prefix}.kernel` and, when
    /// registered, `{prefix}.bias`.
    pub fn conv(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let k = self.p(&format!("{prefix}.kernel"))?;
        let bias_name = format!("{prefix}.bias");
        let b = if self.has(&bias_name) { Some(self.p(&bias_name)?) } else { None };
        Ok(self.tape.conv2d(x, k, b, 1, Padding::Same)?)
    }

    pub fn batch_norm(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let gamma = self.p(&format!("{prefix}.gamma"))?;
        let beta = self.p(&format!("{prefix}.beta"))?;
        let buf = self
            .bn
            .get_mut(prefix)
            .ok_or_else(|| LssfError::MissingParam(format!("{prefix} (running stats)")))?;
        let stats = RunningStats {
            mean: &mut buf.mean,
            var: &mut buf.var,
            momentum: T::of(BN_MOMENTUM),
        };
        Ok(self.tape.batch_norm(x, gamma, beta, self.mode, stats, T::of(BN_EPS))?)
    }

    pub fn layer_norm(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let gamma = self.p(&format!("{prefix}.gamma"))?;
        let beta = self.p(&format!("{prefix}.beta"))?;
        Ok(self.tape.layer_norm(x, gamma, beta, T::of(LN_EPS))?)
    }

    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var> {
        Ok(self.tape.dropout(x, rate, self.mode, &mut self.rng)?)
    }

    /// Gradient of every bound parameter after `tape.backward`; parameters
    /// the loss does not reach get zeros.
    pub fn grads(&self) -> IndexMap<String, Tensor<T>> {
        self.vars
            .iter()
            .map(|(k, &v)| {
                let g = self
                    .tape
                    .grad(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(self.tape.shape(v).to_vec()));
                (k.clone(), g)
            })
            .collect()
    }
}
