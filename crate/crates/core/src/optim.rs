//! Bias-corrected Adam and epoch-level early stopping.

use indexmap::IndexMap;
use lssf_tensor::{Scalar, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{LssfError, Result};
use crate::params::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(LssfError::Config(format!(
                "adam needs lr > 0, betas in [0, 1), eps > 0; got {self:?}"
            )))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    /// Steps taken so far.
    pub t: u64,
    pub m: IndexMap<String, Vec<T>>,
    pub v: IndexMap<String, Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            t: 0,
            m: IndexMap::new(),
            v: IndexMap::new(),
        })
    }

    /// One update of every parameter in `params`. All gradients are checked
    /// before anything is modified, so a non-finite gradient leaves both the
    /// parameters and the state untouched.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &IndexMap<String, Tensor<T>>) -> Result<()> {
        for (name, p) in params.iter() {
            let g = grads
                .get(name)
                .ok_or_else(|| LssfError::MissingParam(format!("{name} (gradient)")))?;
            if g.shape() != p.shape() {
                return Err(LssfError::Config(format!(
                    "gradient of `{name}` has shape {:?}, parameter {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            if !g.all_finite() {
                return Err(LssfError::NonFiniteGradient(name.to_string()));
            }
        }
        self.t += 1;
        let c = &self.config;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let bc1 = T::of(1.0 - c.beta1.powi(self.t as i32));
        let bc2 = T::of(1.0 - c.beta2.powi(self.t as i32));
        let (lr, eps) = (T::of(c.lr), T::of(c.eps));
        let one = T::one();
        for (name, p) in params.iter_mut() {
            let g = grads[name].data();
            let m = self.m.entry(name.to_string()).or_insert_with(|| vec![T::zero(); g.len()]);
            let v = self.v.entry(name.to_string()).or_insert_with(|| vec![T::zero(); g.len()]);
            for (((theta, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (one - b1) * gi;
                *vi = b2 * *vi + (one - b2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *theta -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monitor {
    /// Higher is better.
    #[default]
    Jaccard,
    /// Lower is better.
    ValLoss,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopState {
    pub monitor: Monitor,
    pub patience: usize,
    /// First epoch (1-based) whose metric is considered.
    pub start_epoch: usize,
    pub min_delta: f64,
    pub best: Option<f64>,
    pub best_epoch: Option<usize>,
    pub epochs_since_improve: usize,
}

impl EarlyStopState {
    pub fn new(monitor: Monitor, patience: usize, start_epoch: usize, min_delta: f64) -> Result<Self> {
        if patience < 1 {
            return Err(LssfError::Config("early stopping patience must be >= 1".into()));
        }
        Ok(Self {
            monitor,
            patience,
            start_epoch,
            min_delta,
            best: None,
            best_epoch: None,
            epochs_since_improve: 0,
        })
    }

    fn improves(&self, metric: f64, best: f64) -> bool {
        match self.monitor {
            Monitor::Jaccard => metric > best + self.min_delta,
            Monitor::ValLoss => metric < best - self.min_delta,
        }
    }

    /// Record the metric of `epoch`; true when training should stop. Epochs
    /// before `start_epoch` are ignored entirely.
    pub fn update(&mut self, epoch: usize, metric: f64) -> bool {
        if epoch < self.start_epoch {
            return false;
        }
        match self.best {
            Some(best) if !self.improves(metric, best) => self.epochs_since_improve += 1,
            _ => {
                self.best = Some(metric);
                self.best_epoch = Some(epoch);
                self.epochs_since_improve = 0;
            }
        }
        self.epochs_since_improve >= self.patience
    }

    /// Whether the last [`update`](Self::update) set a new best.
    pub fn improved_at(&self, epoch: usize) -> bool {
        self.best_epoch == Some(epoch)
    }
}
