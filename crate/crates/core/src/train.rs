//! Epoch loop with seeded shuffling, Adam updates, per-epoch validation,
//! early stopping and best/last checkpoints; corpus evaluation.

use std::path::Path;

use lssf_tensor::{Mode, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::NetworkConfig;
use crate::context::Cx;
use crate::data::Dataset;
use crate::error::{LssfError, Result};
use crate::loss::{combined_loss, LossConfig};
use crate::metrics::{confusion, Aggregation, ConfusionCounts, MetricsReport};
use crate::network::{forward, predict_mask, Model};
use crate::optim::{AdamConfig, AdamState, EarlyStopState, Monitor};
use crate::params::ParamStore;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EarlyStopConfig {
    pub enabled: bool,
    pub monitor: Monitor,
    pub patience: usize,
    pub start_epoch: usize,
    pub min_delta: f64,
}

impl Default for EarlyStopConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            monitor: Monitor::Jaccard,
            patience: 9,
            start_epoch: 10,
            min_delta: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Epochs to run in this call (a warm start adds to the checkpoint's).
    pub max_epochs: usize,
    /// Optimizer steps to run in this call; `None` is unbounded.
    pub max_steps: Option<u64>,
    pub adam: AdamConfig,
    pub early_stopping: EarlyStopConfig,
    /// Probability threshold for validation masks.
    pub threshold: f64,
    pub aggregation: Aggregation,
    /// Fixes data order and dropout masks.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 4,
            max_epochs: 100,
            max_steps: None,
            adam: AdamConfig::default(),
            early_stopping: EarlyStopConfig::default(),
            threshold: 0.5,
            aggregation: Aggregation::PerImage,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(LssfError::Config("batch_size must be >= 1".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(LssfError::Config(format!("threshold {} must lie in (0, 1)", self.threshold)));
        }
        if self.early_stopping.patience < 1 {
            return Err(LssfError::Config("early_stopping.patience must be >= 1".into()));
        }
        self.adam.validate()
    }
}

pub enum Init {
    Fresh,
    /// Continue from saved weights, optimizer state and counters.
    Checkpoint(Checkpoint),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_jaccard: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub best_epoch: Option<u64>,
    pub history: Vec<EpochRecord>,
    /// Loss of every optimizer step, before its update.
    pub step_losses: Vec<f64>,
    /// Loss of the batch that would come next, under the final weights.
    pub final_loss: f64,
    pub stopped_early: bool,
}

fn mix(seed: u64, salt: u64, i: u64) -> u64 {
    let mut z = seed ^ salt.rotate_left(17) ^ i.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Sample order of a 1-based epoch.
pub fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(seed, 1, epoch)));
    order
}

/// Dropout seed of a 0-based global step.
pub fn step_seed(seed: u64, step: u64) -> u64 {
    mix(seed, 2, step)
}

/// Forward and loss in train mode. With `grads`, also the backward pass;
/// running statistics in `params` are updated either way.
fn train_loss(
    params: &mut ParamStore<f32>,
    config: &NetworkConfig,
    x: Tensor<f32>,
    y: Tensor<f32>,
    loss_cfg: &LossConfig,
    seed: u64,
    grads: bool,
) -> Result<(f64, Option<indexmap::IndexMap<String, Tensor<f32>>>)> {
    let mut tape = Tape::new();
    let mut cx = Cx::bind(&mut tape, params, Mode::Train, grads, seed);
    let xv = cx.input(x);
    let yv = cx.input(y);
    let p = forward(&mut cx, xv, config)?;
    let terms = combined_loss(cx.tape, p, yv, loss_cfg)?;
    let loss = cx.value(terms.total).item() as f64;
    if !grads {
        return Ok((loss, None));
    }
    cx.tape.backward(terms.total)?;
    Ok((loss, Some(cx.grads())))
}

pub fn train(
    config: &NetworkConfig,
    train_set: &Dataset,
    val_set: Option<&Dataset>,
    loss_cfg: &LossConfig,
    cfg: &TrainConfig,
    init: Init,
) -> Result<TrainOutcome> {
    config.validate()?;
    loss_cfg.validate()?;
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(LssfError::Data("training set is empty".into()));
    }
    for set in std::iter::once(train_set).chain(val_set) {
        if set.size != config.input_size {
            return Err(LssfError::Data(format!(
                "dataset size {} does not match input_size {}",
                set.size, config.input_size
            )));
        }
    }
    let (mut state, mut adam) = match init {
        Init::Fresh => {
            let mut ck = Checkpoint::fresh(config.clone())?;
            ck.seed = cfg.seed;
            (ck, AdamState::new(cfg.adam)?)
        }
        Init::Checkpoint(ck) => {
            ck.check_compatible(config)?;
            let adam = match &ck.optimizer {
                Some(a) => AdamState {
                    config: cfg.adam,
                    ..a.clone()
                },
                None => AdamState::new(cfg.adam)?,
            };
            let mut ck = ck;
            ck.config = config.clone();
            (ck, adam)
        }
    };
    let es = &cfg.early_stopping;
    let mut stopper = EarlyStopState::new(es.monitor, es.patience, es.start_epoch, es.min_delta)?;
    let monitor_set = val_set.unwrap_or(train_set);
    let n = train_set.len();
    let bs = cfg.batch_size;
    let batches_per_epoch = n.div_ceil(bs) as u64;

    let mut history = Vec::new();
    let mut step_losses = Vec::new();
    let mut best: Option<(f64, Checkpoint, u64)> = None;
    let mut stopped_early = false;
    let mut steps_left = cfg.max_steps.unwrap_or(u64::MAX);

    for _ in 0..cfg.max_epochs {
        if steps_left == 0 {
            break;
        }
        let epoch = state.epoch + 1;
        let order = epoch_order(n, state.seed, epoch);
        let mut losses = Vec::new();
        for chunk in order.chunks(bs).skip(state.cursor as usize) {
            if steps_left == 0 {
                break;
            }
            let (x, y) = train_set.batch(chunk)?;
            let seed = step_seed(state.seed, state.step);
            let (loss, grads) = train_loss(&mut state.params, config, x, y, loss_cfg, seed, true)?;
            adam.step(&mut state.params, &grads.expect("requested"))?;
            losses.push(loss);
            state.step += 1;
            state.cursor += 1;
            steps_left -= 1;
        }
        let complete = state.cursor == batches_per_epoch;
        if complete {
            state.epoch = epoch;
            state.cursor = 0;
        }
        if losses.is_empty() {
            break;
        }
        let train_loss = losses.iter().sum::<f64>() / losses.len() as f64;
        step_losses.extend_from_slice(&losses);
        let eval = evaluate_model(&mut state.model(), monitor_set, loss_cfg, cfg.threshold, cfg.aggregation)?;
        let val_loss = loss_cfg.bce_weight * eval.report.loss_bce + loss_cfg.jaccard_weight * eval.report.loss_jaccard;
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_jaccard: eval.report.jaccard,
        };
        log::info!(
            "epoch {epoch}: train_loss {train_loss:.5} val_loss {val_loss:.5} val_jaccard {:.4}",
            record.val_jaccard
        );
        history.push(record);
        if !complete {
            break;
        }
        let metric = match es.monitor {
            Monitor::Jaccard => eval.report.jaccard,
            Monitor::ValLoss => val_loss,
        };
        let better = match (&best, es.monitor) {
            (None, _) => true,
            (Some((b, ..)), Monitor::Jaccard) => metric > *b,
            (Some((b, ..)), Monitor::ValLoss) => metric < *b,
        };
        state.optimizer = Some(adam.clone());
        if better {
            best = Some((metric, state.clone(), epoch));
        }
        if es.enabled && stopper.update(epoch as usize, metric) {
            log::info!("early stop at epoch {epoch}");
            stopped_early = true;
            break;
        }
    }
    state.optimizer = Some(adam);

    // Loss of the next batch in the schedule, without updating anything.
    let next_epoch = state.epoch + 1;
    let order = epoch_order(n, state.seed, next_epoch);
    let chunk = order
        .chunks(bs)
        .nth(state.cursor as usize)
        .expect("cursor below batches per epoch");
    let (x, y) = train_set.batch(chunk)?;
    let mut probe = state.params.clone();
    let seed = step_seed(state.seed, state.step);
    let (final_loss, _) = train_loss(&mut probe, config, x, y, loss_cfg, seed, false)?;

    let (best, best_epoch) = match best {
        Some((_, ck, e)) => (ck, Some(e)),
        None => (state.clone(), None),
    };
    Ok(TrainOutcome {
        best,
        last: state,
        best_epoch,
        history,
        step_losses,
        final_loss,
        stopped_early,
    })
}

/// Images per inference forward pass during evaluation.
const EVAL_BATCH: usize = 8;

/// Per-image confusion tables plus the corpus report.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub per_image: Vec<(String, ConfusionCounts)>,
}

/// Inference-mode evaluation. Loss terms are averaged per image.
pub fn evaluate_model(
    model: &mut Model<f32>,
    data: &Dataset,
    loss_cfg: &LossConfig,
    threshold: f64,
    aggregation: Aggregation,
) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(LssfError::Data("evaluation set is empty".into()));
    }
    if data.size != model.config.input_size {
        return Err(LssfError::ConfigMismatch(format!(
            "dataset size {} does not match the model input size {}",
            data.size, model.config.input_size
        )));
    }
    let mut per_image = Vec::with_capacity(data.len());
    let (mut bce, mut jac) = (0.0, 0.0);
    let indices: Vec<usize> = (0..data.len()).collect();
    let pixels = data.size * data.size;
    for chunk in indices.chunks(EVAL_BATCH) {
        let (x, _) = data.batch(chunk)?;
        let probs = model.predict(&x, Mode::Infer, 0)?;
        for (j, &i) in chunk.iter().enumerate() {
            let sample = &data.samples[i];
            let prob = Tensor::new([1, data.size, data.size, 1], probs.data()[j * pixels..][..pixels].to_vec())?;
            let mut tape = Tape::new();
            let p = tape.constant(prob.clone());
            let g = tape.constant(sample.mask.clone().reshape([1, data.size, data.size, 1])?);
            let terms = combined_loss(&mut tape, p, g, loss_cfg)?;
            bce += tape.value(terms.bce).item() as f64;
            jac += tape.value(terms.jaccard).item() as f64;
            let pred = predict_mask(&prob, threshold)?;
            let gt: Vec<u8> = sample.mask.data().iter().map(|&v| v as u8).collect();
            per_image.push((sample.id.clone(), confusion(&pred.data, &gt)?));
        }
    }
    let n = data.len() as f64;
    let counts: Vec<_> = per_image.iter().map(|(_, c)| *c).collect();
    let report = MetricsReport::new(&counts, aggregation, bce / n, jac / n);
    Ok(Evaluation { report, per_image })
}

pub fn evaluate(
    ck: &Checkpoint,
    data: &Dataset,
    loss_cfg: &LossConfig,
    threshold: f64,
    aggregation: Aggregation,
) -> Result<Evaluation> {
    ck.check_compatible(&ck.config)?;
    evaluate_model(&mut ck.model(), data, loss_cfg, threshold, aggregation)
}

pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in history {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| LssfError::io(path, e))
}
