//! Confusion counts and the five segmentation scores, per image and
//! aggregated over a corpus.

use serde::{Deserialize, Serialize};

use crate::error::{LssfError, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            tn: self.tn + o.tn,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }
}

/// Count agreement between two binary masks of equal length. Values other
/// than 0 and 1 are rejected.
pub fn confusion(pred: &[u8], gt: &[u8]) -> Result<ConfusionCounts> {
    if pred.len() != gt.len() {
        return Err(LssfError::Data(format!(
            "mask sizes differ: prediction {} vs ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.iter().zip(gt) {
        match (p, g) {
            (1, 1) => c.tp += 1,
            (0, 0) => c.tn += 1,
            (1, 0) => c.fp += 1,
            (0, 1) => c.fn_ += 1,
            _ => return Err(LssfError::Data(format!("non-binary mask value ({p}, {g})"))),
        }
    }
    Ok(c)
}

/// Accuracy, sensitivity, Jaccard, Dice and specificity. A ratio with a zero
/// denominator is 1.0 (nothing to get wrong) and sets `degenerate`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub jaccard: f64,
    pub dice: f64,
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub degenerate: bool,
}

pub fn scores(c: &ConfusionCounts) -> Scores {
    let mut degenerate = false;
    let mut ratio = |num: u64, den: u64| {
        if den == 0 {
            degenerate = true;
            1.0
        } else {
            num as f64 / den as f64
        }
    };
    let accuracy = ratio(c.tp + c.tn, c.total());
    let sensitivity = ratio(c.tp, c.tp + c.fn_);
    let jaccard = ratio(c.tp, c.tp + c.fp + c.fn_);
    let dice = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_);
    let specificity = ratio(c.tn, c.tn + c.fp);
    Scores {
        jaccard,
        dice,
        accuracy,
        sensitivity,
        specificity,
        degenerate,
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Mean of per-image scores.
    #[default]
    PerImage,
    /// Scores of the summed confusion table.
    Micro,
}

pub fn aggregate(per_image: &[ConfusionCounts], mode: Aggregation) -> Scores {
    if per_image.is_empty() {
        return Scores::default();
    }
    match mode {
        Aggregation::Micro => {
            let total = per_image.iter().fold(ConfusionCounts::default(), |a, &b| a + b);
            scores(&total)
        }
        Aggregation::PerImage => {
            let n = per_image.len() as f64;
            let all: Vec<Scores> = per_image.iter().map(scores).collect();
            let mean = |f: fn(&Scores) -> f64| all.iter().map(f).sum::<f64>() / n;
            Scores {
                jaccard: mean(|s| s.jaccard),
                dice: mean(|s| s.dice),
                accuracy: mean(|s| s.accuracy),
                sensitivity: mean(|s| s.sensitivity),
                specificity: mean(|s| s.specificity),
                degenerate: all.iter().any(|s| s.degenerate),
            }
        }
    }
}

pub const METRICS_SCHEMA: u32 = 1;

/// Corpus-level evaluation result as written to JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema: u32,
    pub jaccard: f64,
    pub dice: f64,
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub loss_bce: f64,
    pub loss_jaccard: f64,
    pub n_images: usize,
    pub aggregation: Aggregation,
    /// Images with at least one zero-denominator score.
    pub degenerate_images: usize,
}

impl MetricsReport {
    pub fn new(per_image: &[ConfusionCounts], mode: Aggregation, loss_bce: f64, loss_jaccard: f64) -> Self {
        let s = aggregate(per_image, mode);
        Self {
            schema: METRICS_SCHEMA,
            jaccard: s.jaccard,
            dice: s.dice,
            accuracy: s.accuracy,
            sensitivity: s.sensitivity,
            specificity: s.specificity,
            loss_bce,
            loss_jaccard,
            n_images: per_image.len(),
            aggregation: mode,
            degenerate_images: per_image.iter().filter(|c| scores(c).degenerate).count(),
        }
    }
}
