//! Weighted F1 per task and global micro-averaged F1 over all labels.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::TASKS;

/// Label 1 iff `prob >= threshold`.
pub fn binarize(probs: &[f64], threshold: f64) -> Vec<u8> {
    probs.iter().map(|&p| u8::from(p >= threshold)).collect()
}

/// Positive-class confusion counts of one task.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn count(pred: &[u8], truth: &[u8]) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(invalid(format!(
                "prediction length {} differs from label length {}",
                pred.len(),
                truth.len()
            )));
        }
        let mut c = Confusion::default();
        for (&p, &t) in pred.iter().zip(truth) {
            match (p != 0, t != 0) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Support of classes 0 and 1.
    pub fn support(&self) -> [u64; 2] {
        [self.tn + self.fp, self.tp + self.fn_]
    }

    fn f1(tp: u64, fp: u64, fn_: u64) -> f64 {
        let den = 2 * tp + fp + fn_;
        if den == 0 {
            0.0
        } else {
            (2 * tp) as f64 / den as f64
        }
    }

    /// Per-class F1 averaged with class-support weights.
    pub fn weighted_f1(&self) -> f64 {
        let n = self.total();
        if n == 0 {
            return 0.0;
        }
        let f1_pos = Self::f1(self.tp, self.fp, self.fn_);
        let f1_neg = Self::f1(self.tn, self.fn_, self.fp);
        let [s0, s1] = self.support();
        (s0 as f64 * f1_neg + s1 as f64 * f1_pos) / n as f64
    }
}

pub fn weighted_f1(pred: &[u8], truth: &[u8]) -> Result<f64> {
    if pred.is_empty() {
        return Err(invalid("weighted F1 needs at least one sample"));
    }
    Ok(Confusion::count(pred, truth)?.weighted_f1())
}

/// `2ΣTP / (2ΣTP + ΣFP + ΣFN)` over the pooled tasks; the flag reports a
/// zero denominator, in which case the score is 0.
pub fn global_micro_f1(preds: &[Vec<u8>], truths: &[Vec<u8>]) -> Result<(f64, bool)> {
    if preds.len() != truths.len() {
        return Err(invalid("prediction and label task counts differ"));
    }
    let counts = preds
        .iter()
        .zip(truths)
        .map(|(p, t)| Confusion::count(p, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(micro_from_counts(&counts))
}

fn micro_from_counts(counts: &[Confusion]) -> (f64, bool) {
    let (tp, fp, fn_) = counts
        .iter()
        .fold((0, 0, 0), |(a, b, c), k| (a + k.tp, b + k.fp, c + k.fn_));
    let den = 2 * tp + fp + fn_;
    if den == 0 {
        (0.0, true)
    } else {
        ((2 * tp) as f64 / den as f64, false)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub task: String,
    pub weighted_f1: f64,
    pub counts: Confusion,
}

/// Fields in column order: global first, then the tasks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub global_micro_f1: f64,
    pub tasks: Vec<TaskMetrics>,
    pub threshold: f64,
    pub samples: usize,
    /// Set when no positive exists in predictions or labels.
    pub zero_denominator: bool,
}

impl MetricsReport {
    /// `probs[k][i]` for task `k`, sample `i`; `labels[i][k]`.
    pub fn from_predictions(probs: &[Vec<f64>; 3], labels: &[[u8; 3]], threshold: f64) -> Result<Self> {
        if labels.is_empty() {
            return Err(invalid("cannot evaluate an empty dataset"));
        }
        let mut tasks = Vec::with_capacity(3);
        for (k, name) in TASKS.iter().enumerate() {
            let pred = binarize(&probs[k], threshold);
            let truth: Vec<u8> = labels.iter().map(|l| l[k]).collect();
            let counts = Confusion::count(&pred, &truth)?;
            tasks.push(TaskMetrics {
                task: name.to_string(),
                weighted_f1: counts.weighted_f1(),
                counts,
            });
        }
        let (global, zero) = micro_from_counts(&tasks.iter().map(|t| t.counts).collect::<Vec<_>>());
        if zero {
            warn!("global micro F1 undefined (no positives); reporting 0");
        }
        Ok(Self {
            global_micro_f1: global,
            tasks,
            threshold,
            samples: labels.len(),
            zero_denominator: zero,
        })
    }

    /// `key: value` lines in report order.
    pub fn to_text(&self) -> String {
        let mut s = format!("global_micro_f1: {}\n", self.global_micro_f1);
        for t in &self.tasks {
            s += &format!("{}.weighted_f1: {}\n", t.task, t.weighted_f1);
        }
        for t in &self.tasks {
            let c = t.counts;
            s += &format!(
                "{0}.tp: {1}\n{0}.fp: {2}\n{0}.fn: {3}\n{0}.tn: {4}\n",
                t.task, c.tp, c.fp, c.fn_, c.tn
            );
        }
        s += &format!(
            "threshold: {}\nsamples: {}\nzero_denominator: {}\n",
            self.threshold, self.samples, self.zero_denominator
        );
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// One-line summary in column order: Global, Mental Demand, Effort, Temporal Demand.
    pub fn table_row(&self) -> String {
        let f = |v: f64| format!("{v:.4}");
        format!(
            "Global {} | Mental Demand {} | Effort {} | Temporal Demand {}",
            f(self.global_micro_f1),
            f(self.tasks[0].weighted_f1),
            f(self.tasks[1].weighted_f1),
            f(self.tasks[2].weighted_f1)
        )
    }
}
