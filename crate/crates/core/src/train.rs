//! Losses, Adam, learning-rate schedule, early stopping, the fit loop and
//! batched evaluation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use log::info;
use mm_tensor::{lit, Mode, Rng, Scalar, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::augment::AugmentPolicy;
use crate::dataset::{collate, Batch, ClipProvider, Sample};
use crate::error::{invalid, Error, IoContext, Result};
use crate::metrics::MetricsReport;
use crate::model::{mm_forward, save_checkpoint, MmModel, Session, TASKS};

pub const PROB_CLAMP: f64 = 1e-7;

/// Weight of each task's loss in the global objective.
pub type LossWeights = [f64; 3];

pub fn validate_weights(w: &LossWeights) -> Result<()> {
    if w.iter().any(|x| !x.is_finite() || *x < 0.0) || w.iter().all(|&x| x == 0.0) {
        return Err(invalid(format!("loss weights {w:?} must be finite, non-negative and not all zero")));
    }
    Ok(())
}

fn check_batch(n: usize, labels: usize) -> Result<()> {
    if n == 0 {
        return Err(invalid("binary cross-entropy of an empty batch"));
    }
    if n != labels {
        return Err(invalid(format!("{n} probabilities for {labels} labels")));
    }
    Ok(())
}

/// Mean binary cross-entropy of probabilities `p` `[N]` against `y`.
pub fn bce_loss<T: Scalar>(p: &Var<T>, y: &[u8]) -> Result<Var<T>> {
    check_batch(p.value().len(), y.len())?;
    let p = p.clamp(lit(PROB_CLAMP), lit(1.0 - PROB_CLAMP))?;
    let y = Var::constant(Tensor::new(p.shape().to_vec(), y.iter().map(|&v| lit(v as f64)).collect())?);
    let not_y = y.scale(lit(-1.0))?.add_scalar(lit(1.0))?;
    let not_p = p.scale(lit(-1.0))?.add_scalar(lit(1.0))?;
    let ll = y.mul(&p.log()?)?.add(&not_y.mul(&not_p.log()?)?)?;
    Ok(ll.mean()?.scale(lit(-1.0))?)
}

/// [`bce_loss`] on plain values.
pub fn bce_value(p: &[f64], y: &[u8]) -> Result<f64> {
    check_batch(p.len(), y.len())?;
    let sum: f64 = p
        .iter()
        .zip(y)
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            if y == 1 {
                p.ln()
            } else {
                (1.0 - p).ln()
            }
        })
        .sum();
    Ok(-sum / p.len() as f64)
}

pub fn global_loss(losses: [f64; 3], w: &LossWeights) -> f64 {
    losses.iter().zip(w).map(|(l, w)| l * w).sum()
}

/// Σ w_k·L_k on graph values; zero-weight terms stay in the graph.
pub fn global_loss_var<T: Scalar>(losses: &[Var<T>; 3], w: &LossWeights) -> Result<Var<T>> {
    let mut total = losses[0].scale(lit(w[0]))?;
    for k in 1..3 {
        total = total.add(&losses[k].scale(lit(w[k]))?)?;
    }
    Ok(total)
}

/// Bias-corrected Adam with per-parameter moments.
#[derive(Clone, Debug)]
pub struct Adam<T: Scalar> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: BTreeMap<String, Tensor<T>>,
    v: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Default for Adam<T> {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }
}

impl<T: Scalar> Adam<T> {
    /// Updates every parameter; all gradients must be present first.
    pub fn step(&mut self, params: &mut BTreeMap<String, Tensor<T>>, grads: &BTreeMap<String, Tensor<T>>, lr: f64) -> Result<()> {
        let missing: Vec<&str> = params.keys().filter(|k| !grads.contains_key(*k)).map(String::as_str).collect();
        if !missing.is_empty() {
            return Err(Error::MissingGrad(missing.join(", ")));
        }
        for (name, g) in grads {
            let shape = params.get(name).map(|p| p.shape().to_vec());
            if shape.as_deref() != Some(g.shape()) {
                return Err(invalid(format!("gradient {name} does not match a parameter of its shape")));
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for (name, p) in params.iter_mut() {
            let g = &grads[name];
            let m = self.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
            let v = self.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
            for (((p, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                let gf = g.to_f64().unwrap_or(f64::NAN);
                let mf = b1 * m.to_f64().unwrap_or(0.0) + (1.0 - b1) * gf;
                let vf = b2 * v.to_f64().unwrap_or(0.0) + (1.0 - b2) * gf * gf;
                *m = lit(mf);
                *v = lit(vf);
                let step = lr * (mf / c1) / ((vf / c2).sqrt() + self.eps);
                if step != 0.0 {
                    *p = lit(p.to_f64().unwrap_or(f64::NAN) - step);
                }
            }
        }
        Ok(())
    }
}

/// `base · gammaᵏ` with `k = ⌊(epoch − 1)/step⌋`; epochs count from 1.
pub fn step_lr(epoch: usize, base: f64, step: usize, gamma: f64) -> f64 {
    let k = epoch.saturating_sub(1) / step.max(1);
    (0..k).fold(base, |lr, _| lr * gamma)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EarlyStop {
    pub stop: bool,
    /// 1-based epoch of the best (first strictly lowest) loss.
    pub best_epoch: usize,
}

/// Stops once `patience` epochs have passed without a strict improvement
/// on the running best.
pub fn early_stop(history: &[f64], patience: usize) -> EarlyStop {
    let mut best = 0;
    for (i, &l) in history.iter().enumerate() {
        if l < history[best] {
            best = i;
        }
    }
    EarlyStop {
        stop: !history.is_empty() && history.len() - 1 - best >= patience,
        best_epoch: best + 1,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_step: usize,
    pub lr_gamma: f64,
    pub patience: usize,
    pub loss_weights: LossWeights,
    /// Threads loading and augmenting clips; results are order-independent.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 256,
            lr: 1e-3,
            lr_step: 10,
            lr_gamma: 0.1,
            patience: 10,
            loss_weights: [1.0; 3],
            workers: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let mut need = |ok: bool, msg: &str| {
            if !ok {
                errs.push(format!("train.{msg}"));
            }
        };
        need(self.epochs >= 1, "epochs must be at least 1");
        need(self.batch_size >= 1, "batch_size must be at least 1");
        need(self.lr > 0.0 && self.lr.is_finite(), "lr must be positive");
        need(self.lr_step >= 1, "lr_step must be at least 1");
        need(self.lr_gamma > 0.0 && self.lr_gamma <= 1.0, "lr_gamma must lie in (0, 1]");
        need(self.patience >= 1, "patience must be at least 1");
        need(validate_weights(&self.loss_weights).is_ok(), "loss_weights must be finite, non-negative and not all zero");
        need(self.workers >= 1, "workers must be at least 1");
        errs
    }
}

/// Anything producing per-task probabilities for a batch.
pub trait Predictor {
    fn predict_batch(&mut self, batch: &Batch) -> Result<[Vec<f64>; 3]>;
}

impl Predictor for MmModel<f32> {
    fn predict_batch(&mut self, batch: &Batch) -> Result<[Vec<f64>; 3]> {
        let p = self.predict(Some(&batch.mel), Some(&batch.vol))?;
        Ok(p.map(|v| v.into_iter().map(f64::from).collect()))
    }
}

/// Probabilities and labels of a full pass plus the derived report.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub probs: [Vec<f64>; 3],
    pub labels: Vec<[u8; 3]>,
}

impl Evaluation {
    pub fn losses(&self) -> Result<[f64; 3]> {
        let mut out = [0.0; 3];
        for k in 0..3 {
            let y: Vec<u8> = self.labels.iter().map(|l| l[k]).collect();
            out[k] = bce_value(&self.probs[k], &y)?;
        }
        Ok(out)
    }
}

fn load_batch(data: &dyn ClipProvider, idx: &[usize], augment: Option<(&AugmentPolicy, &Rng)>, workers: usize) -> Result<Vec<Sample>> {
    let load = |i: usize| match augment {
        Some((policy, root)) => data.load(i, Some((policy, &mut root.split(i as u64)))),
        None => data.load(i, None),
    };
    if workers <= 1 || idx.len() <= 1 {
        return idx.iter().map(|&i| load(i)).collect();
    }
    let chunk = idx.len().div_ceil(workers);
    std::thread::scope(|s| {
        let handles: Vec<_> = idx
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(|&i| load(i)).collect::<Result<Vec<_>>>()))
            .collect();
        let mut out = Vec::with_capacity(idx.len());
        for h in handles {
            out.extend(h.join().expect("loader thread panicked")?);
        }
        Ok(out)
    })
}

/// Eval-mode pass over `data` in order.
pub fn evaluate(model: &mut dyn Predictor, data: &dyn ClipProvider, threshold: f64, batch_size: usize) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(invalid("cannot evaluate an empty dataset"));
    }
    let mut probs: [Vec<f64>; 3] = Default::default();
    let mut labels = Vec::with_capacity(data.len());
    let all: Vec<usize> = (0..data.len()).collect();
    for idx in all.chunks(batch_size.max(1)) {
        let batch = collate(&load_batch(data, idx, None, 1)?)?;
        let p = model.predict_batch(&batch)?;
        for k in 0..3 {
            probs[k].extend_from_slice(&p[k]);
        }
        labels.extend(batch.labels);
    }
    let report = MetricsReport::from_predictions(&probs, &labels, threshold)?;
    Ok(Evaluation { report, probs, labels })
}

#[derive(Clone, Debug)]
pub struct FitOptions {
    pub seed: u64,
    pub augment: AugmentPolicy,
    pub threshold: f64,
    /// Receives `epochs.tsv` and `best.mmc` when set.
    pub out_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_losses: [f64; 3],
    pub val_global_loss: f64,
    pub val_f1: [f64; 3],
    pub val_global_f1: f64,
}

pub const EPOCH_LOG_HEADER: &str = "epoch\tlr\ttrain_mental_demand\ttrain_effort\ttrain_temporal_demand\tval_global_loss\tval_f1_mental_demand\tval_f1_effort\tval_f1_temporal_demand";

impl EpochLog {
    pub fn to_tsv(&self) -> String {
        let [a, b, c] = self.train_losses;
        let [f, g, h] = self.val_f1;
        format!(
            "{}\t{:.3e}\t{a}\t{b}\t{c}\t{}\t{f}\t{g}\t{h}",
            self.epoch, self.lr, self.val_global_loss
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitReport {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub stopped_early: bool,
    /// Validation pass of the restored best parameters.
    pub best_val: Evaluation,
}

impl FitReport {
    pub fn log_text(&self) -> String {
        let mut s = format!("{EPOCH_LOG_HEADER}\n");
        for e in &self.epochs {
            let _ = writeln!(s, "{}", e.to_tsv());
        }
        s
    }
}

fn rng_tag(epoch: usize, batch: usize) -> u64 {
    ((epoch as u64) << 32) | batch as u64
}

/// Trains `model` on `train`, early-stopping on the global validation loss,
/// and leaves the best parameters in place.
pub fn fit(model: &mut MmModel<f32>, train: &dyn ClipProvider, val: &dyn ClipProvider, cfg: &TrainConfig, opts: &FitOptions) -> Result<FitReport> {
    let errs = cfg.validate();
    if !errs.is_empty() {
        return Err(Error::Config(errs.join("; ")));
    }
    if train.is_empty() || val.is_empty() {
        return Err(invalid("training and validation sets must be non-empty"));
    }
    if let Some(dir) = &opts.out_dir {
        std::fs::create_dir_all(dir).at(dir)?;
    }
    let root = Rng::new(opts.seed);
    let (order_rng, aug_rng, drop_rng) = (root.split(1), root.split(2).split(opts.augment.seed), root.split(3));
    let mut adam = Adam::<f32>::default();
    let mut logs: Vec<EpochLog> = Vec::new();
    let mut history = Vec::new();
    let mut best_store = model.store.clone();
    let mut stopped_early = false;
    for epoch in 1..=cfg.epochs {
        let lr = step_lr(epoch, cfg.lr, cfg.lr_step, cfg.lr_gamma);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order_rng.split(epoch as u64).shuffle(&mut order);
        let mut sums = [0.0; 3];
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let aug = opts.augment.enabled.then(|| (&opts.augment, aug_rng.split(rng_tag(epoch, b))));
            let samples = load_batch(train, idx, aug.as_ref().map(|(p, r)| (*p, r)), cfg.workers)?;
            let batch = collate(&samples)?;
            let mel = Var::constant(batch.mel);
            let vol = Var::constant(batch.vol);
            let config = model.config.clone();
            let mut sess = Session::new(&mut model.store, Mode::Train, drop_rng.split(rng_tag(epoch, b)), true);
            let f = mm_forward(&mut sess, &config, Some(&mel), Some(&vol))?;
            let mut losses = Vec::with_capacity(3);
            for k in 0..3 {
                let y: Vec<u8> = batch.labels.iter().map(|l| l[k]).collect();
                let l = bce_loss(&f.probs[k], &y)?;
                let v = l.value().item() as f64;
                if !v.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch, batch: b + 1, branch: TASKS[k] });
                }
                sums[k] += v * idx.len() as f64;
                losses.push(l);
            }
            let losses: [Var<f32>; 3] = losses.try_into().expect("three tasks");
            global_loss_var(&losses, &cfg.loss_weights)?.backward()?;
            let grads = sess.grads()?;
            drop(sess);
            if let Some((name, _)) = grads.iter().find(|(_, g)| !g.is_finite()) {
                return Err(invalid(format!("non-finite gradient for {name} at epoch {epoch}, batch {}", b + 1)));
            }
            adam.step(&mut model.store.params, &grads, lr)?;
        }
        let val_eval = evaluate(model, val, opts.threshold, cfg.batch_size)?;
        let val_losses = val_eval.losses()?;
        let val_global_loss = global_loss(val_losses, &cfg.loss_weights);
        if !val_global_loss.is_finite() {
            return Err(invalid(format!("non-finite validation loss at epoch {epoch}")));
        }
        let log = EpochLog {
            epoch,
            lr,
            train_losses: sums.map(|s| s / train.len() as f64),
            val_global_loss,
            val_f1: [0, 1, 2].map(|k| val_eval.report.tasks[k].weighted_f1),
            val_global_f1: val_eval.report.global_micro_f1,
        };
        info!(
            "epoch {epoch}: lr {lr:.1e}, val loss {val_global_loss:.4}, val global F1 {:.4}",
            log.val_global_f1
        );
        logs.push(log);
        history.push(val_global_loss);
        let decision = early_stop(&history, cfg.patience);
        if decision.best_epoch == epoch {
            best_store = model.store.clone();
            if let Some(dir) = &opts.out_dir {
                save_checkpoint(&dir.join("best.mmc"), &best_store)?;
            }
        }
        if let Some(dir) = &opts.out_dir {
            let report = FitReport {
                epochs: logs.clone(),
                best_epoch: decision.best_epoch,
                stopped_early: false,
                best_val: val_eval.clone(),
            };
            let p = dir.join("epochs.tsv");
            std::fs::write(&p, report.log_text()).at(&p)?;
        }
        if decision.stop {
            info!("early stop after epoch {epoch}; best epoch {}", decision.best_epoch);
            stopped_early = true;
            break;
        }
    }
    model.store = best_store;
    let best_epoch = early_stop(&history, cfg.patience).best_epoch;
    let best_val = evaluate(model, val, opts.threshold, cfg.batch_size)?;
    Ok(FitReport {
        epochs: logs,
        best_epoch,
        stopped_early,
        best_val,
    })
}
