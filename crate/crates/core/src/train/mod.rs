//! Optimisation loop, evaluation and best-checkpoint retention.

mod metrics;
mod optim;

pub use metrics::{auc, history_csv, timing_csv, Confusion, MetricsReport, Rates, HISTORY_HEADER, TIMING_HEADER};
pub use optim::{AdamW, Monitor, OptimConfig, Plateau, PlateauConfig};

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::backbone::{ForwardOptions, HybridModel};
use crate::data::{augment, to_batch, AugmentPolicy, Sample};
use crate::error::{Error, Result};
use crate::rng::{self, streams};

pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const HISTORY_FILE: &str = "history.csv";
pub const TIMING_FILE: &str = "timing.csv";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSettings {
    pub batch_size: usize,
    pub seed: u64,
    pub augment: AugmentPolicy,
    pub threshold: f64,
    /// Samples per inference chunk during evaluation.
    pub eval_chunk: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            batch_size: 16,
            seed: 0,
            augment: AugmentPolicy::default(),
            threshold: 0.5,
            eval_chunk: 64,
        }
    }
}

/// Range of every circuit input angle seen during training.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngleMonitor {
    pub count: u64,
    pub min: f64,
    pub max: f64,
    /// Angles outside the open interval (−π, π), or non-finite.
    pub violations: u64,
}

impl Default for AngleMonitor {
    fn default() -> Self {
        Self {
            count: 0,
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
            violations: 0,
        }
    }
}

impl AngleMonitor {
    pub fn record(&mut self, angles: &[f64]) {
        use std::f64::consts::PI;
        for &a in angles {
            self.count += 1;
            self.min = self.min.min(a);
            self.max = self.max.max(a);
            if !(a > -PI && a < PI) {
                self.violations += 1;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub rates: Rates,
    pub probabilities: Vec<f64>,
    pub labels: Vec<u8>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn bce(logit: f64, y: f64) -> f64 {
    logit.max(0.0) - logit * y + (-logit.abs()).exp().ln_1p()
}

/// Deterministic inference over `samples`: no augmentation, no gradients.
pub fn evaluate(model: &HybridModel, samples: &[Sample], threshold: f64, chunk: usize) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::Data("cannot evaluate an empty dataset".into()));
    }
    let size = model.config().backbone.input_size;
    let mut logits = Vec::with_capacity(samples.len());
    for part in samples.chunks(chunk.max(1)) {
        let x = to_batch(part.iter().map(|s| &s.image), size)?;
        logits.extend(model.logits(&x, chunk)?);
    }
    let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    let loss = logits.iter().zip(&labels).map(|(&l, &y)| bce(l, f64::from(y))).sum::<f64>() / samples.len() as f64;
    if !loss.is_finite() {
        return Err(Error::Numerical(format!("non-finite evaluation loss {loss}")));
    }
    let probabilities: Vec<f64> = logits.iter().map(|&l| sigmoid(l)).collect();
    let rates = Rates::from_scores(&probabilities, &labels, threshold);
    if rates.auc.is_none() {
        log::warn!("evaluation set holds a single class; AUC is undefined");
    }
    Ok(Evaluation {
        loss,
        rates,
        probabilities,
        labels,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub mean_loss: f64,
    pub seconds: f64,
}

fn augment_index(epoch: usize, sample: usize) -> u64 {
    ((epoch as u64) << 32) | sample as u64
}

/// One pass over `samples` in shuffled mini-batches. Each batch is augmented
/// (per-sample streams keyed by epoch and sample index), standardised, run
/// forward and backward, and applied with one optimiser step.
pub fn train_epoch(
    model: &mut HybridModel,
    opt: &mut AdamW,
    samples: &[Sample],
    settings: &TrainSettings,
    epoch: usize,
    monitor: &mut AngleMonitor,
) -> Result<EpochStats> {
    if samples.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    if settings.batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let start = Instant::now();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut rng::substream(settings.seed, streams::SHUFFLE, epoch as u64));
    let size = model.config().backbone.input_size;
    let mut total = 0.0;
    for (b, idx) in order.chunks(settings.batch_size).enumerate() {
        let images: Vec<Tensor> = idx
            .par_iter()
            .map(|&i| {
                let mut r = rng::substream(settings.seed, streams::AUGMENT, augment_index(epoch, i));
                augment(&samples[i], &settings.augment, &mut r).map(|s| s.image)
            })
            .collect::<Result<_>>()?;
        let labels: Vec<f64> = idx.iter().map(|&i| f64::from(samples[i].label)).collect();
        let x = to_batch(&images, size)?;
        let mut pass = model.forward_pass(&x, &ForwardOptions::training())?;
        monitor.record(pass.angles().data());
        let loss = pass.bce_loss(&labels)?;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("loss is {loss} at epoch {epoch}, batch {b}")));
        }
        model.backward(&mut pass)?;
        if let Some(p) = model.params().iter().find(|p| p.tensor.grad().is_some_and(|g| g.iter().any(|v| !v.is_finite()))) {
            return Err(Error::Numerical(format!(
                "non-finite gradient for `{}` at epoch {epoch}, batch {b}",
                p.name
            )));
        }
        opt.step(model.params_mut())?;
        model.params_mut().zero_grads();
        total += loss * idx.len() as f64;
    }
    Ok(EpochStats {
        mean_loss: total / samples.len() as f64,
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitConfig {
    pub epochs: usize,
    pub optim: OptimConfig,
    pub settings: TrainSettings,
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub history: Vec<MetricsReport>,
    /// 1-based epoch of the retained checkpoint; `None` when no epoch ran.
    pub best_epoch: Option<usize>,
    pub best_model: HybridModel,
    pub angles: AngleMonitor,
}

fn checkpoint_extra(epoch: usize, val_accuracy: Option<f64>) -> serde_json::Value {
    serde_json::json!({ "epoch": epoch, "val_accuracy": val_accuracy })
}

fn write_atomic(path: &Path, text: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Trains for `cfg.epochs`, evaluating on `val` after every epoch and
/// stepping the plateau scheduler. The model with the best validation
/// accuracy is retained (ties keep the earlier epoch). With `out_dir`, the
/// last and best checkpoints and the history files are rewritten after every
/// epoch, so an interrupted run leaves the last completed epoch on disk.
pub fn fit(
    model: &mut HybridModel,
    train: &[Sample],
    val: &[Sample],
    cfg: &FitConfig,
    out_dir: Option<&Path>,
) -> Result<FitOutcome> {
    cfg.optim.validate(true)?;
    cfg.settings.augment.validate()?;
    if val.is_empty() {
        return Err(Error::Data("validation set is empty".into()));
    }
    let paths = out_dir.map(|d| {
        (
            d.join(BEST_CHECKPOINT),
            d.join(LAST_CHECKPOINT),
            d.join(HISTORY_FILE),
            d.join(TIMING_FILE),
        )
    });
    let save = |m: &HybridModel, p: &PathBuf, epoch: usize, acc: Option<f64>| m.save(p, &checkpoint_extra(epoch, acc));
    if let Some((best, last, hist, timing)) = &paths {
        save(model, last, 0, None)?;
        save(model, best, 0, None)?;
        write_atomic(hist, &history_csv(&[]))?;
        write_atomic(timing, &timing_csv(&[]))?;
    }

    let mut opt = AdamW::new(cfg.optim.clone(), model.params());
    let mut plateau = Plateau::new(cfg.optim.plateau.clone());
    let mut monitor = AngleMonitor::default();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, HybridModel)> = None;
    for epoch in 1..=cfg.epochs {
        let lrs = opt.current_lrs();
        let stats = train_epoch(model, &mut opt, train, &cfg.settings, epoch, &mut monitor)?;
        let eval_start = Instant::now();
        let ev = evaluate(model, val, cfg.settings.threshold, cfg.settings.eval_chunk)?;
        let seconds = stats.seconds + eval_start.elapsed().as_secs_f64();
        let report = MetricsReport::new(epoch, stats.mean_loss, ev.loss, &ev.rates, lrs, seconds);
        log::info!(
            "epoch {epoch}: train_loss {:.4} val_loss {:.4} val_acc {:.4} ({:.1}s)",
            report.train_loss,
            report.val_loss,
            report.accuracy,
            seconds
        );
        let monitored = match cfg.optim.plateau.monitor {
            Monitor::ValLoss => ev.loss,
            Monitor::ValAccuracy => ev.rates.accuracy,
        };
        if plateau.observe(monitored) {
            log::info!("plateau: learning-rate multiplier now {}", plateau.multiplier());
        }
        opt.set_lr_scale(plateau.multiplier());
        history.push(report);

        let improved = best.as_ref().is_none_or(|(_, acc, _)| ev.rates.accuracy > *acc);
        if improved {
            best = Some((epoch, ev.rates.accuracy, model.clone()));
        }
        if let Some((best_path, last, hist, timing)) = &paths {
            save(model, last, epoch, Some(ev.rates.accuracy))?;
            if improved {
                save(model, best_path, epoch, Some(ev.rates.accuracy))?;
            }
            write_atomic(hist, &history_csv(&history))?;
            write_atomic(timing, &timing_csv(&history))?;
        }
    }
    let (best_epoch, best_model) = match best {
        Some((e, _, m)) => (Some(e), m),
        None => (None, model.clone()),
    };
    Ok(FitOutcome {
        history,
        best_epoch,
        best_model,
        angles: monitor,
    })
}

#[cfg(test)]
mod tests;
