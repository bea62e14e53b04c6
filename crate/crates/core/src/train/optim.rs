//! AdamW with per-group learning rates, and a reduce-on-plateau scheduler.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamGroup, ParamStore};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monitor {
    #[default]
    ValLoss,
    ValAccuracy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlateauConfig {
    pub factor: f64,
    pub patience: usize,
    /// Minimum absolute change that counts as an improvement.
    pub threshold: f64,
    pub monitor: Monitor,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        Self {
            factor: 0.1,
            patience: 3,
            threshold: 1e-4,
            monitor: Monitor::ValLoss,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub lr_backbone: f64,
    pub lr_quantum_and_head: f64,
    pub betas: [f64; 2],
    pub eps: f64,
    pub weight_decay: f64,
    pub plateau: PlateauConfig,
}

/// Desk-scale defaults for a backbone trained from random initialisation.
/// [`OptimConfig::pretrained_backbone`] gives the rates suited to a backbone
/// that starts from pretrained weights.
impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr_backbone: 1e-3,
            lr_quantum_and_head: 1e-2,
            betas: [0.9, 0.999],
            eps: 1e-8,
            weight_decay: 1e-2,
            plateau: PlateauConfig::default(),
        }
    }
}

impl OptimConfig {
    /// Backbone 1e-5, circuit and head 1e-3.
    pub fn pretrained_backbone() -> Self {
        Self {
            lr_backbone: 1e-5,
            lr_quantum_and_head: 1e-3,
            ..Self::default()
        }
    }

    /// `allow_zero_lr` admits zero rates (used to check that a no-op step is exact).
    pub fn validate(&self, allow_zero_lr: bool) -> Result<()> {
        let bad = |what: &str, v: f64| Err(Error::Config(format!("optim.{what} is out of range: {v}")));
        for (what, lr) in [("lr_backbone", self.lr_backbone), ("lr_quantum_and_head", self.lr_quantum_and_head)] {
            if !lr.is_finite() || lr < 0.0 || (lr == 0.0 && !allow_zero_lr) {
                return bad(what, lr);
            }
        }
        if self.lr_quantum_and_head < self.lr_backbone {
            return Err(Error::Config(format!(
                "optim.lr_quantum_and_head ({}) must be at least optim.lr_backbone ({})",
                self.lr_quantum_and_head, self.lr_backbone
            )));
        }
        for (i, b) in self.betas.iter().enumerate() {
            if !(0.0..1.0).contains(b) {
                return bad(&format!("betas[{i}]"), *b);
            }
        }
        if !(self.eps > 0.0) {
            return bad("eps", self.eps);
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return bad("weight_decay", self.weight_decay);
        }
        let p = &self.plateau;
        if !(p.factor > 0.0 && p.factor <= 1.0) {
            return bad("plateau.factor", p.factor);
        }
        if p.patience == 0 {
            return Err(Error::Config("optim.plateau.patience must be at least 1".into()));
        }
        if !(p.threshold >= 0.0) {
            return bad("plateau.threshold", p.threshold);
        }
        Ok(())
    }

    pub fn base_lr(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Backbone => self.lr_backbone,
            ParamGroup::QuantumAndHead => self.lr_quantum_and_head,
        }
    }
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    cfg: OptimConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    /// Scheduler multiplier applied to both base rates.
    lr_scale: f64,
}

impl AdamW {
    pub fn new(cfg: OptimConfig, params: &ParamStore) -> Self {
        let m: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.tensor.len()]).collect();
        Self {
            cfg,
            step: 0,
            v: m.clone(),
            m,
            lr_scale: 1.0,
        }
    }

    pub fn config(&self) -> &OptimConfig {
        &self.cfg
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn lr_scale(&self) -> f64 {
        self.lr_scale
    }

    pub fn set_lr_scale(&mut self, scale: f64) {
        self.lr_scale = scale;
    }

    /// Current `(backbone, quantum_and_head)` learning rates.
    pub fn current_lrs(&self) -> (f64, f64) {
        (self.cfg.lr_backbone * self.lr_scale, self.cfg.lr_quantum_and_head * self.lr_scale)
    }

    /// One update of every non-frozen parameter from its accumulated gradient.
    pub fn step(&mut self, params: &mut ParamStore) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::Usage("optimizer state does not match the parameter registry".into()));
        }
        if let Some(p) = params.iter().find(|p| !p.frozen && p.tensor.grad().is_none()) {
            return Err(Error::Usage(format!("parameter `{}` has no gradient; run backward before step", p.name)));
        }
        self.step += 1;
        let [b1, b2] = self.cfg.betas;
        let t = self.step as i32;
        let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
        let (eps, wd) = (self.cfg.eps, self.cfg.weight_decay);
        for (i, p) in params.iter_mut().enumerate() {
            if p.frozen {
                continue;
            }
            let lr = self.cfg.base_lr(p.group) * self.lr_scale;
            let g = p.tensor.grad().expect("checked above").to_vec();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (k, w) in p.tensor.data_mut().iter_mut().enumerate() {
                *w -= lr * wd * *w;
                m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                *w -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Multiplies the learning rates by `factor` once the monitored value has
/// failed to improve by more than `threshold` for `patience` consecutive
/// epochs; the bad-epoch counter then restarts.
#[derive(Clone, Debug, PartialEq)]
pub struct Plateau {
    cfg: PlateauConfig,
    best: Option<f64>,
    bad_epochs: usize,
    multiplier: f64,
}

impl Plateau {
    pub fn new(cfg: PlateauConfig) -> Self {
        Self {
            cfg,
            best: None,
            bad_epochs: 0,
            multiplier: 1.0,
        }
    }

    pub fn multiplier(&self) -> f64 {
        self.multiplier
    }

    /// Records one epoch's monitored value; returns true when a reduction fired.
    pub fn observe(&mut self, value: f64) -> bool {
        let improved = match (self.best, self.cfg.monitor) {
            (None, _) => true,
            (Some(b), Monitor::ValLoss) => value < b - self.cfg.threshold,
            (Some(b), Monitor::ValAccuracy) => value > b + self.cfg.threshold,
        };
        if improved {
            self.best = Some(value);
            self.bad_epochs = 0;
            return false;
        }
        self.bad_epochs += 1;
        if self.bad_epochs >= self.cfg.patience {
            self.multiplier *= self.cfg.factor;
            self.bad_epochs = 0;
            return true;
        }
        false
    }
}
