use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kv::KvFile;
use crate::losses::LossWeights;

/// Which student loss terms are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ablation {
    pub lr: bool,
    pub hr: bool,
    pub net: bool,
    pub distill: bool,
}

impl Ablation {
    pub const ALL: Ablation = Ablation {
        lr: true,
        hr: true,
        net: true,
        distill: true,
    };
}

impl FromStr for Ablation {
    type Err = Error;

    /// Comma-separated subset of `LR`, `HR`, `net`, `distill` (any case).
    fn from_str(s: &str) -> Result<Self> {
        let mut a = Ablation {
            lr: false,
            hr: false,
            net: false,
            distill: false,
        };
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let slot = match part.to_ascii_lowercase().as_str() {
                "lr" => &mut a.lr,
                "hr" => &mut a.hr,
                "net" => &mut a.net,
                "distill" => &mut a.distill,
                _ => return Err(Error::Config(format!("unknown loss term `{part}` (expected LR, HR, net, distill)"))),
            };
            *slot = true;
        }
        if !(a.lr || a.hr || a.net || a.distill) {
            return Err(Error::Config("ablation enables no loss term".into()));
        }
        Ok(a)
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = [(self.lr, "LR"), (self.hr, "HR"), (self.net, "net"), (self.distill, "distill")]
            .into_iter()
            .filter_map(|(on, n)| on.then_some(n))
            .collect();
        f.write_str(&names.join(","))
    }
}

/// One-cycle learning rate: linear ramp from `max * min_ratio` to `max` over
/// the first `warmup_frac` of all steps, then cosine decay back to
/// `max * min_ratio` at the last step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OneCycle {
    pub warmup_frac: f64,
    pub min_lr_ratio: f64,
}

impl Default for OneCycle {
    fn default() -> Self {
        OneCycle {
            warmup_frac: 0.3,
            min_lr_ratio: 1.0 / 25.0,
        }
    }
}

impl OneCycle {
    pub fn peak_step(&self, total: u64) -> u64 {
        (self.warmup_frac * total as f64).round() as u64
    }

    pub fn lr(&self, max_lr: f64, step: u64, total: u64) -> f64 {
        let lo = max_lr * self.min_lr_ratio;
        let peak = self.peak_step(total);
        if step < peak {
            return lo + (max_lr - lo) * step as f64 / peak as f64;
        }
        let tail = total.saturating_sub(1).saturating_sub(peak);
        if tail == 0 {
            return max_lr;
        }
        let t = ((step - peak) as f64 / tail as f64).min(1.0);
        lo + (max_lr - lo) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub max_lr: f64,
    pub weight_decay: f64,
    pub schedule: OneCycle,
    pub loss: LossWeights,
    pub mu: f64,
    pub seed: u64,
    pub ablation: Ablation,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    /// Flip/rotate student samples.
    pub augment: bool,
    pub holdout_frac: f64,
    /// Evaluate the held-out split every this many epochs (and after the last).
    pub eval_every: usize,
    pub bn_momentum: f64,
    pub n_bins: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            epochs: 100,
            batch_size: 4,
            max_lr: 3.5e-4,
            weight_decay: 1e-2,
            schedule: OneCycle::default(),
            loss: LossWeights::default(),
            mu: 0.5,
            seed: 0,
            ablation: Ablation::ALL,
            grad_clip: None,
            augment: true,
            holdout_frac: 0.1,
            eval_every: 1,
            bn_momentum: 0.1,
            n_bins: 64,
        }
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "epochs",
    "batch_size",
    "max_lr",
    "weight_decay",
    "warmup_frac",
    "min_lr_ratio",
    "alpha",
    "beta",
    "gamma",
    "lambda",
    "si_a",
    "si_b",
    "distill_weights",
    "chamfer_points",
    "affinity_cap",
    "mu",
    "seed",
    "ablation",
    "grad_clip",
    "augment",
    "holdout_frac",
    "eval_every",
    "bn_momentum",
    "n_bins",
];

impl TrainingConfig {
    /// Teacher pretraining recipe: no augmentation, a shorter run at a higher
    /// peak rate.
    pub fn teacher_default() -> Self {
        TrainingConfig {
            epochs: 60,
            max_lr: 1e-3,
            augment: false,
            ..Default::default()
        }
    }

    /// Defaults overridden by whatever keys `kv` sets.
    pub fn from_kv(kv: &KvFile) -> Result<Self> {
        Self::from_kv_over(TrainingConfig::default(), kv)
    }

    /// `base` overridden by whatever keys `kv` sets.
    pub fn from_kv_over(base: TrainingConfig, kv: &KvFile) -> Result<Self> {
        kv.check_keys(CONFIG_KEYS)?;
        let mut c = base;
        macro_rules! take {
            ($key:literal, $slot:expr) => {
                if let Some(v) = kv.get($key)? {
                    $slot = v;
                }
            };
        }
        take!("epochs", c.epochs);
        take!("batch_size", c.batch_size);
        take!("max_lr", c.max_lr);
        take!("weight_decay", c.weight_decay);
        take!("warmup_frac", c.schedule.warmup_frac);
        take!("min_lr_ratio", c.schedule.min_lr_ratio);
        take!("alpha", c.loss.alpha);
        take!("beta", c.loss.beta);
        take!("gamma", c.loss.gamma);
        take!("lambda", c.loss.lambda);
        take!("si_a", c.loss.a);
        take!("si_b", c.loss.b_si);
        take!("chamfer_points", c.loss.chamfer_points);
        take!("affinity_cap", c.loss.affinity_cap);
        take!("mu", c.mu);
        take!("seed", c.seed);
        take!("ablation", c.ablation);
        take!("augment", c.augment);
        take!("holdout_frac", c.holdout_frac);
        take!("eval_every", c.eval_every);
        take!("bn_momentum", c.bn_momentum);
        take!("n_bins", c.n_bins);
        if let Some(w) = kv.get_list("distill_weights")? {
            c.loss.w = w;
        }
        if let Some(v) = kv.raw("grad_clip") {
            c.grad_clip = match v {
                "none" | "off" => None,
                _ => Some(kv.require("grad_clip")?),
            };
        }
        c.validate()?;
        Ok(c)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_kv(&KvFile::read(path)?)
    }

    /// Every key, so the file alone reproduces the run.
    pub fn to_kv(&self) -> KvFile {
        let mut kv = KvFile::default();
        kv.set("epochs", self.epochs);
        kv.set("batch_size", self.batch_size);
        kv.set("max_lr", self.max_lr);
        kv.set("weight_decay", self.weight_decay);
        kv.set("warmup_frac", self.schedule.warmup_frac);
        kv.set("min_lr_ratio", self.schedule.min_lr_ratio);
        kv.set("alpha", self.loss.alpha);
        kv.set("beta", self.loss.beta);
        kv.set("gamma", self.loss.gamma);
        kv.set("lambda", self.loss.lambda);
        kv.set("si_a", self.loss.a);
        kv.set("si_b", self.loss.b_si);
        let w: Vec<String> = self.loss.w.iter().map(f64::to_string).collect();
        kv.set("distill_weights", w.join(","));
        kv.set("chamfer_points", self.loss.chamfer_points);
        kv.set("affinity_cap", self.loss.affinity_cap);
        kv.set("mu", self.mu);
        kv.set("seed", self.seed);
        kv.set("ablation", self.ablation);
        kv.set("grad_clip", self.grad_clip.map_or("none".to_string(), |v| v.to_string()));
        kv.set("augment", self.augment);
        kv.set("holdout_frac", self.holdout_frac);
        kv.set("eval_every", self.eval_every);
        kv.set("bn_momentum", self.bn_momentum);
        kv.set("n_bins", self.n_bins);
        kv
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.epochs == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return fail("epochs, batch_size and eval_every must be at least 1".into());
        }
        if !(self.max_lr >= 0.0 && self.max_lr.is_finite()) {
            return fail(format!("max_lr must be a nonnegative number, got {}", self.max_lr));
        }
        if !(self.weight_decay >= 0.0) {
            return fail("weight_decay must be nonnegative".into());
        }
        let s = self.schedule;
        if !(0.0..1.0).contains(&s.warmup_frac) || !(s.min_lr_ratio > 0.0 && s.min_lr_ratio <= 1.0) {
            return fail("need warmup_frac in [0, 1) and min_lr_ratio in (0, 1]".into());
        }
        if !(self.mu > 0.0 && self.mu <= 1.0) {
            return fail(format!("mu must lie in (0, 1], got {}", self.mu));
        }
        if !(0.0..1.0).contains(&self.holdout_frac) {
            return fail("holdout_frac must lie in [0, 1)".into());
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return fail("bn_momentum must lie in [0, 1]".into());
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return fail("grad_clip must be positive".into());
        }
        if self.n_bins < 2 {
            return fail("n_bins must be at least 2".into());
        }
        self.loss.validate().map_err(|e| Error::Config(e.to_string()))
    }

    /// Loss weights with the disabled terms zeroed.
    pub fn effective_weights(&self) -> LossWeights {
        let mut w = self.loss.clone();
        if !self.ablation.lr {
            w.alpha = 0.0;
        }
        if !self.ablation.hr {
            w.beta = 0.0;
        }
        if !self.ablation.net {
            w.gamma = 0.0;
        }
        w
    }
}
