use crate::kv::{KvDoc, KvError};
use crate::model::{AdamConfig, LossNorm};
use crate::real::Precision;
use crate::store::DatasetStats;

/// How the reconstruction loss is normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossNormKind {
    #[default]
    PerDim,
    Variance,
}

impl LossNormKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossNormKind::PerDim => "per_dim",
            LossNormKind::Variance => "variance",
        }
    }

    pub fn resolve(self, stats: Option<&DatasetStats>) -> LossNorm {
        match (self, stats) {
            (LossNormKind::Variance, Some(s)) if s.total_variance() > 0.0 => {
                LossNorm::TotalVariance(s.total_variance())
            }
            _ => LossNorm::PerDimension,
        }
    }
}

impl std::str::FromStr for LossNormKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "per_dim" => Ok(LossNormKind::PerDim),
            "variance" => Ok(LossNormKind::Variance),
            other => Err(format!("unknown loss_norm {other:?} (per_dim | variance)")),
        }
    }
}

impl std::fmt::Display for LossNormKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub warmup_steps: u64,
    pub batch_size: usize,
    /// Optimizer steps; samples consumed = max_steps * batch_size.
    pub max_steps: u64,
    pub k: usize,
    pub expansion_factor: usize,
    pub seed: u64,
    pub checkpoint_every: u64,
    pub shuffle_buffer: usize,
    /// Trailing window, in samples, for the dead-latent fraction.
    pub dead_window: u64,
    pub loss_norm: LossNormKind,
    pub precision: Precision,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 4e-4,
            warmup_steps: 500,
            batch_size: 256,
            max_steps: 10_000,
            k: 32,
            expansion_factor: 64,
            seed: 0,
            checkpoint_every: 1_000,
            shuffle_buffer: 65_536,
            dead_window: 10_000,
            loss_norm: LossNormKind::PerDim,
            precision: Precision::F32,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn latent_dim(&self, d: usize) -> usize {
        d * self.expansion_factor
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(format!("lr must be positive, got {}", self.lr));
        }
        let positive = [
            ("batch_size", self.batch_size as u64),
            ("k", self.k as u64),
            ("expansion_factor", self.expansion_factor as u64),
            ("checkpoint_every", self.checkpoint_every),
            ("shuffle_buffer", self.shuffle_buffer as u64),
            ("dead_window", self.dead_window),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(format!("{name} must be positive"));
            }
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err("adam betas must lie in [0, 1)".into());
        }
        if !(self.adam_eps.is_finite() && self.adam_eps > 0.0) {
            return Err("adam_eps must be positive".into());
        }
        Ok(())
    }

    /// Checks that depend on the data dimension.
    pub fn validate_for_dim(&self, d: usize) -> Result<(), String> {
        self.validate()?;
        let n = self.latent_dim(d);
        if self.k > n {
            return Err(format!("k = {} exceeds latent dim {n} = {d} x {}", self.k, self.expansion_factor));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvDoc {
        let mut doc = KvDoc::new();
        let fields: [(&str, String); 15] = [
            ("lr", self.lr.to_string()),
            ("warmup_steps", self.warmup_steps.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("max_steps", self.max_steps.to_string()),
            ("k", self.k.to_string()),
            ("expansion_factor", self.expansion_factor.to_string()),
            ("seed", self.seed.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("shuffle_buffer", self.shuffle_buffer.to_string()),
            ("dead_window", self.dead_window.to_string()),
            ("loss_norm", self.loss_norm.to_string()),
            ("precision", self.precision.to_string()),
            ("adam_beta1", self.adam_beta1.to_string()),
            ("adam_beta2", self.adam_beta2.to_string()),
            ("adam_eps", self.adam_eps.to_string()),
        ];
        for (k, v) in fields {
            doc.push(k, v).expect("static keys are valid");
        }
        doc
    }

    pub const KEYS: [&'static str; 15] = [
        "lr",
        "warmup_steps",
        "batch_size",
        "max_steps",
        "k",
        "expansion_factor",
        "seed",
        "checkpoint_every",
        "shuffle_buffer",
        "dead_window",
        "loss_norm",
        "precision",
        "adam_beta1",
        "adam_beta2",
        "adam_eps",
    ];

    /// Apply every key in `doc` on top of `self`. Unknown keys are errors.
    pub fn apply_kv(&mut self, doc: &KvDoc) -> Result<(), KvError> {
        for (key, _) in doc.entries() {
            if !Self::KEYS.contains(&key) {
                return Err(KvError::Unknown(key.to_string()));
            }
        }
        macro_rules! take {
            ($field:ident) => {
                if let Some(v) = doc.parsed(stringify!($field))? {
                    self.$field = v;
                }
            };
        }
        take!(lr);
        take!(warmup_steps);
        take!(batch_size);
        take!(max_steps);
        take!(k);
        take!(expansion_factor);
        take!(seed);
        take!(checkpoint_every);
        take!(shuffle_buffer);
        take!(dead_window);
        take!(loss_norm);
        take!(precision);
        take!(adam_beta1);
        take!(adam_beta2);
        take!(adam_eps);
        Ok(())
    }

    pub fn from_kv(doc: &KvDoc) -> Result<Self, KvError> {
        let mut cfg = Self::default();
        cfg.apply_kv(doc)?;
        Ok(cfg)
    }
}

/// Linear warmup from 0 to `cfg.lr` over `warmup_steps`, then constant.
pub fn lr_schedule(step: u64, cfg: &TrainConfig) -> f64 {
    if cfg.warmup_steps == 0 || step >= cfg.warmup_steps {
        cfg.lr
    } else {
        cfg.lr * step as f64 / cfg.warmup_steps as f64
    }
}
