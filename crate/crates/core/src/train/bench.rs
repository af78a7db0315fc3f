//! Training throughput measurement on synthetic data.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::model::{adam_step, backward_into, init_params, AdamConfig, AdamState, KsaeGrads, LossNorm, ModelError};

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub d: usize,
    pub n: usize,
    pub k: usize,
    pub batch_size: usize,
    /// Timed steps.
    pub steps: usize,
    /// Untimed steps run first.
    pub warmup: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            d: 1280,
            n: 81_920,
            k: 32,
            batch_size: 64,
            steps: 5,
            warmup: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub threads: usize,
    pub seconds: f64,
    pub rows_per_sec: f64,
    /// `rows * n * d` per second: dense-equivalent encoder work.
    pub latent_dims_per_sec: f64,
    pub final_loss: f64,
}

impl std::fmt::Display for BenchReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let c = &self.config;
        write!(
            f,
            "d={} n={} k={} batch={} steps={} threads={}: {:.3}s, {:.1} rows/s, {:.3e} latent-dims/s",
            c.d,
            c.n,
            c.k,
            c.batch_size,
            c.steps,
            self.threads,
            self.seconds,
            self.rows_per_sec,
            self.latent_dims_per_sec
        )
    }
}

/// f32 train steps (backward, Adam, renorm) on Gaussian inputs.
pub fn bench(cfg: &BenchConfig) -> Result<BenchReport, ModelError> {
    if cfg.steps == 0 || cfg.batch_size == 0 {
        return Err(ModelError::InvalidDims("bench needs steps > 0 and batch_size > 0".into()));
    }
    let mut params = init_params::<f32>(cfg.d, cfg.n, cfg.k, cfg.seed, None)?;
    let mut adam = AdamState::new(&params, AdamConfig::default());
    let mut grads = KsaeGrads::zeros_like(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let batch: Vec<Vec<f32>> = (0..cfg.batch_size)
        .map(|_| (0..cfg.d).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    let step = |params: &mut _, adam: &mut _, grads: &mut _| -> Result<f64, ModelError> {
        let res = backward_into(params, &batch, LossNorm::PerDimension, grads)?;
        adam_step(params, grads, adam, 1e-4)?;
        Ok(res.loss as f64)
    };
    for _ in 0..cfg.warmup {
        step(&mut params, &mut adam, &mut grads)?;
    }
    let start = Instant::now();
    let mut final_loss = 0.0;
    for _ in 0..cfg.steps {
        final_loss = step(&mut params, &mut adam, &mut grads)?;
    }
    let seconds = start.elapsed().as_secs_f64().max(1e-9);
    let rows = (cfg.steps * cfg.batch_size) as f64;
    Ok(BenchReport {
        config: cfg.clone(),
        threads: rayon::current_num_threads(),
        seconds,
        rows_per_sec: rows / seconds,
        latent_dims_per_sec: rows * cfg.n as f64 * cfg.d as f64 / seconds,
        final_loss,
    })
}
