//! Streaming k-SAE training.
//!
//! A producer thread reads, pools and shuffles rows and hands batches over a
//! bounded channel; the calling thread runs backward + Adam + decoder
//! renormalization. Step `t` (1-based) uses `lr_schedule(t)`. Resuming
//! replays the shuffled stream up to the checkpoint's `samples_seen`, so a
//! resumed run follows the same batches as an uninterrupted one.

pub mod bench;
pub mod checkpoint;
pub mod config;
pub mod metrics;
pub mod shuffle;

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

pub use bench::{bench, BenchConfig, BenchReport};
pub use checkpoint::{checkpoint_precision, Checkpoint, CheckpointError};
pub use config::{lr_schedule, LossNormKind, TrainConfig};
pub use metrics::{
    dead_latent_report, DeadLatentReport, LivenessTracker, StepMetrics, TrainMetrics, METRICS_HEADER,
};
pub use shuffle::{BoundedShuffle, EpochStream};

use crate::model::{adam_step, backward_into, init_params, AdamState, KsaeGrads, ModelError};
use crate::real::Real;
use crate::store::{batched, Prefetch, RowSource, ShardError, StatsAccumulator};

pub const CHECKPOINT_FILE: &str = "checkpoint.ksae";
pub const METRICS_FILE: &str = "metrics.log";

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Shard(#[from] ShardError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("non-finite loss at step {step}; last good checkpoint: {}", last_checkpoint.map_or("none".to_string(), |s| format!("step {s}")))]
    NonFiniteLoss {
        step: u64,
        last_checkpoint: Option<u64>,
    },
}

impl TrainError {
    pub fn is_validation(&self) -> bool {
        match self {
            TrainError::Config(_) => true,
            TrainError::Shard(e) => e.is_validation(),
            TrainError::Model(ModelError::Dimension { .. } | ModelError::InvalidK { .. } | ModelError::InvalidDims(_)) => true,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Checkpoints and the metrics log go here; nothing is written when unset.
    pub out_dir: Option<PathBuf>,
    /// Log a progress line every this many steps (0 = never).
    pub log_every: u64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub checkpoint: Checkpoint<T>,
    pub metrics: TrainMetrics,
}

fn stats_for(data: &RowSource, d: usize) -> Result<crate::store::DatasetStats, TrainError> {
    let mut acc = StatsAccumulator::new(d);
    for row in data.rows() {
        acc.push(&row?.values)?;
    }
    Ok(acc.finish())
}

/// Fresh state as training would start it: init params + zeroed Adam.
pub fn initial_checkpoint<T: Real>(cfg: &TrainConfig, data: &RowSource) -> Result<Checkpoint<T>, TrainError> {
    let d = data.feature_dim()?;
    cfg.validate_for_dim(d).map_err(TrainError::Config)?;
    let stats = stats_for(data, d)?;
    let params = init_params::<T>(d, cfg.latent_dim(d), cfg.k, cfg.seed, Some(&stats))?;
    let adam = AdamState::new(&params, cfg.adam());
    let n = params.n;
    Ok(Checkpoint {
        params,
        adam,
        step: 0,
        samples_seen: 0,
        liveness: LivenessTracker::new(n, cfg.dead_window),
        config: cfg.clone(),
    })
}

struct MetricsLog {
    out: Option<BufWriter<File>>,
}

impl MetricsLog {
    fn open(dir: Option<&Path>, resume: bool) -> Result<Self, TrainError> {
        let Some(dir) = dir else {
            return Ok(Self { out: None });
        };
        std::fs::create_dir_all(dir)?;
        let path = dir.join(METRICS_FILE);
        let fresh = !resume || !path.exists();
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .append(!fresh)
            .truncate(fresh)
            .open(path)?;
        let mut out = BufWriter::new(file);
        if fresh {
            writeln!(out, "{METRICS_HEADER}")?;
        }
        Ok(Self { out: Some(out) })
    }

    fn record(&mut self, m: &StepMetrics) -> Result<(), TrainError> {
        if let Some(out) = self.out.as_mut() {
            writeln!(out, "{m}")?;
        }
        Ok(())
    }

    fn flush(&mut self) -> Result<(), TrainError> {
        if let Some(out) = self.out.as_mut() {
            out.flush()?;
        }
        Ok(())
    }
}

/// Train for `cfg.max_steps` optimizer steps, optionally resuming.
pub fn train<T: Real>(
    cfg: &TrainConfig,
    data: &RowSource,
    resume: Option<Checkpoint<T>>,
    opts: &TrainOptions,
) -> Result<TrainOutcome<T>, TrainError> {
    let d = data.feature_dim()?;
    cfg.validate_for_dim(d).map_err(TrainError::Config)?;
    let resuming = resume.is_some();
    let mut state = match resume {
        Some(ck) => {
            if ck.params.d != d || ck.params.n != cfg.latent_dim(d) || ck.params.k != cfg.k {
                return Err(TrainError::Config(format!(
                    "checkpoint dims (d={}, n={}, k={}) do not match data/config (d={d}, n={}, k={})",
                    ck.params.d,
                    ck.params.n,
                    ck.params.k,
                    cfg.latent_dim(d),
                    cfg.k
                )));
            }
            ck
        }
        None => initial_checkpoint(cfg, data)?,
    };
    state.config = cfg.clone();
    state.liveness.window = cfg.dead_window;

    let norm = match cfg.loss_norm {
        LossNormKind::PerDim => crate::model::LossNorm::PerDimension,
        kind => kind.resolve(Some(&stats_for(data, d)?)),
    };
    let out_dir = opts.out_dir.as_deref();
    let mut log = MetricsLog::open(out_dir, resuming)?;
    let mut metrics = TrainMetrics {
        steps: Vec::new(),
        liveness: state.liveness.clone(),
    };
    let mut last_checkpoint = resuming.then_some(state.step);

    if state.step < cfg.max_steps {
        let batch_size = cfg.batch_size;
        let stream = EpochStream::new(data.clone(), cfg.shuffle_buffer, cfg.seed)
            .skip(state.samples_seen as usize);
        let batches = batched(stream, batch_size).map(|rows| {
            rows.into_iter()
                .map(|r| r.map(|r| r.values))
                .collect::<Result<Vec<Vec<f32>>, ShardError>>()
        });
        let mut producer = Prefetch::spawn(batches, 4);
        let mut grads = KsaeGrads::zeros_like(&state.params);
        let mut xs: Vec<Vec<T>> = Vec::with_capacity(batch_size);

        for step in state.step + 1..=cfg.max_steps {
            let rows = producer
                .next()
                .ok_or_else(|| TrainError::Config("row stream ended unexpectedly".into()))??;
            xs.clear();
            xs.extend(rows.iter().map(|r| r.iter().map(|&v| T::from_f32(v)).collect::<Vec<T>>()));
            let lr = lr_schedule(step, cfg);
            let res = match backward_into(&state.params, &xs, norm, &mut grads) {
                Ok(res) => res,
                Err(ModelError::NonFinite { .. }) => {
                    log.flush()?;
                    return Err(TrainError::NonFiniteLoss { step, last_checkpoint });
                }
                Err(e) => return Err(e.into()),
            };
            adam_step(&mut state.params, &grads, &mut state.adam, lr)?;
            for support in &res.supports {
                metrics.liveness.observe(support);
            }
            state.step = step;
            state.samples_seen += xs.len() as u64;
            let m = StepMetrics {
                step,
                loss: res.loss.as_f64(),
                lr,
                dead_fraction: metrics.liveness.dead_fraction(),
            };
            log.record(&m)?;
            metrics.steps.push(m);
            if opts.log_every > 0 && step % opts.log_every == 0 {
                log::info!(
                    "step {step} loss {:.6} lr {:.2e} dead {:.3}",
                    m.loss,
                    m.lr,
                    m.dead_fraction
                );
            }
            if step % cfg.checkpoint_every == 0 {
                if let Some(dir) = out_dir {
                    state.liveness = metrics.liveness.clone();
                    state.save(dir.join(CHECKPOINT_FILE))?;
                    log.flush()?;
                    last_checkpoint = Some(step);
                }
            }
        }
    }

    state.liveness = metrics.liveness.clone();
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        state.save(dir.join(CHECKPOINT_FILE))?;
    }
    log.flush()?;
    Ok(TrainOutcome {
        checkpoint: state,
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{synth_generate, SynthSpec};

    fn data() -> RowSource {
        RowSource::memory(vec![synth_generate(&SynthSpec::new(8, 12, 2, 300, 0.01, 4)).unwrap().shard])
    }

    fn cfg() -> TrainConfig {
        TrainConfig {
            k: 2,
            expansion_factor: 2,
            batch_size: 16,
            max_steps: 30,
            warmup_steps: 5,
            shuffle_buffer: 64,
            checkpoint_every: 10,
            lr: 1e-3,
            ..Default::default()
        }
    }

    #[test]
    fn zero_steps_returns_init() {
        let c = TrainConfig { max_steps: 0, ..cfg() };
        let out = train::<f64>(&c, &data(), None, &TrainOptions::default()).unwrap();
        let init = initial_checkpoint::<f64>(&c, &data()).unwrap();
        assert_eq!(out.checkpoint.params, init.params);
        assert_eq!(out.checkpoint.step, 0);
    }

    #[test]
    fn writes_checkpoint_and_metrics_log() {
        let dir = tempfile::tempdir().unwrap();
        let opts = TrainOptions {
            out_dir: Some(dir.path().to_path_buf()),
            log_every: 0,
        };
        let out = train::<f32>(&cfg(), &data(), None, &opts).unwrap();
        let ck = Checkpoint::<f32>::load(dir.path().join(CHECKPOINT_FILE)).unwrap();
        assert_eq!(ck, out.checkpoint);
        assert_eq!(ck.samples_seen, 30 * 16);
        let log = std::fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
        let lines: Vec<&str> = log.lines().collect();
        assert_eq!(lines[0], METRICS_HEADER);
        assert_eq!(lines.len(), 31);
        let last: StepMetrics = lines[30].parse().unwrap();
        assert_eq!(last, out.metrics.steps[29]);
        assert!(out.checkpoint.params.max_decoder_norm_error() <= 1e-6);
    }

    #[test]
    fn k_too_large_is_config_error() {
        let c = TrainConfig { k: 17, ..cfg() };
        let err = train::<f32>(&c, &data(), None, &TrainOptions::default()).unwrap_err();
        assert!(err.is_validation());
    }

    #[test]
    fn nonfinite_batch_aborts_and_keeps_last_checkpoint() {
        let clean = synth_generate(&SynthSpec::new(4, 4, 1, 64, 0.0, 1)).unwrap().shard;
        let dir = tempfile::tempdir().unwrap();
        let opts = TrainOptions {
            out_dir: Some(dir.path().to_path_buf()),
            log_every: 0,
        };
        let c = TrainConfig {
            k: 1,
            expansion_factor: 1,
            batch_size: 8,
            max_steps: 2,
            shuffle_buffer: 1,
            checkpoint_every: 1,
            ..cfg()
        };
        let first = train::<f32>(&c, &RowSource::memory(vec![clean.clone()]), None, &opts).unwrap();
        let mut poisoned = clean;
        poisoned.rows[20].values[0] = f32::NAN;
        let c = TrainConfig { max_steps: 5, ..c };
        let err = train::<f32>(&c, &RowSource::memory(vec![poisoned]), Some(first.checkpoint), &opts).unwrap_err();
        assert!(matches!(
            err,
            TrainError::NonFiniteLoss {
                step: 3,
                last_checkpoint: Some(2)
            }
        ));
        let kept = Checkpoint::<f32>::load(dir.path().join(CHECKPOINT_FILE)).unwrap();
        assert_eq!(kept.step, 2);
    }
}
