//! Training metrics and dead-latent accounting.

use std::fmt;

/// Per-latent firing history over the sample stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LivenessTracker {
    pub window: u64,
    pub samples_seen: u64,
    /// 1-based index of the last sample on which each latent was in the
    /// TopK support; 0 = never.
    pub last_fired: Vec<u64>,
    pub fire_counts: Vec<u64>,
}

impl LivenessTracker {
    pub fn new(n: usize, window: u64) -> Self {
        Self {
            window,
            samples_seen: 0,
            last_fired: vec![0; n],
            fire_counts: vec![0; n],
        }
    }

    pub fn n(&self) -> usize {
        self.last_fired.len()
    }

    /// Record one sample's TopK support.
    pub fn observe(&mut self, support: &[usize]) {
        self.samples_seen += 1;
        for &j in support {
            self.last_fired[j] = self.samples_seen;
            self.fire_counts[j] += 1;
        }
    }

    fn cutoff(&self) -> u64 {
        self.samples_seen - self.window.min(self.samples_seen)
    }

    pub fn is_dead(&self, j: usize) -> bool {
        self.samples_seen > 0 && self.last_fired[j] <= self.cutoff()
    }

    /// Latents with no activation in the trailing `min(window, seen)` samples.
    pub fn dead_ids(&self) -> Vec<usize> {
        (0..self.n()).filter(|&j| self.is_dead(j)).collect()
    }

    pub fn dead_fraction(&self) -> f64 {
        if self.n() == 0 || self.samples_seen == 0 {
            return 0.0;
        }
        let cutoff = self.cutoff();
        self.last_fired.iter().filter(|&&t| t <= cutoff).count() as f64 / self.n() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    pub dead_fraction: f64,
}

impl fmt::Display for StepMetrics {
    /// One metrics-log record: `step loss lr dead_fraction`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {} {}", self.step, self.loss, self.lr, self.dead_fraction)
    }
}

impl std::str::FromStr for StepMetrics {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split_whitespace().collect();
        if parts.len() != 4 {
            return Err(format!("expected 4 fields, got {}", parts.len()));
        }
        let num = |i: usize| parts[i].parse::<f64>().map_err(|e| format!("{}: {e}", parts[i]));
        Ok(StepMetrics {
            step: parts[0].parse().map_err(|e| format!("step: {e}"))?,
            loss: num(1)?,
            lr: num(2)?,
            dead_fraction: num(3)?,
        })
    }
}

pub const METRICS_HEADER: &str = "# step loss lr dead_fraction";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainMetrics {
    pub steps: Vec<StepMetrics>,
    pub liveness: LivenessTracker,
}

impl TrainMetrics {
    /// Mean loss over steps `[end - window, end)` of the recorded history,
    /// indexed by position in `steps`.
    pub fn moving_average(&self, end: usize, window: usize) -> Option<f64> {
        if window == 0 || end > self.steps.len() || end < window {
            return None;
        }
        Some(self.steps[end - window..end].iter().map(|s| s.loss).sum::<f64>() / window as f64)
    }

    /// Histogram of per-latent firing rates over the run, in decades:
    /// bin 0 counts never-fired latents, bin `i >= 1` counts rates in
    /// `[10^-(bins-i), 10^-(bins-i-1))`, the last bin includes rate 1.
    pub fn utilization_histogram(&self, bins: usize) -> Vec<u64> {
        let bins = bins.max(2);
        let mut hist = vec![0u64; bins];
        let seen = self.liveness.samples_seen.max(1) as f64;
        for &c in &self.liveness.fire_counts {
            if c == 0 {
                hist[0] += 1;
                continue;
            }
            let rate = c as f64 / seen;
            let decade = (-rate.log10()).floor().max(0.0) as usize;
            let bin = (bins - 1).saturating_sub(decade).max(1);
            hist[bin] += 1;
        }
        hist
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeadLatentReport {
    pub window: u64,
    pub samples_seen: u64,
    pub dead: Vec<usize>,
    pub fraction: f64,
}

pub fn dead_latent_report(metrics: &TrainMetrics) -> DeadLatentReport {
    let l = &metrics.liveness;
    DeadLatentReport {
        window: l.window,
        samples_seen: l.samples_seen,
        dead: l.dead_ids(),
        fraction: l.dead_fraction(),
    }
}
