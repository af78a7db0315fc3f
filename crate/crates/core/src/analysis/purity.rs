//! Label purity of top-activating samples.

use std::fmt;
use std::str::FromStr;

use super::{AnalysisError, LatentProfile};

/// Statistic used to pick the latents that enter the average.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RankingRule {
    #[default]
    ByPeak,
    /// Mean activation over the latent's top-m samples.
    ByMean,
    ByFireCount,
}

impl RankingRule {
    pub fn as_str(self) -> &'static str {
        match self {
            RankingRule::ByPeak => "by_peak",
            RankingRule::ByMean => "by_mean",
            RankingRule::ByFireCount => "by_fire_count",
        }
    }
}

impl FromStr for RankingRule {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "by_peak" => Ok(RankingRule::ByPeak),
            "by_mean" => Ok(RankingRule::ByMean),
            "by_fire_count" => Ok(RankingRule::ByFireCount),
            other => Err(format!("unknown ranking rule {other:?} (by_peak | by_mean | by_fire_count)")),
        }
    }
}

impl fmt::Display for RankingRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StdKind {
    /// Divide by m.
    #[default]
    Population,
    /// Divide by m - 1.
    Sample,
}

impl StdKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StdKind::Population => "population",
            StdKind::Sample => "sample",
        }
    }
}

impl FromStr for StdKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "population" => Ok(StdKind::Population),
            "sample" => Ok(StdKind::Sample),
            other => Err(format!("unknown std kind {other:?} (population | sample)")),
        }
    }
}

impl fmt::Display for StdKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PurityConfig {
    pub top_latents: usize,
    pub m: usize,
    pub std_kind: StdKind,
    pub ranking: RankingRule,
}

impl Default for PurityConfig {
    fn default() -> Self {
        Self {
            top_latents: 1000,
            m: 10,
            std_kind: StdKind::Population,
            ranking: RankingRule::ByPeak,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PurityReport {
    pub sigma_label: f64,
    pub config: PurityConfig,
    /// Latents averaged; below `top_latents` when too few were eligible.
    pub latents_considered: usize,
    /// Latents dropped for having fewer than `m` labeled samples.
    pub latents_excluded: usize,
    /// `(latent_id, label std)` in ranking order.
    pub per_latent: Vec<(usize, f64)>,
}

impl fmt::Display for PurityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "sigma_label {}", self.sigma_label)?;
        writeln!(f, "top_latents {}", self.config.top_latents)?;
        writeln!(f, "m {}", self.config.m)?;
        writeln!(f, "ranking_rule {}", self.config.ranking)?;
        writeln!(f, "std_kind {}", self.config.std_kind)?;
        writeln!(f, "latents_considered {}", self.latents_considered)?;
        writeln!(f, "latents_excluded {}", self.latents_excluded)?;
        for (id, s) in &self.per_latent {
            writeln!(f, "latent {id} {s}")?;
        }
        Ok(())
    }
}

fn label_std(labels: &[i32], kind: StdKind) -> f64 {
    let m = labels.len() as f64;
    let mean = labels.iter().map(|&l| l as f64).sum::<f64>() / m;
    let ss: f64 = labels.iter().map(|&l| (l as f64 - mean).powi(2)).sum();
    let denom = match kind {
        StdKind::Population => m,
        StdKind::Sample => m - 1.0,
    };
    if denom <= 0.0 {
        0.0
    } else {
        (ss / denom).sqrt()
    }
}

/// Mean label-id standard deviation over the best-ranked latents' top-`m`
/// labeled samples. Unlabeled samples (label < 0) are skipped; latents
/// with fewer than `m` labeled samples are excluded.
pub fn sigma_label(profiles: &[LatentProfile], cfg: &PurityConfig) -> Result<PurityReport, AnalysisError> {
    if cfg.m == 0 || cfg.top_latents == 0 {
        return Err(AnalysisError::Invalid("m and top_latents must be positive".into()));
    }
    if !profiles.iter().any(|p| p.top_samples.iter().any(|s| s.label >= 0)) {
        return Err(AnalysisError::NoLabels);
    }
    let mut eligible: Vec<(&LatentProfile, Vec<i32>, f64)> = Vec::new();
    let mut excluded = 0;
    for p in profiles {
        let labeled: Vec<&super::TopSample> = p.top_samples.iter().filter(|s| s.label >= 0).take(cfg.m).collect();
        if labeled.len() < cfg.m {
            excluded += 1;
            continue;
        }
        let score = match cfg.ranking {
            RankingRule::ByPeak => p.peak_activation,
            RankingRule::ByMean => labeled.iter().map(|s| s.activation).sum::<f64>() / cfg.m as f64,
            RankingRule::ByFireCount => p.fire_count as f64,
        };
        eligible.push((p, labeled.iter().map(|s| s.label).collect(), score));
    }
    if eligible.is_empty() {
        return Err(AnalysisError::NoEligibleLatents { m: cfg.m });
    }
    eligible.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.latent_id.cmp(&b.0.latent_id)));
    eligible.truncate(cfg.top_latents);

    let per_latent: Vec<(usize, f64)> = eligible
        .iter()
        .map(|(p, labels, _)| (p.latent_id, label_std(labels, cfg.std_kind)))
        .collect();
    let sigma = per_latent.iter().map(|(_, s)| s).sum::<f64>() / per_latent.len() as f64;
    Ok(PurityReport {
        sigma_label: sigma,
        config: *cfg,
        latents_considered: per_latent.len(),
        latents_excluded: excluded,
        per_latent,
    })
}
