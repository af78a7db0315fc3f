//! Interpretability measurements over trained dictionaries.

pub mod dictionary;
pub mod gallery;
pub mod pca;
pub mod purity;
pub mod top;

pub use dictionary::{dictionary_score, dictionary_score_params};
pub use gallery::{gallery_manifest, parse_manifest, write_manifest, GalleryOutcome, Manifest, MANIFEST_FILE, MANIFEST_HEADER};
pub use pca::{pca, pca_feature_map, write_pfm, write_preview_png, FeatureMap, Pca, PcaMap};
pub use purity::{sigma_label, PurityConfig, PurityReport, RankingRule, StdKind};
pub use top::{top_activating, LatentProfile, TopSample};

use crate::model::ModelError;
use crate::store::ShardError;

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Shard(#[from] ShardError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("no labeled samples among the profiled latents")]
    NoLabels,
    #[error("no latent has {m} labeled samples")]
    NoEligibleLatents { m: usize },
    #[error("need at least {needed} points for PCA, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },
    #[error("image encoding: {0}")]
    Image(#[from] image::ImageError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl AnalysisError {
    pub fn is_validation(&self) -> bool {
        match self {
            AnalysisError::Shard(e) => e.is_validation(),
            AnalysisError::Model(ModelError::Dimension { .. }) => true,
            AnalysisError::Io(_) | AnalysisError::Image(_) | AnalysisError::Model(_) => false,
            _ => true,
        }
    }
}
