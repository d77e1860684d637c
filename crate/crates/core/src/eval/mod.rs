//! Trial scoring and verification metrics.

mod metrics;
mod scoring;

pub use metrics::{compute_eer, compute_metrics, compute_min_dcf, operating_points, Metrics, P_TARGET};
pub use scoring::{
    as_norm, cosine_score, embed_features, score_trials, top_k_stats, EmbeddingStore, TrialScore, TrialScoreSet,
    MIN_COHORT,
};
