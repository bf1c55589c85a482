//! Ranking metrics, bucket-weight tuning and representation analyses.

mod analysis;
mod metrics;
mod trec;
mod tune;

pub use analysis::{
    activation_frequency, density_profile, interpret_dimensions, spearman, DensityRow,
    DimensionTerms, DEFAULT_MIN_TERM_COUNT,
};
pub use metrics::{mrr_at, recall_at, reciprocal_rank, MetricValue};
pub use trec::{Qrels, Run, RunEntry};
pub use tune::{
    ideal_layer_oracle, tune_bucket_weights, OracleResult, RerankQuery, RerankSet, TuneResult,
    WeightGrid, MAX_GRID_POINTS, TUNE_CUTOFF,
};
