//! WTA sparsification, bucket construction and model checkpoints.

mod checkpoint;
mod plan;
mod wta;

pub use checkpoint::{
    checkpoint_bytes, parse_checkpoint, read_checkpoint, write_checkpoint, UHDW_MAGIC, UHDW_VERSION,
};
pub use plan::{
    build_bucket, encode_representation, BucketPlan, Budget, PlanEntry, PlanMode, PlanSpec,
};
pub use wta::{WtaGrads, WtaLayer, WtaTrace, DEFAULT_WEIGHT_SPARSITY};
