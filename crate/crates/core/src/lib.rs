//! Ultra-high-dimensional sparse representations for first-stage retrieval.
//!
//! Texts are encoded by a (toy) contextual encoder, each selected layer is
//! sparsified by a winner-take-all layer into one bucket, and buckets are
//! searched through per-bucket inverted indexes.

mod bytes;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod index;
pub mod model;
pub mod pipeline;
pub mod sparse;
pub mod sparsifier;
pub mod synth;
pub mod trainer;

pub use error::{Error, ErrorKind, Result};
pub use index::{build_index, InvertedIndex, SearchResult};
pub use model::UhdModel;
pub use sparse::{BucketDescriptor, BucketedRepresentation, SparseVector};
pub use sparsifier::{BucketPlan, Budget, PlanMode};
