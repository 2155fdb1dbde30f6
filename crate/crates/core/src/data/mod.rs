//! Multi-field categorical data: vocabularies, numeric bucketing, negative
//! sampling, batching, field permutation and the planted-interaction
//! synthetic generator.

pub mod batch;
pub mod bucket;
pub mod io;
pub mod permute;
pub mod sampling;
pub mod schema;
pub mod synthetic;

pub use batch::{make_batches, Batch};
pub use bucket::{bucketize_numeric, fit_quantile_boundaries};
pub use permute::{permute_fields, Permutation};
pub use sampling::{negative_sample, Labeled};
pub use schema::{build_vocab, DatasetSchema, FieldSchema, IngestStats, Instance, RawRow, RawTable, SchemaLayout};
pub use synthetic::{generate_synthetic, SyntheticData, SyntheticSpec};
