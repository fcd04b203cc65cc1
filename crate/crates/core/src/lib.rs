//! Scoring and selection of instruction-tuning data by one-shot benefit.
//!
//! Every candidate instruction is used as a single in-context demonstration in
//! front of a fixed set of anchor tasks. Its golden score is the fraction of
//! anchors whose answer log-likelihood strictly improves over the zero-shot
//! baseline. High-scoring subsets are exported for fine-tuning.
//!
//! The crate is organised by pipeline stage:
//!
//! - [`dataset`]: ingestion, normalisation and prompt rendering
//! - [`backend`]: log-probability and embedding backends (HTTP, hash mock, table)
//! - [`anchors`]: anchor-set construction (random sample or K-Means)
//! - [`scoring`]: zero-shot profiles, one-shot rows, golden scores, resumable runs
//! - [`selection`]: threshold/top-fraction subsets, export and distribution reports
//! - [`duality`]: numerical check of the linear-attention decomposition

pub mod anchors;
pub mod backend;
pub mod dataset;
pub mod duality;
mod error;
pub mod fingerprint;
mod pool;
pub mod scoring;
pub mod selection;

pub use error::{Error, ErrorKind, Result};
pub use fingerprint::Fingerprint;
