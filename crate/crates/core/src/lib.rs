//! Tooling for building and evaluating a road-incident image classifier:
//! query planning, harvesting, de-duplication, curation, dataset splits,
//! preprocessing, a small residual CNN trainer, evaluation and model
//! explanation (class activation maps, t-SNE).

// `!(x > 0.0)` deliberately rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod curation;
pub mod dedup;
pub mod evaluate;
pub mod explain;
pub mod harvest;
pub mod manifest;
pub mod nn;
pub mod preprocess;
pub mod querygen;
pub mod reference;
pub mod synthetic;
pub mod taxonomy;
pub mod trainer;

pub use taxonomy::ClassId;
