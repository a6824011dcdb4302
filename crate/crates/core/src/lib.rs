//! Stimulus-feature fusion network for visual emotion classification.
//!
//! The library models an image as three precomputed stimulus features --
//! a global vector, a set of per-object vectors, and an optional face
//! vector -- and predicts one of `C` emotion categories arranged on a
//! positive/negative polarity wheel. The pieces:
//!
//! - [`taxonomy`]: emotion categories, their canonical order, and the
//!   polarity partition.
//! - [`diffmath`]: a small dense f64 kernel where every primitive has an
//!   explicit forward and backward, verified against central finite
//!   differences.
//! - [`semantic`]: the two-layer attention/correlation LSTM stack that
//!   turns a variable-sized object-feature set into one semantic vector.
//! - [`encoders`]: trainable affine projections standing in for the
//!   global and expression backbones, including the absent-face zero
//!   fallback.
//! - [`head`]: feature fusion, softmax classifier, polarity aggregation,
//!   and the hierarchical (emotion + polarity) cross-entropy loss.
//! - [`model`]: the assembled network with deterministic initialization
//!   and a versioned binary serialization.
//! - [`training`]: Adam, the step learning-rate schedule, the epoch
//!   driver, and evaluation metrics.
//! - [`data`] / [`config`] / [`report`]: JSONL fixtures, synthetic
//!   dataset generation, run configuration, and run reports.
//! - [`gradcheck`]: the finite-difference verification harness behind
//!   `emofuse grad-check`.
//! - [`run`]: the end-to-end pipelines behind the CLI subcommands.
//!
//! Everything is double precision and deterministic: a (seed, config,
//! dataset) triple fully determines every reported number.

pub mod config;
pub mod data;
pub mod diffmath;
pub mod encoders;
pub mod error;
pub mod gradcheck;
pub mod head;
pub mod model;
pub mod report;
pub mod run;
pub mod semantic;
pub mod taxonomy;
pub mod training;

pub use error::{Error, Result};
