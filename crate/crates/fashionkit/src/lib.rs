//! fashionkit: a config-driven toolkit for visual fashion analysis.
//!
//! The crate covers five tasks end to end (attribute prediction, landmark
//! detection, in-shop retrieval, outfit compatibility, and detection
//! evaluation) with a small, fully deterministic stack:
//!
//! * [`json`] / [`config`] / [`registry`]: a JSON document model with
//!   strict parsing, dotted-path config access, override merging, and
//!   string-keyed component registries.
//! * [`datasets`]: annotation parsers and writers for every task plus
//!   deterministic synthetic dataset generators.
//! * [`models`]: a tiny convolutional backbone with task heads, exact
//!   analytic gradients over a flat `f64` parameter vector.
//! * [`runner`]: a hook-driven epoch/iteration training loop with
//!   checkpointing and bit-identical resume.
//! * [`metrics`]: evaluation for all five tasks, written to stable JSON
//!   reports.
//! * [`zoo`]: a model-zoo manifest with checksum-verified fetching.
//!
//! The `fashionkit` binary exposes the same functionality as subcommands
//! (`train`, `evaluate`, `demo`, `zoo`, `synth`).

pub mod config;
pub mod datasets;
pub mod draw;
pub mod error;
pub mod eval;
pub mod json;
pub mod metrics;
pub mod models;
pub mod pipeline;
pub mod registry;
pub mod runner;
pub mod util;
pub mod zoo;

pub use config::Config;
pub use error::{Error, Result};
