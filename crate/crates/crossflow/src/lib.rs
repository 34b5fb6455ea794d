//! IO, backends and the experiment runner for the crossflow harness.
//!
//! The algorithms live in [`crossflow_core`]; this crate adds the file
//! formats (corpora, vector indexes, mock fixtures, question sets, run
//! records, reports), the mock and HTTP completion backends, and the
//! `ingest` / `run` / `evaluate` / `report` pipeline.

pub mod config;
pub mod corpus;
pub mod error;
pub mod experiment;
pub mod fallback;
pub mod http;
pub mod index;
pub mod mock;

pub use config::{Backend, ExperimentConfig};
pub use error::{Error, Result};
pub use experiment::{cmd_evaluate, cmd_ingest, cmd_report, cmd_run, Options};
