//! Toolkit for cross-lingual sentiment classification with a shared encoder
//! and per-granularity task heads.
//!
//! Pipeline: [`corpus`] ingestion, [`preprocess`] cleaning and splitting,
//! [`trainer`] scenario runs over a [`model::ModelBundle`], and [`evaluator`]
//! metrics. [`runner`] wires the stages into the command-line workflow.

pub mod config;
pub mod corpus;
pub mod evaluator;
pub mod model;
pub mod preprocess;
pub mod runner;
pub mod trainer;
