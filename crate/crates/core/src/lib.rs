//! Adaptive retrieval of in-context demonstrations for implicit hate speech
//! detection.
//!
//! The building blocks, bottom-up:
//!
//! - [`corpus`]: labeled example pools and splits (TSV/CSV/JSONL).
//! - [`retrieval`]: tokenizer and Okapi BM25 index with exact top-k.
//! - [`target`]: target-group normalization, similarity, prediction of
//!   missing targets, and target-prioritized retrieval.
//! - [`llm`]: prompt templates, reply parsing, mock and HTTP backends.
//! - [`adaptive`]: shortcut detection, the similarity condition, the
//!   replacement rule and the threshold sweep.
//! - [`pipeline`]: wires the above into per-query decisions.
//! - [`eval`]: confusion-matrix metrics and report emission.
//! - [`cli`]: the staged command-line workflow.

pub mod adaptive;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod io;
pub mod llm;
pub mod manifest;
pub mod pipeline;
pub mod retrieval;
pub mod target;

pub use error::{Error, Result};
