//! Corpus engineering and evaluation toolkit for conversational question
//! answering.
//!
//! The crate turns dialogue-QA datasets into a normalized conversation
//! model, builds model-ready inputs under several history-modeling
//! strategies (centrally, inline prompt markers highlighting historic
//! answer spans), and scores prediction files with word-level F1,
//! relative-improvement, per-domain, and significance reports.

pub mod chunking;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod history;
pub mod metrics;
pub mod offsets;
pub mod sampling;
pub mod strategies;

pub use error::{Error, Result};
