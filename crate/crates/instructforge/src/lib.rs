//! Pipeline toolkit that turns a raw text corpus into curated instruction
//! datasets and training-ready token sequences, and evaluates model answers
//! with normalization-tolerant metrics.
//!
//! The crate is organized around the pipeline stages:
//!
//! - [`corpus`]: document ingestion, segmentation, filtering, split assignment
//!   and corpus statistics.
//! - [`grammar`]: a finite generative grammar engine with the built-in prompt
//!   grammars used across the pipeline.
//! - [`llmclient`]: a provider-agnostic chat-completion client with a
//!   record/replay cache so everything runs offline.
//! - [`synth`]: per-task generation requests, structured-output validation and
//!   curation filters.
//! - [`patterns`]: template ("patron") instructions from acronym/translation
//!   dictionaries and the long generative instruction families.
//! - [`dataset`]: instruction mixes, system-prompt assignment, language
//!   filtering and dataset statistics.
//! - [`trainprep`]: packing with per-document EOS, chat templating,
//!   completion-only loss masks and training-config emission.
//! - [`evalharness`]: tolerant matchers, MCQ letter extraction, an LLM judge
//!   and rank aggregation.
//! - [`carbon`]: energy and emission estimates for training and generation.

pub mod carbon;
pub mod corpus;
pub mod dataset;
pub mod evalharness;
pub mod grammar;
pub mod jsonl;
pub mod llmclient;
pub mod patterns;
pub mod synth;
pub mod tokenize;
pub mod trainprep;

mod seeding;

pub use seeding::derive_seed;
