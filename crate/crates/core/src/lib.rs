//! Rectify object mentions in image explanations (captions, VQA answers,
//! agent dialogues) against an object detector, and score explanations by
//! Inconsistency and Completeness.

pub mod caption;
pub mod cli;
pub mod config;
pub mod domain;
pub mod embedding;
pub mod error;
pub mod io;
pub mod metrics;
pub mod prompt;
pub mod synth;
pub mod vqa;

pub use config::Parameters;
pub use domain::{ClassCatalog, Detection, ExplanationObjects, RectifierSet};
pub use embedding::{EmbeddingStore, TokenClassMapper};
pub use error::{Error, Result};
pub use metrics::{completeness, evaluate_corpus, inconsistency, AggregateReport, AggregationMode, MetricsRecord};
