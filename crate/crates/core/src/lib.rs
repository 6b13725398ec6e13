//! Analysis pipeline for open-text survey feedback.
//!
//! The crate covers four stages:
//!
//! - [`corpus`]: comments, survey responses, the topic taxonomy and the
//!   human correction workflow.
//! - [`textprep`], [`boost`] and [`multilabel`]: comment embeddings and a
//!   one-vs-rest gradient-boosted tree classifier for topic labels.
//! - [`summarize`]: category summaries whose every statement cites verbatim
//!   comment extracts, with validation and snippet selection.
//! - [`stats`]: NPS / UX-Lite / PSAT scoring and the contingency-table
//!   statistics relating comment sentiment to those metrics.
//!
//! [`synth`] generates deterministic synthetic corpora used by the tests,
//! the CLI demo data and the browser demo.

pub mod boost;
pub mod corpus;
pub mod multilabel;
pub mod stats;
pub mod summarize;
pub mod synth;
pub mod textprep;

pub use corpus::{
    Comment, Corpus, LabelSource, Sentiment, SurveyKind, SurveyResponse, TopicTaxonomy,
};
