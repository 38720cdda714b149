//! Conversational retrieval and extractive question answering over a
//! scientific-literature corpus.
//!
//! The pipeline has two halves. Offline, [`corpus`] deduplicates and filters
//! raw records and cuts document bodies into overlapping chunks, [`sparse`]
//! builds a BM25 inverted index over abstracts and [`dense`] embeds the same
//! abstracts. Online, [`fusion`] thresholds both arms and merges their
//! survivors, [`answer`] runs a span extractor over the chunks of the top
//! documents, and [`dialogue`] routes conversational turns through [`nlu`]
//! to either that pipeline or an open-domain generator. [`eval`] tunes the
//! fusion thresholds against graded relevance judgments.

pub mod answer;
pub mod corpus;
pub mod dense;
pub mod dialogue;
pub mod engine;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod nlu;
pub mod par;
pub mod sparse;
pub mod text;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

pub use error::{Error, ProviderError, Result};
pub use par::Execution;

/// A document id paired with a retrieval score from one arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDoc {
    pub doc_id: String,
    pub score: f64,
}

impl ScoredDoc {
    pub fn new(doc_id: impl Into<String>, score: f64) -> Self {
        Self {
            doc_id: doc_id.into(),
            score,
        }
    }
}

/// Descending by score, ties broken by ascending doc id.
pub(crate) fn rank_order(a_score: f64, a_id: &str, b_score: f64, b_id: &str) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a_id.cmp(b_id))
}

pub(crate) fn sort_scored(scored: &mut [ScoredDoc]) {
    scored.sort_by(|a, b| rank_order(a.score, &a.doc_id, b.score, &b.doc_id));
}
