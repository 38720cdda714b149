//! Span extraction over the body chunks of retrieved documents, span
//! filtering, per-document selection, cross-document ranking and the
//! three-way response fallback (answers, document list, clarification).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::Catalog;
use crate::error::{Error, ProviderError, Result};
use crate::fusion::{minmax_normalize, FusedCandidate, RetrievalTrace};
use crate::nlu::TurnAnalysis;
use crate::par::Execution;
use crate::rank_order;
use crate::text::{count_tokens, token_spans, tokenize};

pub const DEFAULT_MAX_SPAN_TOKENS: usize = 15;
pub const DEFAULT_MAX_ANSWERS: usize = 5;
pub const DEFAULT_MAX_DOCS: usize = 20;
pub const DEFAULT_ALPHA: f64 = 0.5;
pub const DEFAULT_MARKERS: [&str; 6] = ["[CLS]", "[SEP]", "[PAD]", "CLS", "SEP", "PAD"];

pub const CLARIFICATION_PROMPT: &str = "I couldn't find any papers that match that. \
Could you rephrase the question or tell me a bit more about what you are looking for?";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnswerConfig {
    /// Weight of the start log-likelihood against the retrieval score.
    pub alpha: f64,
    pub max_answers: usize,
    pub max_span_tokens: usize,
    pub max_docs: usize,
    pub reserved_markers: Vec<String>,
}

impl Default for AnswerConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            max_answers: DEFAULT_MAX_ANSWERS,
            max_span_tokens: DEFAULT_MAX_SPAN_TOKENS,
            max_docs: DEFAULT_MAX_DOCS,
            reserved_markers: DEFAULT_MARKERS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl AnswerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidParameter(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if self.max_answers == 0 || self.max_docs == 0 || self.max_span_tokens == 0 {
            return Err(Error::InvalidParameter("answer limits must be positive".into()));
        }
        Ok(())
    }
}

/// What an extractor returns for one passage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractedSpan {
    pub text: String,
    pub start_loglik: f64,
    pub end_loglik: f64,
}

/// Extracts candidate answer spans from a passage. Spans must be substrings
/// of the passage and the output must be deterministic.
pub trait SpanExtractor: Send + Sync {
    fn extract(&self, question: &str, passage: &str) -> Result<Vec<ExtractedSpan>, ProviderError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanCandidate {
    pub doc_id: String,
    pub chunk_id: String,
    pub text: String,
    pub token_length: usize,
    pub start_loglik: f64,
    pub end_loglik: f64,
}

impl SpanCandidate {
    pub fn new(doc_id: &str, chunk_id: &str, span: ExtractedSpan) -> Self {
        Self {
            doc_id: doc_id.to_string(),
            chunk_id: chunk_id.to_string(),
            token_length: count_tokens(&span.text),
            text: span.text,
            start_loglik: span.start_loglik,
            end_loglik: span.end_loglik,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanVerdict {
    Accept,
    RejectLength,
    RejectMarker,
    RejectInvalid,
}

fn contains_marker(text: &str, markers: &[String]) -> bool {
    let words: Vec<&str> = text
        .split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric() && c != '[' && c != ']'))
        .collect();
    markers.iter().any(|marker| {
        if marker.is_empty() {
            return false;
        }
        let bare = marker.trim_start_matches('[').trim_end_matches(']');
        let bracketed = format!("[{bare}]");
        // bracketed forms are unambiguous, so they match anywhere
        text.contains(&bracketed)
            || words.iter().any(|w| {
                *w == marker || *w == bare || w.trim_start_matches('[').trim_end_matches(']') == bare
            })
    })
}

/// Rejects spans over the token limit and spans containing a reserved
/// marker as a whole word (with or without brackets) or as a bracketed
/// substring.
pub fn filter_span(span: &SpanCandidate, cfg: &AnswerConfig) -> SpanVerdict {
    if span.token_length == 0 || !span.start_loglik.is_finite() || !span.end_loglik.is_finite() {
        return SpanVerdict::RejectInvalid;
    }
    if span.token_length > cfg.max_span_tokens {
        return SpanVerdict::RejectLength;
    }
    if contains_marker(&span.text, &cfg.reserved_markers) {
        return SpanVerdict::RejectMarker;
    }
    SpanVerdict::Accept
}

/// The span with the highest start log-likelihood for each document; ties
/// go to the smaller chunk id, then the smaller text.
pub fn best_span_per_doc(spans: Vec<SpanCandidate>) -> BTreeMap<String, SpanCandidate> {
    let mut best: BTreeMap<String, SpanCandidate> = BTreeMap::new();
    for span in spans {
        match best.get(&span.doc_id) {
            Some(cur)
                if span
                    .start_loglik
                    .total_cmp(&cur.start_loglik)
                    .then_with(|| cur.chunk_id.cmp(&span.chunk_id))
                    .then_with(|| cur.text.cmp(&span.text))
                    .is_le() => {}
            _ => {
                best.insert(span.doc_id.clone(), span);
            }
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerSpan {
    pub doc_id: String,
    pub chunk_id: String,
    pub paper_title: String,
    pub text: String,
    pub start_loglik: f64,
    pub retrieval_score: f64,
    pub final_score: f64,
}

/// `final = α·norm(start_loglik) + (1 − α)·norm(aggregated)`, both min-max
/// normalized over the answer set. Sorted best first and cut to `limit`.
pub fn rank_answers(
    best: &BTreeMap<String, SpanCandidate>,
    candidates: &[FusedCandidate],
    alpha: f64,
    limit: usize,
    catalog: &Catalog,
) -> Result<Vec<AnswerSpan>> {
    let retrieval: BTreeMap<&str, f64> = candidates
        .iter()
        .map(|c| (c.doc_id.as_str(), c.aggregated))
        .collect();
    let mut rows = Vec::with_capacity(best.len());
    for (doc_id, span) in best {
        let score = retrieval.get(doc_id.as_str()).copied().ok_or_else(|| {
            Error::Consistency(format!("answer for {doc_id} has no retrieval candidate"))
        })?;
        rows.push((span, score));
    }
    let ll_norm = minmax_normalize(&rows.iter().map(|(s, _)| s.start_loglik).collect::<Vec<_>>());
    let ret_norm = minmax_normalize(&rows.iter().map(|(_, r)| *r).collect::<Vec<_>>());

    let mut answers: Vec<AnswerSpan> = rows
        .iter()
        .enumerate()
        .map(|(i, (span, retrieval_score))| AnswerSpan {
            doc_id: span.doc_id.clone(),
            chunk_id: span.chunk_id.clone(),
            paper_title: catalog.title(&span.doc_id).unwrap_or(&span.doc_id).to_string(),
            text: span.text.clone(),
            start_loglik: span.start_loglik,
            retrieval_score: *retrieval_score,
            final_score: alpha * ll_norm[i] + (1.0 - alpha) * ret_norm[i],
        })
        .collect();
    answers.sort_by(|a, b| rank_order(a.final_score, &a.doc_id, b.final_score, &b.doc_id));
    answers.truncate(limit);
    Ok(answers)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseKind {
    Answers,
    DocumentList,
    Clarification,
    Smalltalk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseItem {
    pub text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub paper_title: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub doc_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl ResponseItem {
    pub fn plain(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            paper_title: None,
            doc_id: None,
            score: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnswerTrace {
    pub docs_considered: usize,
    pub chunks_processed: usize,
    pub chunk_failures: Vec<String>,
    pub spans_extracted: usize,
    pub rejected_length: usize,
    pub rejected_marker: usize,
    pub rejected_invalid: usize,
    pub accepted: usize,
    pub docs_with_answers: usize,
}

/// Per-stage record attached to every response.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nlu: Option<TurnAnalysis>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub retrieval: Option<RetrievalTrace>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub answer: Option<AnswerTrace>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemResponse {
    pub kind: ResponseKind,
    pub items: Vec<ResponseItem>,
    pub diagnostics: Diagnostics,
}

impl SystemResponse {
    pub fn clarification() -> Self {
        Self {
            kind: ResponseKind::Clarification,
            items: vec![ResponseItem::plain(CLARIFICATION_PROMPT)],
            diagnostics: Diagnostics::default(),
        }
    }

    pub fn smalltalk(text: impl Into<String>) -> Self {
        Self {
            kind: ResponseKind::Smalltalk,
            items: vec![ResponseItem::plain(text)],
            diagnostics: Diagnostics::default(),
        }
    }

    /// Plain-text rendering used for the bot side of the session history.
    pub fn summary_text(&self) -> String {
        self.items
            .iter()
            .map(|item| match (&item.paper_title, self.kind) {
                (Some(title), ResponseKind::Answers) => format!("{} ({title})", item.text),
                _ => item.text.clone(),
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Runs the extractor over every chunk of the top retrieved documents and
/// assembles the response.
///
/// - nothing retrieved: clarification prompt
/// - retrieved, but no span survives the filters: titles of the top
///   documents by retrieval score
/// - otherwise: the ranked answers
pub fn answer_pipeline(
    question: &str,
    retrieved: &[FusedCandidate],
    catalog: &Catalog,
    extractor: &dyn SpanExtractor,
    cfg: &AnswerConfig,
    exec: Execution,
) -> Result<SystemResponse> {
    cfg.validate()?;
    if retrieved.is_empty() {
        let mut resp = SystemResponse::clarification();
        resp.diagnostics.answer = Some(AnswerTrace::default());
        return Ok(resp);
    }
    let docs = &retrieved[..retrieved.len().min(cfg.max_docs)];
    let jobs: Vec<(&str, &crate::corpus::Chunk)> = docs
        .iter()
        .flat_map(|c| catalog.chunks(&c.doc_id).iter().map(move |ch| (c.doc_id.as_str(), ch)))
        .collect();
    let results = exec.map(&jobs, |(doc_id, chunk)| {
        extractor
            .extract(question, &chunk.text)
            .map(|spans| {
                spans
                    .into_iter()
                    .map(|s| SpanCandidate::new(doc_id, &chunk.chunk_id, s))
                    .collect::<Vec<_>>()
            })
            .map_err(|e| format!("{}: {e}", chunk.chunk_id))
    });

    let mut trace = AnswerTrace {
        docs_considered: docs.len(),
        chunks_processed: jobs.len(),
        ..AnswerTrace::default()
    };
    let mut accepted = Vec::new();
    for result in results {
        match result {
            Ok(spans) => {
                trace.spans_extracted += spans.len();
                for span in spans {
                    match filter_span(&span, cfg) {
                        SpanVerdict::Accept => accepted.push(span),
                        SpanVerdict::RejectLength => trace.rejected_length += 1,
                        SpanVerdict::RejectMarker => trace.rejected_marker += 1,
                        SpanVerdict::RejectInvalid => trace.rejected_invalid += 1,
                    }
                }
            }
            Err(msg) => trace.chunk_failures.push(msg),
        }
    }
    trace.accepted = accepted.len();
    let best = best_span_per_doc(accepted);
    trace.docs_with_answers = best.len();

    let response = if best.is_empty() {
        SystemResponse {
            kind: ResponseKind::DocumentList,
            items: docs
                .iter()
                .take(cfg.max_answers)
                .map(|c| {
                    let title = catalog.title(&c.doc_id).unwrap_or(&c.doc_id).to_string();
                    ResponseItem {
                        text: title.clone(),
                        paper_title: Some(title),
                        doc_id: Some(c.doc_id.clone()),
                        score: Some(c.aggregated),
                    }
                })
                .collect(),
            diagnostics: Diagnostics::default(),
        }
    } else {
        let answers = rank_answers(&best, docs, cfg.alpha, cfg.max_answers, catalog)?;
        SystemResponse {
            kind: ResponseKind::Answers,
            items: answers
                .into_iter()
                .map(|a| ResponseItem {
                    text: a.text,
                    paper_title: Some(a.paper_title),
                    doc_id: Some(a.doc_id),
                    score: Some(a.final_score),
                })
                .collect(),
            diagnostics: Diagnostics::default(),
        }
    };
    let mut response = response;
    response.diagnostics.answer = Some(trace);
    Ok(response)
}

/// Deterministic stand-in for a reading-comprehension model: picks the
/// sentence sharing the most distinct tokens with the question (earliest on
/// ties), cut to the first `max_tokens` tokens. Both log-likelihoods are the
/// overlap count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OverlapExtractor {
    pub max_tokens: usize,
}

impl Default for OverlapExtractor {
    fn default() -> Self {
        Self {
            max_tokens: DEFAULT_MAX_SPAN_TOKENS,
        }
    }
}

/// Byte ranges of sentences: split after `.`, `!` or `?` followed by
/// whitespace, and at newlines. Surrounding whitespace is trimmed.
fn sentence_ranges(text: &str) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, ch)) = chars.next() {
        let boundary = match ch {
            '\n' => Some(i),
            '.' | '!' | '?' => match chars.peek() {
                Some((_, next)) if next.is_whitespace() => Some(i + ch.len_utf8()),
                None => Some(i + ch.len_utf8()),
                _ => None,
            },
            _ => None,
        };
        if let Some(end) = boundary {
            out.push(start..end);
            start = end;
        }
    }
    out.push(start..text.len());
    out.into_iter()
        .filter_map(|r| {
            let piece = &text[r.clone()];
            let lead = piece.len() - piece.trim_start().len();
            let trimmed = piece.trim();
            (!trimmed.is_empty()).then(|| r.start + lead..r.start + lead + trimmed.len())
        })
        .collect()
}

impl SpanExtractor for OverlapExtractor {
    fn extract(&self, question: &str, passage: &str) -> Result<Vec<ExtractedSpan>, ProviderError> {
        let q: std::collections::BTreeSet<String> = tokenize(question).into_iter().collect();
        if q.is_empty() {
            return Ok(Vec::new());
        }
        let mut best: Option<(usize, std::ops::Range<usize>)> = None;
        for range in sentence_ranges(passage) {
            let toks: std::collections::BTreeSet<String> =
                tokenize(&passage[range.clone()]).into_iter().collect();
            let overlap = toks.intersection(&q).count();
            if overlap > 0 && best.as_ref().is_none_or(|(b, _)| overlap > *b) {
                best = Some((overlap, range));
            }
        }
        let Some((overlap, range)) = best else {
            return Ok(Vec::new());
        };
        let sentence = &passage[range.clone()];
        let spans = token_spans(sentence);
        let end = if spans.len() > self.max_tokens {
            spans[self.max_tokens - 1].end
        } else {
            sentence.len()
        };
        Ok(vec![ExtractedSpan {
            text: sentence[..end].to_string(),
            start_loglik: overlap as f64,
            end_loglik: overlap as f64,
        }])
    }
}
