//! Corpus ingestion: parse line-delimited records, keep the richest copy of
//! each document across sources, drop documents outside the size limits and
//! cut bodies into overlapping token windows.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::Execution;
use crate::text::{count_tokens, token_spans, tokenize};

pub const DEFAULT_WINDOW: usize = 220;
pub const DEFAULT_OVERLAP: usize = 50;
pub const DEFAULT_MAX_ABSTRACT_TOKENS: usize = 300;
pub const DEFAULT_MAX_BODY_PARAGRAPHS: usize = 100;

/// Separator placed between body paragraphs when they are concatenated into
/// one token stream. It contains no alphanumerics, so it never produces a
/// token of its own.
const PARAGRAPH_SEPARATOR: &str = "\n\n";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub window: usize,
    pub overlap: usize,
    pub max_abstract_tokens: usize,
    pub max_body_paragraphs: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            overlap: DEFAULT_OVERLAP,
            max_abstract_tokens: DEFAULT_MAX_ABSTRACT_TOKENS,
            max_body_paragraphs: DEFAULT_MAX_BODY_PARAGRAPHS,
        }
    }
}

/// One line of the corpus file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawRecord {
    pub doc_id: String,
    pub source: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    #[serde(rename = "body")]
    pub body_paragraphs: Vec<String>,
}

impl RawRecord {
    /// Abstract tokens plus body tokens; the quantity deduplication maximizes.
    pub fn token_count(&self) -> usize {
        count_tokens(&self.abstract_text)
            + self
                .body_paragraphs
                .iter()
                .map(|p| count_tokens(p))
                .sum::<usize>()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineIssue {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedCorpus {
    pub records: Vec<RawRecord>,
    pub skipped: Vec<LineIssue>,
}

/// Parses one JSON object per line. Blank lines are ignored; malformed lines
/// and records with an empty `doc_id` are skipped and reported by 1-based
/// line number.
pub fn parse_corpus<R: BufRead>(input: R) -> Result<ParsedCorpus> {
    let mut parsed = ParsedCorpus::default();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<RawRecord>(&line) {
            Ok(rec) if rec.doc_id.trim().is_empty() => parsed.skipped.push(LineIssue {
                line: line_no,
                reason: "empty doc_id".into(),
            }),
            Ok(rec) => parsed.records.push(rec),
            Err(e) => parsed.skipped.push(LineIssue {
                line: line_no,
                reason: format!("malformed record: {e}"),
            }),
        }
    }
    Ok(parsed)
}

pub fn write_records<'a, W, I>(mut out: W, records: I) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a RawRecord>,
{
    for rec in records {
        serde_json::to_writer(&mut out, rec)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Keeps one record per `doc_id`: the one with the most tokens, the earliest
/// on ties. Output follows the order in which each id first appeared.
pub fn deduplicate(records: Vec<RawRecord>) -> Vec<RawRecord> {
    let mut slot_of: HashMap<String, usize> = HashMap::new();
    let mut kept: Vec<(RawRecord, usize)> = Vec::new();
    for rec in records {
        let tokens = rec.token_count();
        match slot_of.get(&rec.doc_id) {
            Some(&slot) => {
                if tokens > kept[slot].1 {
                    kept[slot] = (rec, tokens);
                }
            }
            None => {
                slot_of.insert(rec.doc_id.clone(), kept.len());
                kept.push((rec, tokens));
            }
        }
    }
    kept.into_iter().map(|(rec, _)| rec).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    NoAbstract,
    NoBody,
    AbstractLength,
    BodyLength,
}

/// A record that passed every filter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    pub abstract_text: String,
    pub abstract_tokens: Vec<String>,
    pub body_paragraphs: Vec<String>,
    pub source: String,
}

impl Document {
    /// Applies the presence checks first, then the size limits.
    pub fn from_record(rec: RawRecord, cfg: &CorpusConfig) -> Result<Self, DropReason> {
        let abstract_tokens = tokenize(&rec.abstract_text);
        if abstract_tokens.is_empty() {
            return Err(DropReason::NoAbstract);
        }
        if rec.body_paragraphs.iter().all(|p| count_tokens(p) == 0) {
            return Err(DropReason::NoBody);
        }
        if abstract_tokens.len() > cfg.max_abstract_tokens {
            return Err(DropReason::AbstractLength);
        }
        if rec.body_paragraphs.len() > cfg.max_body_paragraphs {
            return Err(DropReason::BodyLength);
        }
        Ok(Self {
            doc_id: rec.doc_id,
            title: rec.title,
            abstract_text: rec.abstract_text,
            abstract_tokens,
            body_paragraphs: rec.body_paragraphs,
            source: rec.source,
        })
    }

    pub fn to_record(&self) -> RawRecord {
        RawRecord {
            doc_id: self.doc_id.clone(),
            source: self.source.clone(),
            title: self.title.clone(),
            abstract_text: self.abstract_text.clone(),
            body_paragraphs: self.body_paragraphs.clone(),
        }
    }

    pub fn body_text(&self) -> String {
        self.body_paragraphs.join(PARAGRAPH_SEPARATOR)
    }
}

/// Per-reason accounting for one ingestion run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropReport {
    pub input: usize,
    pub deduped: usize,
    pub dropped_no_abstract: usize,
    pub dropped_no_body: usize,
    pub dropped_abstract_len: usize,
    pub dropped_body_len: usize,
    pub kept: usize,
}

impl DropReport {
    fn record(&mut self, reason: DropReason) {
        match reason {
            DropReason::NoAbstract => self.dropped_no_abstract += 1,
            DropReason::NoBody => self.dropped_no_body += 1,
            DropReason::AbstractLength => self.dropped_abstract_len += 1,
            DropReason::BodyLength => self.dropped_body_len += 1,
        }
    }
}

/// Converts deduplicated records into documents. The returned report has
/// `input` and `deduped` both set to the number of records given.
pub fn filter_documents(records: Vec<RawRecord>, cfg: &CorpusConfig) -> (Vec<Document>, DropReport) {
    let mut report = DropReport {
        input: records.len(),
        deduped: records.len(),
        ..DropReport::default()
    };
    let mut docs = Vec::with_capacity(records.len());
    for rec in records {
        match Document::from_record(rec, cfg) {
            Ok(doc) => docs.push(doc),
            Err(reason) => report.record(reason),
        }
    }
    report.kept = docs.len();
    (docs, report)
}

/// A window of body tokens `[token_start, token_end)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub doc_id: String,
    pub ordinal: usize,
    pub token_start: usize,
    pub token_end: usize,
    pub text: String,
}

/// Token ranges of the sliding windows over a body of `len` tokens.
///
/// Starts advance by `window - overlap`. Once a window reaches the end of
/// the body no further window is emitted, so a tail that would sit entirely
/// inside the previous chunk is suppressed.
pub fn window_spans(len: usize, window: usize, overlap: usize) -> Result<Vec<(usize, usize)>> {
    if window == 0 {
        return Err(Error::InvalidParameter("window must be positive".into()));
    }
    if overlap >= window {
        return Err(Error::InvalidParameter(format!(
            "overlap {overlap} must be smaller than window {window}"
        )));
    }
    let step = window - overlap;
    let mut spans = Vec::new();
    let mut start = 0;
    while start < len {
        let end = (start + window).min(len);
        spans.push((start, end));
        if end == len {
            break;
        }
        start += step;
    }
    Ok(spans)
}

pub fn chunk_body(doc: &Document, window: usize, overlap: usize) -> Result<Vec<Chunk>> {
    let body = doc.body_text();
    let spans = token_spans(&body);
    let windows = window_spans(spans.len(), window, overlap)?;
    Ok(windows
        .into_iter()
        .enumerate()
        .map(|(ordinal, (start, end))| Chunk {
            chunk_id: format!("{}#{}", doc.doc_id, ordinal),
            doc_id: doc.doc_id.clone(),
            ordinal,
            token_start: start,
            token_end: end,
            text: body[spans[start].start..spans[end - 1].end].to_string(),
        })
        .collect())
}

/// Lookup from document id to its body chunks, in ordinal order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ChunkStore {
    by_doc: BTreeMap<String, Vec<Chunk>>,
}

impl ChunkStore {
    pub fn build(docs: &[Document], window: usize, overlap: usize, exec: Execution) -> Result<Self> {
        let chunked = exec.map(docs, |doc| chunk_body(doc, window, overlap));
        let mut by_doc = BTreeMap::new();
        for (doc, chunks) in docs.iter().zip(chunked) {
            by_doc.insert(doc.doc_id.clone(), chunks?);
        }
        Ok(Self { by_doc })
    }

    pub fn get(&self, doc_id: &str) -> &[Chunk] {
        self.by_doc.get(doc_id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn doc_count(&self) -> usize {
        self.by_doc.len()
    }

    pub fn chunk_count(&self) -> usize {
        self.by_doc.values().map(Vec::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Chunk> {
        self.by_doc.values().flatten()
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for chunk in self.iter() {
            serde_json::to_writer(&mut out, chunk)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let mut by_doc: BTreeMap<String, Vec<Chunk>> = BTreeMap::new();
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let chunk: Chunk = serde_json::from_str(&line)?;
            by_doc.entry(chunk.doc_id.clone()).or_default().push(chunk);
        }
        for chunks in by_doc.values_mut() {
            chunks.sort_by_key(|c| c.ordinal);
        }
        Ok(Self { by_doc })
    }
}

/// Documents plus their chunks, addressable by id.
#[derive(Debug, Clone, Default)]
pub struct Catalog {
    documents: Vec<Document>,
    position: HashMap<String, usize>,
    chunks: ChunkStore,
}

impl Catalog {
    pub fn new(documents: Vec<Document>, chunks: ChunkStore) -> Result<Self> {
        let mut position = HashMap::with_capacity(documents.len());
        for (i, doc) in documents.iter().enumerate() {
            if position.insert(doc.doc_id.clone(), i).is_some() {
                return Err(Error::InvalidInput(format!("duplicate doc_id {}", doc.doc_id)));
            }
        }
        Ok(Self {
            documents,
            position,
            chunks,
        })
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn document(&self, doc_id: &str) -> Option<&Document> {
        self.position.get(doc_id).map(|&i| &self.documents[i])
    }

    pub fn title(&self, doc_id: &str) -> Option<&str> {
        self.document(doc_id).map(|d| d.title.as_str())
    }

    pub fn chunks(&self, doc_id: &str) -> &[Chunk] {
        self.chunks.get(doc_id)
    }

    pub fn chunk_store(&self) -> &ChunkStore {
        &self.chunks
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub documents: Vec<Document>,
    pub chunks: ChunkStore,
    pub report: DropReport,
}

/// Deduplicate, filter and chunk in one pass.
pub fn ingest(records: Vec<RawRecord>, cfg: &CorpusConfig, exec: Execution) -> Result<Ingested> {
    // validate before doing any work
    window_spans(0, cfg.window, cfg.overlap)?;
    let input = records.len();
    let deduped = deduplicate(records);
    let deduped_len = deduped.len();
    let (documents, mut report) = filter_documents(deduped, cfg);
    report.input = input;
    report.deduped = deduped_len;
    let chunks = ChunkStore::build(&documents, cfg.window, cfg.overlap, exec)?;
    Ok(Ingested {
        documents,
        chunks,
        report,
    })
}
