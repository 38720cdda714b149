//! Loaded artifacts plus providers: the object the CLI, the HTTP service
//! and the dialogue manager query.
//!
//! An artifact directory holds
//!
//! | file              | written by       |
//! |-------------------|------------------|
//! | `documents.jsonl` | ingest           |
//! | `chunks.jsonl`    | ingest           |
//! | `drop_report.json`| ingest           |
//! | `sparse.idx`      | index            |
//! | `vectors.bin`     | embed            |
//! | `vectors.json`    | embed            |

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use crate::answer::{answer_pipeline, AnswerConfig, OverlapExtractor, SpanExtractor, SystemResponse};
use crate::corpus::{parse_corpus, write_records, Catalog, ChunkStore, CorpusConfig, Document, Ingested};
use crate::dense::{DenseStore, EmbeddingProvider, HashedEmbedder};
use crate::error::{Error, Result};
use crate::fusion::{retrieve, FusionConfig, Retrieval};
use crate::par::Execution;
use crate::sparse::InvertedIndex;

pub const DOCUMENTS_FILE: &str = "documents.jsonl";
pub const CHUNKS_FILE: &str = "chunks.jsonl";
pub const DROP_REPORT_FILE: &str = "drop_report.json";
pub const INDEX_FILE: &str = "sparse.idx";

/// Reads `documents.jsonl`; every line must still satisfy the document
/// invariants.
pub fn load_documents(dir: &Path, cfg: &CorpusConfig) -> Result<Vec<Document>> {
    let path = dir.join(DOCUMENTS_FILE);
    let parsed = parse_corpus(BufReader::new(File::open(&path)?))?;
    if let Some(issue) = parsed.skipped.first() {
        return Err(Error::CorruptArtifact {
            path: path.display().to_string(),
            reason: format!("line {}: {}", issue.line, issue.reason),
        });
    }
    parsed
        .records
        .into_iter()
        .map(|rec| {
            let id = rec.doc_id.clone();
            Document::from_record(rec, cfg).map_err(|reason| Error::CorruptArtifact {
                path: path.display().to_string(),
                reason: format!("document {id} fails filter {reason:?}"),
            })
        })
        .collect()
}

/// Writes `documents.jsonl`, `chunks.jsonl` and `drop_report.json`.
pub fn write_ingested(dir: &Path, ingested: &Ingested) -> Result<()> {
    fs::create_dir_all(dir)?;
    let records: Vec<_> = ingested.documents.iter().map(Document::to_record).collect();
    let mut out = BufWriter::new(File::create(dir.join(DOCUMENTS_FILE))?);
    write_records(&mut out, &records)?;
    out.flush()?;
    let mut out = BufWriter::new(File::create(dir.join(CHUNKS_FILE))?);
    ingested.chunks.write_jsonl(&mut out)?;
    out.flush()?;
    fs::write(dir.join(DROP_REPORT_FILE), serde_json::to_vec_pretty(&ingested.report)?)?;
    Ok(())
}

pub fn write_index(dir: &Path, index: &InvertedIndex) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(INDEX_FILE), index.to_bytes())?;
    Ok(())
}

pub fn load_chunks(dir: &Path) -> Result<ChunkStore> {
    ChunkStore::read_jsonl(BufReader::new(File::open(dir.join(CHUNKS_FILE))?))
}

pub fn load_index(dir: &Path) -> Result<InvertedIndex> {
    InvertedIndex::from_bytes(&fs::read(dir.join(INDEX_FILE))?)
}

pub struct Engine {
    catalog: Catalog,
    index: InvertedIndex,
    store: DenseStore,
    embedder: Arc<dyn EmbeddingProvider>,
    extractor: Arc<dyn SpanExtractor>,
    pub fusion: FusionConfig,
    pub answer: AnswerConfig,
    pub execution: Execution,
}

impl Engine {
    /// Index and store must cover exactly the catalog's documents, in the
    /// same order.
    pub fn new(catalog: Catalog, index: InvertedIndex, store: DenseStore) -> Result<Self> {
        let catalog_ids: Vec<&str> = catalog.documents().iter().map(|d| d.doc_id.as_str()).collect();
        let index_ids: Vec<&str> = index.doc_ids().iter().map(String::as_str).collect();
        let store_ids: Vec<&str> = store.doc_ids().iter().map(String::as_str).collect();
        if catalog_ids != index_ids || catalog_ids != store_ids {
            return Err(Error::Consistency(
                "documents, sparse index and dense store cover different document sets".into(),
            ));
        }
        let embedder = HashedEmbedder::new(store.dimension())?;
        Ok(Self {
            catalog,
            index,
            store,
            embedder: Arc::new(embedder),
            extractor: Arc::new(OverlapExtractor::default()),
            fusion: FusionConfig::default(),
            answer: AnswerConfig::default(),
            execution: Execution::default(),
        })
    }

    pub fn load(dir: &Path, corpus: &CorpusConfig) -> Result<Self> {
        let docs = load_documents(dir, corpus)?;
        let catalog = Catalog::new(docs, load_chunks(dir)?)?;
        Self::new(catalog, load_index(dir)?, DenseStore::load(dir)?)
    }

    /// Replaces the query embedder. Its dimension must match the store.
    pub fn with_embedder(mut self, embedder: Arc<dyn EmbeddingProvider>) -> Result<Self> {
        if embedder.dimension() != self.store.dimension() {
            return Err(Error::InvalidParameter(format!(
                "embedder dimension {} does not match store dimension {}",
                embedder.dimension(),
                self.store.dimension()
            )));
        }
        if embedder.provider_id() != self.store.provider_id() {
            tracing::warn!(
                query = %embedder.provider_id(),
                store = %self.store.provider_id(),
                "query embedder differs from the one that built the store"
            );
        }
        self.embedder = embedder;
        Ok(self)
    }

    pub fn with_extractor(mut self, extractor: Arc<dyn SpanExtractor>) -> Self {
        self.extractor = extractor;
        self
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn index(&self) -> &InvertedIndex {
        &self.index
    }

    pub fn store(&self) -> &DenseStore {
        &self.store
    }

    pub fn embedder(&self) -> &dyn EmbeddingProvider {
        self.embedder.as_ref()
    }

    pub fn search(&self, query: &str, cfg: &FusionConfig) -> Result<Retrieval> {
        retrieve(query, &self.index, &self.store, self.embedder.as_ref(), cfg)
    }

    pub fn ask(&self, question: &str) -> Result<SystemResponse> {
        self.ask_with(question, &self.fusion, &self.answer)
    }

    /// Retrieval followed by answer extraction for `question`.
    pub fn ask_with(&self, question: &str, fusion: &FusionConfig, answer: &AnswerConfig) -> Result<SystemResponse> {
        let started = std::time::Instant::now();
        let retrieval = self.search(question, fusion)?;
        let retrieved_at = started.elapsed();
        let mut response = answer_pipeline(
            question,
            &retrieval.candidates,
            &self.catalog,
            self.extractor.as_ref(),
            answer,
            self.execution,
        )?;
        tracing::info!(
            retrieval_ms = retrieved_at.as_secs_f64() * 1e3,
            total_ms = started.elapsed().as_secs_f64() * 1e3,
            kind = ?response.kind,
            "ask"
        );
        response.diagnostics.retrieval = Some(retrieval.trace);
        response.diagnostics.warnings.extend(retrieval.warnings);
        Ok(response)
    }
}
