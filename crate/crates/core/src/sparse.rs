//! Okapi BM25 over an inverted index of abstract tokens.
//!
//! Scoring uses
//!
//! ```text
//! score(d, q) = Σ_{t ∈ q} idf(t) · tf·(k1 + 1) / (tf + k1·(1 − b + b·dl/avgdl))
//! idf(t)      = ln(1 + (N − df + 0.5) / (df + 0.5))
//! ```
//!
//! where a query term repeated in the query contributes once per occurrence.
//! The idf variant is strictly positive for every `df` in `[1, N]`.
//!
//! # Serialized layout (version 1)
//!
//! All integers little-endian; `varint` is unsigned LEB128.
//!
//! ```text
//! magic      4 bytes  "CQBM"
//! version    u16      1
//! k1         f64
//! b          f64
//! doc_count  u32
//! doc table  doc_count × { id_len u32, id utf-8 bytes, token_count u32 }
//! term_count u32
//! terms      term_count × (sorted by term bytes)
//!            { term_len u32, term utf-8 bytes, df u32,
//!              df × { ordinal_delta varint, tf varint } }
//! ```
//!
//! The first delta of each posting list is the ordinal itself; later deltas
//! are strictly positive. Trailing bytes are rejected.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::par::Execution;
use crate::{sort_scored, ScoredDoc};

pub const MAGIC: &[u8; 4] = b"CQBM";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.5, b: 0.75 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub doc_ordinal: u32,
    pub term_frequency: u32,
}

/// `ln(1 + (N − df + 0.5)/(df + 0.5))`.
pub fn idf(doc_count: usize, doc_freq: usize) -> f64 {
    let n = doc_count as f64;
    let df = doc_freq as f64;
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    params: Bm25Params,
    doc_ids: Vec<String>,
    doc_lengths: Vec<u32>,
    avg_doc_length: f64,
    postings: BTreeMap<String, Vec<Posting>>,
    // k1·(1 − b + b·dl/avgdl) per document; derived, never serialized
    length_norm: Vec<f64>,
}

impl InvertedIndex {
    /// Indexes the abstract tokens of each document. Bodies are not indexed.
    pub fn build(docs: &[Document], params: Bm25Params) -> Result<Self> {
        Self::from_token_lists(
            docs.iter().map(|d| (d.doc_id.clone(), d.abstract_tokens.clone())),
            params,
        )
    }

    pub fn from_token_lists<I>(docs: I, params: Bm25Params) -> Result<Self>
    where
        I: IntoIterator<Item = (String, Vec<String>)>,
    {
        let mut doc_ids = Vec::new();
        let mut doc_lengths = Vec::new();
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut seen = std::collections::HashSet::new();

        for (ordinal, (doc_id, tokens)) in docs.into_iter().enumerate() {
            if !seen.insert(doc_id.clone()) {
                return Err(Error::InvalidInput(format!("duplicate doc_id {doc_id}")));
            }
            let ordinal = u32::try_from(ordinal)
                .map_err(|_| Error::InvalidInput("too many documents".into()))?;
            let mut tf: BTreeMap<&str, u32> = BTreeMap::new();
            for tok in &tokens {
                *tf.entry(tok.as_str()).or_default() += 1;
            }
            for (term, freq) in tf {
                postings.entry(term.to_string()).or_default().push(Posting {
                    doc_ordinal: ordinal,
                    term_frequency: freq,
                });
            }
            doc_ids.push(doc_id);
            doc_lengths.push(tokens.len() as u32);
        }
        if doc_ids.is_empty() {
            return Err(Error::InvalidInput("cannot index an empty document set".into()));
        }
        Ok(Self::assemble(params, doc_ids, doc_lengths, postings))
    }

    fn assemble(
        params: Bm25Params,
        doc_ids: Vec<String>,
        doc_lengths: Vec<u32>,
        postings: BTreeMap<String, Vec<Posting>>,
    ) -> Self {
        let total: u64 = doc_lengths.iter().map(|&l| u64::from(l)).sum();
        let avg_doc_length = total as f64 / doc_lengths.len() as f64;
        let length_norm = doc_lengths
            .iter()
            .map(|&dl| {
                let rel = if avg_doc_length > 0.0 {
                    f64::from(dl) / avg_doc_length
                } else {
                    0.0
                };
                params.k1 * (1.0 - params.b + params.b * rel)
            })
            .collect();
        Self {
            params,
            doc_ids,
            doc_lengths,
            avg_doc_length,
            postings,
            length_norm,
        }
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn term_count(&self) -> usize {
        self.postings.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn doc_lengths(&self) -> &[u32] {
        &self.doc_lengths
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.postings.keys().map(String::as_str)
    }

    pub fn idf(&self, term: &str) -> Option<f64> {
        let df = self.postings(term).len();
        (df > 0).then(|| idf(self.doc_count(), df))
    }

    /// Scores every document containing at least one query token.
    pub fn bm25_scores<S: AsRef<str>>(&self, query_tokens: &[S]) -> Vec<ScoredDoc> {
        let mut acc = vec![0.0f64; self.doc_count()];
        let mut touched: Vec<u32> = Vec::new();
        let mut hit = vec![false; self.doc_count()];
        let k1p1 = self.params.k1 + 1.0;

        for tok in query_tokens {
            let postings = self.postings(tok.as_ref());
            if postings.is_empty() {
                continue;
            }
            let w = idf(self.doc_count(), postings.len());
            for p in postings {
                let d = p.doc_ordinal as usize;
                let tf = f64::from(p.term_frequency);
                acc[d] += w * tf * k1p1 / (tf + self.length_norm[d]);
                if !hit[d] {
                    hit[d] = true;
                    touched.push(p.doc_ordinal);
                }
            }
        }

        let mut out: Vec<ScoredDoc> = touched
            .into_iter()
            .map(|d| ScoredDoc::new(self.doc_ids[d as usize].clone(), acc[d as usize]))
            .collect();
        sort_scored(&mut out);
        out
    }

    pub fn score_batch<S>(&self, queries: &[Vec<S>], exec: Execution) -> Vec<Vec<ScoredDoc>>
    where
        S: AsRef<str> + Sync,
    {
        exec.map(queries, |q| self.bm25_scores(q))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_u16::<LittleEndian>(FORMAT_VERSION)?;
        w.write_f64::<LittleEndian>(self.params.k1)?;
        w.write_f64::<LittleEndian>(self.params.b)?;
        w.write_u32::<LittleEndian>(self.doc_count() as u32)?;
        for (id, len) in self.doc_ids.iter().zip(&self.doc_lengths) {
            write_str(&mut w, id)?;
            w.write_u32::<LittleEndian>(*len)?;
        }
        w.write_u32::<LittleEndian>(self.postings.len() as u32)?;
        for (term, list) in &self.postings {
            write_str(&mut w, term)?;
            w.write_u32::<LittleEndian>(list.len() as u32)?;
            let mut prev = 0u32;
            for p in list {
                write_varint(&mut w, u64::from(p.doc_ordinal - prev))?;
                write_varint(&mut w, u64::from(p.term_frequency))?;
                prev = p.doc_ordinal;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = io::Cursor::new(bytes);
        let index = Self::read_from(&mut cursor)?;
        if (cursor.position() as usize) != bytes.len() {
            return Err(Error::CorruptIndex("trailing bytes after term dictionary".into()));
        }
        Ok(index)
    }

    /// Reads one index from `r`, leaving anything after it unread.
    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(corrupt)?;
        if &magic != MAGIC {
            return Err(Error::CorruptIndex("bad magic bytes".into()));
        }
        let version = r.read_u16::<LittleEndian>().map_err(corrupt)?;
        if version != FORMAT_VERSION {
            return Err(Error::CorruptIndex(format!(
                "unsupported format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let k1 = r.read_f64::<LittleEndian>().map_err(corrupt)?;
        let b = r.read_f64::<LittleEndian>().map_err(corrupt)?;
        if !k1.is_finite() || !b.is_finite() {
            return Err(Error::CorruptIndex("non-finite BM25 parameters".into()));
        }
        let doc_count = r.read_u32::<LittleEndian>().map_err(corrupt)?;
        if doc_count == 0 {
            return Err(Error::CorruptIndex("zero documents".into()));
        }
        let mut doc_ids = Vec::new();
        let mut doc_lengths = Vec::new();
        for _ in 0..doc_count {
            doc_ids.push(read_str(&mut r)?);
            doc_lengths.push(r.read_u32::<LittleEndian>().map_err(corrupt)?);
        }
        let term_count = r.read_u32::<LittleEndian>().map_err(corrupt)?;
        let mut postings = BTreeMap::new();
        let mut last_term: Option<String> = None;
        for _ in 0..term_count {
            let term = read_str(&mut r)?;
            if last_term.as_ref().is_some_and(|prev| *prev >= term) {
                return Err(Error::CorruptIndex("term dictionary not sorted".into()));
            }
            let df = r.read_u32::<LittleEndian>().map_err(corrupt)?;
            if df == 0 || df > doc_count {
                return Err(Error::CorruptIndex(format!("bad document frequency {df} for {term}")));
            }
            let mut list = Vec::with_capacity(df as usize);
            let mut ordinal = 0u64;
            for i in 0..df {
                let delta = read_varint(&mut r)?;
                if i > 0 && delta == 0 {
                    return Err(Error::CorruptIndex("posting list not strictly increasing".into()));
                }
                ordinal += delta;
                let tf = read_varint(&mut r)?;
                if ordinal >= u64::from(doc_count) || tf == 0 || tf > u64::from(u32::MAX) {
                    return Err(Error::CorruptIndex(format!("bad posting in {term}")));
                }
                list.push(Posting {
                    doc_ordinal: ordinal as u32,
                    term_frequency: tf as u32,
                });
            }
            last_term = Some(term.clone());
            postings.insert(term, list);
        }
        Ok(Self::assemble(Bm25Params { k1, b }, doc_ids, doc_lengths, postings))
    }
}

fn corrupt(e: io::Error) -> Error {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        Error::CorruptIndex("truncated stream".into())
    } else {
        Error::Io(e)
    }
}

fn write_str<W: Write>(w: &mut W, s: &str) -> io::Result<()> {
    w.write_u32::<LittleEndian>(s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = r.read_u32::<LittleEndian>().map_err(corrupt)? as usize;
    let mut buf = Vec::new();
    r.by_ref()
        .take(len as u64)
        .read_to_end(&mut buf)
        .map_err(corrupt)?;
    if buf.len() != len {
        return Err(Error::CorruptIndex("truncated stream".into()));
    }
    String::from_utf8(buf).map_err(|_| Error::CorruptIndex("invalid utf-8 string".into()))
}

fn write_varint<W: Write>(w: &mut W, mut v: u64) -> io::Result<()> {
    loop {
        let byte = (v & 0x7f) as u8;
        v >>= 7;
        if v == 0 {
            return w.write_u8(byte);
        }
        w.write_u8(byte | 0x80)?;
    }
}

fn read_varint<R: Read>(r: &mut R) -> Result<u64> {
    let mut value = 0u64;
    for shift in (0..64).step_by(7) {
        let byte = r.read_u8().map_err(corrupt)?;
        value |= u64::from(byte & 0x7f) << shift;
        if byte & 0x80 == 0 {
            return Ok(value);
        }
    }
    Err(Error::CorruptIndex("varint overflow".into()))
}
