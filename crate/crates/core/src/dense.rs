//! Abstract embeddings and exhaustive cosine ranking.
//!
//! Vectors come from an [`EmbeddingProvider`]. The store keeps them as a
//! flat row-major `f32` matrix, which is also its on-disk form: a raw
//! little-endian matrix file plus a JSON manifest carrying the dimension,
//! row count, provider id, document ids and a SHA-256 of the matrix bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Document;
use crate::error::{Error, ProviderError, Result};
use crate::par::Execution;
use crate::text::{fnv1a, tokenize};
use crate::{sort_scored, ScoredDoc};

pub const DEFAULT_DIMENSION: usize = 768;
pub const VECTORS_FILE: &str = "vectors.bin";
pub const MANIFEST_FILE: &str = "vectors.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(dimension: usize) -> Self {
        Self(vec![0.0; dimension])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl From<Vec<f64>> for EmbeddingVector {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

/// Maps text to a fixed-dimension vector. Implementations must be
/// deterministic for identical input.
pub trait EmbeddingProvider: Send + Sync {
    fn dimension(&self) -> usize;

    fn provider_id(&self) -> String;

    fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError>;
}

/// Hashed bag of tokens: every token lands in bucket `fnv1a(token) % dim`,
/// bucket counts are L2-normalized. Empty text maps to the zero vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashedEmbedder {
    dimension: usize,
}

impl HashedEmbedder {
    pub fn new(dimension: usize) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::InvalidParameter("embedding dimension must be positive".into()));
        }
        Ok(Self { dimension })
    }
}

impl Default for HashedEmbedder {
    fn default() -> Self {
        Self {
            dimension: DEFAULT_DIMENSION,
        }
    }
}

impl EmbeddingProvider for HashedEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn provider_id(&self) -> String {
        format!("hashed-bow-fnv1a-{}", self.dimension)
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        let mut v = vec![0.0f64; self.dimension];
        for tok in tokenize(text) {
            v[(fnv1a(tok.as_bytes()) % self.dimension as u64) as usize] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        Ok(EmbeddingVector(v))
    }
}

fn cosine_slices(u: &[f64], v: impl Iterator<Item = f64> + Clone) -> f64 {
    let dot: f64 = u.iter().zip(v.clone()).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.map(|b| b * b).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        0.0
    } else {
        dot / (nu * nv)
    }
}

/// `dot(u, v) / (‖u‖·‖v‖)`, defined as 0 when either norm is 0.
pub fn cosine(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64> {
    if u.dimension() != v.dimension() {
        return Err(Error::InvalidInput(format!(
            "dimension mismatch: {} vs {}",
            u.dimension(),
            v.dimension()
        )));
    }
    Ok(cosine_slices(&u.0, v.0.iter().copied()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub dimension: usize,
    pub count: usize,
    pub provider_id: String,
    pub checksum: String,
    pub doc_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseStore {
    dimension: usize,
    provider_id: String,
    doc_ids: Vec<String>,
    vectors: Vec<f32>,
}

impl DenseStore {
    /// Embeds each document's abstract. Provider calls may run concurrently;
    /// rows are written by ordinal.
    pub fn build(docs: &[Document], provider: &dyn EmbeddingProvider, exec: Execution) -> Result<Self> {
        if docs.is_empty() {
            return Err(Error::InvalidInput("cannot embed an empty document set".into()));
        }
        let dimension = provider.dimension();
        if dimension == 0 {
            return Err(Error::InvalidParameter("provider dimension must be positive".into()));
        }
        let rows = exec.map(docs, |doc| {
            let v = provider.embed(&doc.abstract_text).and_then(|v| {
                if v.dimension() != dimension {
                    Err(ProviderError::DimensionMismatch {
                        expected: dimension,
                        got: v.dimension(),
                    })
                } else if !v.is_finite() {
                    Err(ProviderError::BadResponse("non-finite vector component".into()))
                } else {
                    Ok(v)
                }
            });
            v.map_err(|source| Error::Embedding {
                doc_id: doc.doc_id.clone(),
                source,
            })
        });
        let mut vectors = Vec::with_capacity(docs.len() * dimension);
        for row in rows {
            vectors.extend(row?.0.into_iter().map(|x| x as f32));
        }
        Ok(Self {
            dimension,
            provider_id: provider.provider_id(),
            doc_ids: docs.iter().map(|d| d.doc_id.clone()).collect(),
            vectors,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn provider_id(&self) -> &str {
        &self.provider_id
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn row(&self, ordinal: usize) -> &[f32] {
        &self.vectors[ordinal * self.dimension..(ordinal + 1) * self.dimension]
    }

    pub fn vector(&self, ordinal: usize) -> EmbeddingVector {
        EmbeddingVector(self.row(ordinal).iter().map(|&x| f64::from(x)).collect())
    }

    pub fn dense_scores(&self, query: &EmbeddingVector) -> Result<Vec<ScoredDoc>> {
        self.dense_scores_with(query, Execution::default())
    }

    /// Cosine against every stored vector, best first.
    pub fn dense_scores_with(&self, query: &EmbeddingVector, exec: Execution) -> Result<Vec<ScoredDoc>> {
        if query.dimension() != self.dimension {
            return Err(Error::InvalidInput(format!(
                "query dimension {} does not match store dimension {}",
                query.dimension(),
                self.dimension
            )));
        }
        let q = query.values();
        let mut scored = exec.map_range(self.len(), |i| {
            let row = self.row(i);
            ScoredDoc::new(
                self.doc_ids[i].clone(),
                cosine_slices(q, row.iter().map(|&x| f64::from(x))),
            )
        });
        sort_scored(&mut scored);
        Ok(scored)
    }

    fn matrix_bytes(&self) -> Vec<u8> {
        self.vectors.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            dimension: self.dimension,
            count: self.len(),
            provider_id: self.provider_id.clone(),
            checksum: sha256_hex(&self.matrix_bytes()),
            doc_ids: self.doc_ids.clone(),
        }
    }

    /// Writes `vectors.bin` and `vectors.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::write(dir.join(VECTORS_FILE), self.matrix_bytes())?;
        let manifest = serde_json::to_vec_pretty(&self.manifest())?;
        fs::write(dir.join(MANIFEST_FILE), manifest)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let manifest: Manifest = serde_json::from_slice(&fs::read(&manifest_path)?)?;
        let bin_path = dir.join(VECTORS_FILE);
        let bytes = fs::read(&bin_path)?;
        let bad = |reason: String| Error::CorruptArtifact {
            path: bin_path.display().to_string(),
            reason,
        };
        if manifest.dimension == 0 || manifest.count != manifest.doc_ids.len() {
            return Err(bad("manifest is inconsistent".into()));
        }
        if bytes.len() != manifest.count * manifest.dimension * 4 {
            return Err(bad(format!(
                "expected {} bytes, found {}",
                manifest.count * manifest.dimension * 4,
                bytes.len()
            )));
        }
        if sha256_hex(&bytes) != manifest.checksum {
            return Err(bad("checksum mismatch".into()));
        }
        let vectors = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Self {
            dimension: manifest.dimension,
            provider_id: manifest.provider_id,
            doc_ids: manifest.doc_ids,
            vectors,
        })
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
