//! Score fusion: per-arm thresholds, union of survivors, min-max
//! normalization over the candidate pool, weighted sum, top-k cut.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::dense::{DenseStore, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::rank_order;
use crate::sparse::InvertedIndex;
use crate::text::tokenize;
use crate::ScoredDoc;

pub const DEFAULT_BM25_THRESHOLD: f64 = 2.77;
pub const DEFAULT_COSINE_THRESHOLD: f64 = 0.89;
pub const DEFAULT_TOP_K: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    SparseOnly,
    DenseOnly,
    Union,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::SparseOnly, Strategy::DenseOnly, Strategy::Union];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::SparseOnly => "sparse_only",
            Strategy::DenseOnly => "dense_only",
            Strategy::Union => "union",
        }
    }

    pub fn uses_sparse(self) -> bool {
        self != Strategy::DenseOnly
    }

    pub fn uses_dense(self) -> bool {
        self != Strategy::SparseOnly
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sparse_only" | "sparse" | "bm25" => Ok(Strategy::SparseOnly),
            "dense_only" | "dense" | "cosine" => Ok(Strategy::DenseOnly),
            "union" => Ok(Strategy::Union),
            other => Err(Error::InvalidParameter(format!("unknown strategy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub bm25_threshold: f64,
    pub cosine_threshold: f64,
    pub top_k: usize,
    pub strategy: Strategy,
    pub bm25_weight: f64,
    pub cosine_weight: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            bm25_threshold: DEFAULT_BM25_THRESHOLD,
            cosine_threshold: DEFAULT_COSINE_THRESHOLD,
            top_k: DEFAULT_TOP_K,
            strategy: Strategy::Union,
            bm25_weight: 1.0,
            cosine_weight: 1.0,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 {
            return Err(Error::InvalidParameter("top_k must be at least 1".into()));
        }
        if !self.bm25_threshold.is_finite() || !self.cosine_threshold.is_finite() {
            return Err(Error::InvalidParameter("thresholds must be finite".into()));
        }
        if !(self.bm25_weight.is_finite() && self.bm25_weight >= 0.0)
            || !(self.cosine_weight.is_finite() && self.cosine_weight >= 0.0)
        {
            return Err(Error::InvalidParameter("weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedCandidate {
    pub doc_id: String,
    pub bm25_raw: f64,
    pub cosine_raw: f64,
    pub bm25_norm: f64,
    pub cosine_norm: f64,
    pub aggregated: f64,
    pub passed_bm25: bool,
    pub passed_cosine: bool,
}

/// Keeps entries scoring at least `threshold`, preserving order.
pub fn threshold_filter(scored: &[ScoredDoc], threshold: f64) -> Vec<ScoredDoc> {
    scored.iter().filter(|s| s.score >= threshold).cloned().collect()
}

/// `(s − min)/(max − min)`; a constant or single-element list maps to 1.0.
pub fn minmax_normalize(scores: &[f64]) -> Vec<f64> {
    let Some(&first) = scores.first() else {
        return Vec::new();
    };
    let (min, max) = scores
        .iter()
        .fold((first, first), |(lo, hi), &s| (lo.min(s), hi.max(s)));
    let range = max - min;
    if range <= 0.0 {
        return vec![1.0; scores.len()];
    }
    scores.iter().map(|s| (s - min) / range).collect()
}

/// Builds the candidate pool from threshold survivors, normalizes each arm
/// over the pool and ranks by the weighted sum.
///
/// A pool member missing from an arm's list takes raw score 0 for that arm.
/// Under a single-arm strategy the other arm contributes nothing to the
/// aggregate and its normalized score is 0.
pub fn fuse(bm25: &[ScoredDoc], dense: &[ScoredDoc], cfg: &FusionConfig) -> Vec<FusedCandidate> {
    let bm25_raw: HashMap<&str, f64> = bm25.iter().map(|s| (s.doc_id.as_str(), s.score)).collect();
    let dense_raw: HashMap<&str, f64> = dense.iter().map(|s| (s.doc_id.as_str(), s.score)).collect();

    // BTreeMap keeps pool order independent of input order
    let mut pool: BTreeMap<&str, (bool, bool)> = BTreeMap::new();
    if cfg.strategy.uses_sparse() {
        for s in bm25.iter().filter(|s| s.score >= cfg.bm25_threshold) {
            pool.entry(&s.doc_id).or_default().0 = true;
        }
    }
    if cfg.strategy.uses_dense() {
        for s in dense.iter().filter(|s| s.score >= cfg.cosine_threshold) {
            pool.entry(&s.doc_id).or_default().1 = true;
        }
    }
    // record the other arm's verdict honestly even when it did not admit the doc
    for (id, (pb, pc)) in pool.iter_mut() {
        *pb = *pb || bm25_raw.get(id).is_some_and(|&s| s >= cfg.bm25_threshold);
        *pc = *pc || dense_raw.get(id).is_some_and(|&s| s >= cfg.cosine_threshold);
    }

    let ids: Vec<&str> = pool.keys().copied().collect();
    let b_raw: Vec<f64> = ids.iter().map(|id| bm25_raw.get(id).copied().unwrap_or(0.0)).collect();
    let c_raw: Vec<f64> = ids.iter().map(|id| dense_raw.get(id).copied().unwrap_or(0.0)).collect();
    let b_norm = if cfg.strategy.uses_sparse() {
        minmax_normalize(&b_raw)
    } else {
        vec![0.0; ids.len()]
    };
    let c_norm = if cfg.strategy.uses_dense() {
        minmax_normalize(&c_raw)
    } else {
        vec![0.0; ids.len()]
    };

    let mut out: Vec<FusedCandidate> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let (passed_bm25, passed_cosine) = pool[id];
            FusedCandidate {
                doc_id: id.to_string(),
                bm25_raw: b_raw[i],
                cosine_raw: c_raw[i],
                bm25_norm: b_norm[i],
                cosine_norm: c_norm[i],
                aggregated: cfg.bm25_weight * b_norm[i] + cfg.cosine_weight * c_norm[i],
                passed_bm25,
                passed_cosine,
            }
        })
        .collect();
    out.sort_by(|a, b| rank_order(a.aggregated, &a.doc_id, b.aggregated, &b.doc_id));
    out.truncate(cfg.top_k);
    out
}

/// Per-query record of what each arm contributed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrievalTrace {
    pub strategy: Option<Strategy>,
    pub query_tokens: usize,
    pub bm25_matched: usize,
    pub bm25_top: Option<f64>,
    pub dense_top: Option<f64>,
    pub bm25_survivors: usize,
    pub dense_survivors: usize,
    pub pool_size: usize,
    pub returned: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Retrieval {
    pub candidates: Vec<FusedCandidate>,
    pub trace: RetrievalTrace,
    pub warnings: Vec<String>,
}

/// Runs both arms for `query` and fuses them. An embedding failure degrades
/// to sparse-only retrieval with a warning.
pub fn retrieve(
    query: &str,
    index: &InvertedIndex,
    store: &DenseStore,
    provider: &dyn EmbeddingProvider,
    cfg: &FusionConfig,
) -> Result<Retrieval> {
    cfg.validate()?;
    let tokens = tokenize(query);
    let bm25 = index.bm25_scores(&tokens);

    let mut warnings = Vec::new();
    let mut effective = *cfg;
    let dense = match provider.embed(query) {
        Ok(q) => store.dense_scores(&q)?,
        Err(e) => {
            warnings.push(format!("embedding provider failed ({e}); using sparse_only retrieval"));
            effective.strategy = Strategy::SparseOnly;
            Vec::new()
        }
    };

    let bm25_survivors = bm25.iter().filter(|s| s.score >= cfg.bm25_threshold).count();
    let dense_survivors = dense.iter().filter(|s| s.score >= cfg.cosine_threshold).count();
    let unbounded = FusionConfig {
        top_k: usize::MAX,
        ..effective
    };
    let mut candidates = fuse(&bm25, &dense, &unbounded);
    let pool_size = candidates.len();
    candidates.truncate(cfg.top_k);

    let trace = RetrievalTrace {
        strategy: Some(effective.strategy),
        query_tokens: tokens.len(),
        bm25_matched: bm25.len(),
        bm25_top: bm25.first().map(|s| s.score),
        dense_top: dense.first().map(|s| s.score),
        bm25_survivors,
        dense_survivors,
        pool_size,
        returned: candidates.len(),
    };
    tracing::debug!(?trace, "retrieval");
    Ok(Retrieval {
        candidates,
        trace,
        warnings,
    })
}
