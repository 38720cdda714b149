//! Threshold tuning against graded relevance judgments.
//!
//! Judgments are collapsed to binary (grade ≥ 1 is relevant) and each
//! strategy is scored by F1 over judged (topic, document) pairs; retrieved
//! documents without a judgment are not counted. Raw scores for every topic
//! are computed once into a [`ScoreTable`] and re-thresholded per grid point.
//!
//! Without a top-k cut, a grid point retrieves a document iff its score
//! clears the threshold, so the whole grid can be counted from one 2-D
//! histogram of "how many grid values does this score clear" per arm plus a
//! prefix sum. With a cut, every point is evaluated directly by fusing.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::corpus::LineIssue;
use crate::dense::{DenseStore, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::fusion::{fuse, FusionConfig, Strategy};
use crate::par::Execution;
use crate::sparse::InvertedIndex;
use crate::text::tokenize;
use crate::ScoredDoc;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Qrel {
    pub topic_id: String,
    pub doc_id: String,
    pub grade: u8,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedQrels {
    pub qrels: Vec<Qrel>,
    pub rejected: Vec<LineIssue>,
}

/// Parses `topic_id iteration doc_id grade` lines. The iteration column is
/// ignored. Grades outside {0, 1, 2}, malformed lines and repeated
/// (topic, doc) pairs are rejected and reported.
pub fn parse_qrels<R: BufRead>(input: R) -> Result<ParsedQrels> {
    let mut out = ParsedQrels::default();
    let mut seen = BTreeSet::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let reject = |reason: String| LineIssue { line: line_no, reason };
        if fields.len() != 4 {
            out.rejected.push(reject(format!("expected 4 fields, found {}", fields.len())));
            continue;
        }
        let grade = match fields[3].parse::<i64>() {
            Ok(g @ 0..=2) => g as u8,
            Ok(g) => {
                out.rejected.push(reject(format!("grade {g} outside 0..=2")));
                continue;
            }
            Err(_) => {
                out.rejected.push(reject(format!("unparseable grade {:?}", fields[3])));
                continue;
            }
        };
        let key = (fields[0].to_string(), fields[2].to_string());
        if !seen.insert(key.clone()) {
            out.rejected.push(reject(format!("duplicate judgment for topic {} doc {}", key.0, key.1)));
            continue;
        }
        out.qrels.push(Qrel {
            topic_id: key.0,
            doc_id: key.1,
            grade,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topic {
    pub topic_id: String,
    pub query: String,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum TopicId {
    Text(String),
    Number(u64),
}

#[derive(Deserialize)]
struct TopicLine {
    topic_id: TopicId,
    query: String,
}

/// Parses line-delimited `{"topic_id": ..., "query": ...}` objects; numeric
/// ids are accepted. Empty queries are rejected.
pub fn parse_topics<R: BufRead>(input: R) -> Result<(Vec<Topic>, Vec<LineIssue>)> {
    let mut topics = Vec::new();
    let mut rejected = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<TopicLine>(&line) {
            Ok(t) if t.query.trim().is_empty() => rejected.push(LineIssue {
                line: idx + 1,
                reason: "empty query".into(),
            }),
            Ok(t) => topics.push(Topic {
                topic_id: match t.topic_id {
                    TopicId::Text(s) => s,
                    TopicId::Number(n) => n.to_string(),
                },
                query: t.query,
            }),
            Err(e) => rejected.push(LineIssue {
                line: idx + 1,
                reason: format!("malformed topic: {e}"),
            }),
        }
    }
    Ok((topics, rejected))
}

/// Binary relevance per topic and document.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Judgments {
    by_topic: BTreeMap<String, BTreeMap<String, bool>>,
}

impl Judgments {
    pub fn get(&self, topic_id: &str, doc_id: &str) -> Option<bool> {
        self.by_topic.get(topic_id)?.get(doc_id).copied()
    }

    pub fn topic(&self, topic_id: &str) -> Option<&BTreeMap<String, bool>> {
        self.by_topic.get(topic_id)
    }

    pub fn topics(&self) -> impl Iterator<Item = (&str, &BTreeMap<String, bool>)> {
        self.by_topic.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.by_topic.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Highly and mildly relevant (grades 2 and 1) become relevant; grade 0
/// becomes not relevant.
pub fn binarize(qrels: &[Qrel]) -> Judgments {
    let mut by_topic: BTreeMap<String, BTreeMap<String, bool>> = BTreeMap::new();
    for q in qrels {
        by_topic
            .entry(q.topic_id.clone())
            .or_default()
            .insert(q.doc_id.clone(), q.grade >= 1);
    }
    Judgments { by_topic }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// `2PR/(P+R)`, computed as `2TP/(2TP+FP+FN)`; 0 on a zero denominator.
    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }

    fn add(&mut self, other: Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// Pool every judged pair, then compute one P/R/F1.
    #[default]
    Micro,
    /// Mean of per-topic P/R/F1 over judged topics.
    Macro,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct F1Score {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub counts: Counts,
}

fn combine(per_topic: &[Counts], averaging: Averaging) -> F1Score {
    let mut pooled = Counts::default();
    for c in per_topic {
        pooled.add(*c);
    }
    match averaging {
        Averaging::Micro => F1Score {
            f1: pooled.f1(),
            precision: pooled.precision(),
            recall: pooled.recall(),
            counts: pooled,
        },
        Averaging::Macro => {
            let n = per_topic.len().max(1) as f64;
            F1Score {
                f1: per_topic.iter().map(Counts::f1).sum::<f64>() / n,
                precision: per_topic.iter().map(Counts::precision).sum::<f64>() / n,
                recall: per_topic.iter().map(Counts::recall).sum::<f64>() / n,
                counts: pooled,
            }
        }
    }
}

fn topic_counts(retrieved: Option<&BTreeSet<String>>, judged: &BTreeMap<String, bool>) -> Counts {
    let mut c = Counts::default();
    for (doc, &relevant) in judged {
        let hit = retrieved.is_some_and(|r| r.contains(doc));
        match (hit, relevant) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => {}
        }
    }
    c
}

/// Scores retrieved document sets against the judgments. Only judged
/// documents count, and every judged topic participates (a topic with no
/// retrieved set retrieves nothing).
pub fn f1_for_strategy(
    retrieved: &BTreeMap<String, BTreeSet<String>>,
    judgments: &Judgments,
    averaging: Averaging,
) -> F1Score {
    let per_topic: Vec<Counts> = judgments
        .topics()
        .map(|(topic, judged)| topic_counts(retrieved.get(topic), judged))
        .collect();
    combine(&per_topic, averaging)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicScores {
    pub topic_id: String,
    pub bm25: Vec<ScoredDoc>,
    pub dense: Vec<ScoredDoc>,
}

/// Raw per-arm scores for every topic, computed once.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub topics: Vec<TopicScores>,
}

impl ScoreTable {
    pub fn compute(
        topics: &[Topic],
        index: &InvertedIndex,
        store: &DenseStore,
        provider: &dyn EmbeddingProvider,
        exec: Execution,
    ) -> Result<Self> {
        let rows = exec.map(topics, |t| -> Result<TopicScores> {
            let bm25 = index.bm25_scores(&tokenize(&t.query));
            let q = provider.embed(&t.query).map_err(|source| Error::Embedding {
                doc_id: format!("topic:{}", t.topic_id),
                source,
            })?;
            Ok(TopicScores {
                topic_id: t.topic_id.clone(),
                bm25,
                dense: store.dense_scores_with(&q, Execution::Sequential)?,
            })
        });
        Ok(Self {
            topics: rows.into_iter().collect::<Result<_>>()?,
        })
    }

    fn get(&self, topic_id: &str) -> Option<&TopicScores> {
        self.topics.iter().find(|t| t.topic_id == topic_id)
    }
}

/// Inclusive range `min, min + step, …, ≤ max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl GridAxis {
    pub const fn new(min: f64, max: f64, step: f64) -> Self {
        Self { min, max, step }
    }

    pub const fn point(value: f64) -> Self {
        Self::new(value, value, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite() && self.step.is_finite()) {
            return Err(Error::InvalidInput("grid bounds must be finite".into()));
        }
        if self.step <= 0.0 {
            return Err(Error::InvalidInput("grid step must be positive".into()));
        }
        if self.min > self.max {
            return Err(Error::InvalidInput(format!(
                "empty grid: min {} > max {}",
                self.min, self.max
            )));
        }
        Ok(())
    }

    /// Grid values, rounded to 1e-9 so decimal steps land on their nominal
    /// values (277 × 0.01 is 2.77, not 2.7700000000000005).
    pub fn values(&self) -> Result<Vec<f64>> {
        self.validate()?;
        let n = ((self.max - self.min) / self.step + 1e-9).floor() as usize + 1;
        Ok((0..n)
            .map(|i| ((self.min + i as f64 * self.step) * 1e9).round() / 1e9)
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grids {
    pub bm25: GridAxis,
    pub cosine: GridAxis,
}

impl Default for Grids {
    fn default() -> Self {
        Self {
            bm25: GridAxis::new(0.0, 10.0, 0.01),
            cosine: GridAxis::new(0.0, 1.0, 0.01),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub averaging: Averaging,
    /// Apply fusion's top-k cut before counting. `None` evaluates the
    /// thresholds alone.
    pub top_k: Option<usize>,
    pub execution: Execution,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            averaging: Averaging::Micro,
            top_k: None,
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bm25_threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cosine_threshold: Option<f64>,
    pub score: F1Score,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub strategy: Strategy,
    pub best: GridPoint,
    /// Every evaluated point, bm25 threshold major, cosine minor.
    pub table: Vec<GridPoint>,
}

type Axis = Vec<Option<f64>>;

fn strategy_axes(strategy: Strategy, grids: &Grids) -> Result<(Axis, Axis)> {
    let axis = |use_it: bool, a: &GridAxis| -> Result<Axis> {
        Ok(if use_it {
            a.values()?.into_iter().map(Some).collect()
        } else {
            vec![None]
        })
    };
    Ok((
        axis(strategy.uses_sparse(), &grids.bm25)?,
        axis(strategy.uses_dense(), &grids.cosine)?,
    ))
}

/// Documents retrieved for every topic at one threshold setting.
pub fn retrieved_sets(
    table: &ScoreTable,
    strategy: Strategy,
    bm25_threshold: Option<f64>,
    cosine_threshold: Option<f64>,
    top_k: Option<usize>,
) -> BTreeMap<String, BTreeSet<String>> {
    let cfg = FusionConfig {
        bm25_threshold: bm25_threshold.unwrap_or(f64::INFINITY),
        cosine_threshold: cosine_threshold.unwrap_or(f64::INFINITY),
        top_k: top_k.unwrap_or(usize::MAX),
        strategy,
        ..FusionConfig::default()
    };
    table
        .topics
        .iter()
        .map(|t| {
            let docs = fuse(&t.bm25, &t.dense, &cfg).into_iter().map(|c| c.doc_id).collect();
            (t.topic_id.clone(), docs)
        })
        .collect()
}

fn pick_best(strategy: Strategy, table: Vec<GridPoint>) -> GridSearchResult {
    // strict > keeps the lexicographically smallest threshold vector on ties
    let mut best = table[0];
    for p in &table[1..] {
        if p.score.f1 > best.score.f1 {
            best = *p;
        }
    }
    GridSearchResult { strategy, best, table }
}

/// Evaluates every grid point by fusing and counting.
pub fn grid_search_direct(
    strategy: Strategy,
    grids: &Grids,
    table: &ScoreTable,
    judgments: &Judgments,
    opts: &EvalOptions,
) -> Result<GridSearchResult> {
    let (b_vals, c_vals) = strategy_axes(strategy, grids)?;
    let points: Vec<(Option<f64>, Option<f64>)> = b_vals
        .iter()
        .flat_map(|&b| c_vals.iter().map(move |&c| (b, c)))
        .collect();
    let evaluated = opts.execution.map(&points, |&(b, c)| GridPoint {
        bm25_threshold: b,
        cosine_threshold: c,
        score: f1_for_strategy(&retrieved_sets(table, strategy, b, c, opts.top_k), judgments, opts.averaging),
    });
    Ok(pick_best(strategy, evaluated))
}

/// Per-topic 2-D histogram of judged documents by how many grid values each
/// arm's score clears, prefix-summed so that entry `[j][k]` counts documents
/// retrieved by neither arm at thresholds `(b[j], c[k])`.
struct MissCounts {
    nc: usize,
    relevant_total: u64,
    irrelevant_total: u64,
    // (relevant, irrelevant) missed, row-major nb × nc
    missed: Vec<(u64, u64)>,
}

impl MissCounts {
    fn build(
        topic: Option<&TopicScores>,
        judged: &BTreeMap<String, bool>,
        b_vals: &[Option<f64>],
        c_vals: &[Option<f64>],
    ) -> Self {
        let (nb, nc) = (b_vals.len(), c_vals.len());
        let bm25_lookup: Option<BTreeMap<&str, f64>> =
            topic.map(|t| t.bm25.iter().map(|s| (s.doc_id.as_str(), s.score)).collect());
        let dense_lookup: Option<BTreeMap<&str, f64>> =
            topic.map(|t| t.dense.iter().map(|s| (s.doc_id.as_str(), s.score)).collect());
        let clears = |vals: &[Option<f64>], lookup: &Option<BTreeMap<&str, f64>>, doc: &str| -> usize {
            match lookup.as_ref().and_then(|m| m.get(doc)) {
                Some(&score) => vals.partition_point(|v| v.is_some_and(|v| v <= score)),
                None => 0,
            }
        };

        // hist[cb][cc] over cb in 0..=nb, cc in 0..=nc
        let w = nc + 1;
        let mut hist = vec![(0u64, 0u64); (nb + 1) * w];
        let (mut rel, mut irr) = (0, 0);
        for (doc, &relevant) in judged {
            let cb = clears(b_vals, &bm25_lookup, doc);
            let cc = clears(c_vals, &dense_lookup, doc);
            let cell = &mut hist[cb * w + cc];
            if relevant {
                cell.0 += 1;
                rel += 1;
            } else {
                cell.1 += 1;
                irr += 1;
            }
        }
        // 2-D inclusive prefix sum
        for a in 0..=nb {
            for b in 0..=nc {
                let mut v = hist[a * w + b];
                if a > 0 {
                    let up = hist[(a - 1) * w + b];
                    v = (v.0 + up.0, v.1 + up.1);
                }
                if b > 0 {
                    let left = hist[a * w + b - 1];
                    v = (v.0 + left.0, v.1 + left.1);
                }
                if a > 0 && b > 0 {
                    let diag = hist[(a - 1) * w + b - 1];
                    v = (v.0 - diag.0, v.1 - diag.1);
                }
                hist[a * w + b] = v;
            }
        }
        // missed at (j, k) = documents with cb ≤ j and cc ≤ k
        let mut missed = Vec::with_capacity(nb * nc);
        for j in 0..nb {
            for k in 0..nc {
                missed.push(hist[j * w + k]);
            }
        }
        Self {
            nc,
            relevant_total: rel,
            irrelevant_total: irr,
            missed,
        }
    }

    fn counts(&self, j: usize, k: usize) -> Counts {
        let (mr, mi) = self.missed[j * self.nc + k];
        Counts {
            tp: self.relevant_total - mr,
            fp: self.irrelevant_total - mi,
            fn_: mr,
        }
    }
}

fn grid_search_histogram(
    strategy: Strategy,
    grids: &Grids,
    table: &ScoreTable,
    judgments: &Judgments,
    opts: &EvalOptions,
) -> Result<GridSearchResult> {
    let (b_vals, c_vals) = strategy_axes(strategy, grids)?;
    let judged: Vec<(&str, &BTreeMap<String, bool>)> = judgments.topics().collect();
    let per_topic = opts.execution.map(&judged, |(topic, docs)| {
        MissCounts::build(table.get(topic), docs, &b_vals, &c_vals)
    });
    let nc = c_vals.len();
    let points = opts.execution.map_range(b_vals.len() * nc, |idx| {
        let (j, k) = (idx / nc, idx % nc);
        let counts: Vec<Counts> = per_topic.iter().map(|m| m.counts(j, k)).collect();
        GridPoint {
            bm25_threshold: b_vals[j],
            cosine_threshold: c_vals[k],
            score: combine(&counts, opts.averaging),
        }
    });
    Ok(pick_best(strategy, points))
}

/// Exhaustive search over the grid for `strategy` (the bm25 axis for
/// sparse-only, the cosine axis for dense-only, their product for union).
/// Ties go to the smallest threshold vector.
pub fn grid_search(
    strategy: Strategy,
    grids: &Grids,
    table: &ScoreTable,
    judgments: &Judgments,
    opts: &EvalOptions,
) -> Result<GridSearchResult> {
    match opts.top_k {
        None => grid_search_histogram(strategy, grids, table, judgments, opts),
        Some(_) => grid_search_direct(strategy, grids, table, judgments, opts),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicRow {
    pub topic_id: String,
    pub f1: f64,
    pub counts: Counts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyRow {
    pub strategy: Strategy,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bm25_threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cosine_threshold: Option<f64>,
    pub counts: Counts,
    pub per_topic: Vec<TopicRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub averaging: Averaging,
    pub rows: Vec<StrategyRow>,
    /// Union evaluated at each arm's solo optimum.
    pub union_at_solo_optima: F1Score,
}

impl EvalReport {
    pub fn row(&self, strategy: Strategy) -> Option<&StrategyRow> {
        self.rows.iter().find(|r| r.strategy == strategy)
    }

    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<14} {:>8} {:>10} {:>8}  threshold(s)", "strategy", "F1", "precision", "recall");
        for r in &self.rows {
            let thresholds = [r.bm25_threshold, r.cosine_threshold]
                .iter()
                .flatten()
                .map(|t| format!("{t}"))
                .collect::<Vec<_>>()
                .join(", ");
            let _ = writeln!(
                out,
                "{:<14} {:>8.4} {:>10.4} {:>8.4}  {}",
                r.strategy.as_str(),
                r.f1,
                r.precision,
                r.recall,
                thresholds
            );
        }
        let _ = writeln!(
            out,
            "union at solo optima: F1 {:.4}",
            self.union_at_solo_optima.f1
        );
        out
    }
}

fn per_topic_rows(
    table: &ScoreTable,
    judgments: &Judgments,
    strategy: Strategy,
    point: &GridPoint,
    top_k: Option<usize>,
) -> Vec<TopicRow> {
    let sets = retrieved_sets(table, strategy, point.bm25_threshold, point.cosine_threshold, top_k);
    judgments
        .topics()
        .map(|(topic, judged)| {
            let counts = topic_counts(sets.get(topic), judged);
            TopicRow {
                topic_id: topic.to_string(),
                f1: counts.f1(),
                counts,
            }
        })
        .collect()
}

/// Grid-searches sparse-only, dense-only and union, one report row each.
pub fn compare_on_table(
    table: &ScoreTable,
    judgments: &Judgments,
    grids: &Grids,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let mut rows = Vec::with_capacity(3);
    let mut optima = BTreeMap::new();
    for strategy in Strategy::ALL {
        let result = grid_search(strategy, grids, table, judgments, opts)?;
        let best = result.best;
        optima.insert(strategy, best);
        rows.push(StrategyRow {
            strategy,
            f1: best.score.f1,
            precision: best.score.precision,
            recall: best.score.recall,
            bm25_threshold: best.bm25_threshold,
            cosine_threshold: best.cosine_threshold,
            counts: best.score.counts,
            per_topic: per_topic_rows(table, judgments, strategy, &best, opts.top_k),
        });
    }
    let union_at_solo_optima = f1_for_strategy(
        &retrieved_sets(
            table,
            Strategy::Union,
            optima[&Strategy::SparseOnly].bm25_threshold,
            optima[&Strategy::DenseOnly].cosine_threshold,
            opts.top_k,
        ),
        judgments,
        opts.averaging,
    );
    Ok(EvalReport {
        averaging: opts.averaging,
        rows,
        union_at_solo_optima,
    })
}

/// Scores every topic against the corpus artifacts and compares the three
/// strategies.
#[allow(clippy::too_many_arguments)]
pub fn compare_strategies(
    topics: &[Topic],
    qrels: &[Qrel],
    index: &InvertedIndex,
    store: &DenseStore,
    provider: &dyn EmbeddingProvider,
    grids: &Grids,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let table = ScoreTable::compute(topics, index, store, provider, opts.execution)?;
    compare_on_table(&table, &binarize(qrels), grids, opts)
}
