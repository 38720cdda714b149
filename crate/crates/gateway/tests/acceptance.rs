//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use cordchat_core::answer::{
    answer_pipeline, AnswerConfig, ExtractedSpan, ResponseKind, SpanExtractor, DEFAULT_MARKERS,
};
use cordchat_core::corpus::{
    chunk_body, ingest, window_spans, Catalog, ChunkStore, CorpusConfig, Document, RawRecord,
};
use cordchat_core::dense::{DenseStore, EmbeddingProvider, EmbeddingVector, HashedEmbedder};
use cordchat_core::eval::{
    binarize, compare_strategies, grid_search, EvalOptions, GridAxis, Grids, Qrel, ScoreTable, Topic, TopicScores,
};
use cordchat_core::fusion::{fuse, FusedCandidate, FusionConfig, Strategy};
use cordchat_core::sparse::{Bm25Params, InvertedIndex};
use cordchat_core::text::tokenize;
use cordchat_core::{Execution, ProviderError, ScoredDoc};
use cordchat_gateway::config::AppConfig;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

type Outcome = Result<(), String>;
type Criterion = (&'static str, Duration, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures");

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("bm25 oracle equivalence", Duration::from_secs(10), bm25_oracle),
        ("chunking properties", Duration::from_secs(5), chunking),
        ("ingestion fixture", Duration::from_secs(60), ingestion),
        ("fusion properties", Duration::from_secs(60), fusion_properties),
        ("strategy comparison in miniature", Duration::from_secs(30), strategy_miniature),
        ("grid search argmax and tie rule", Duration::from_secs(60), grid_argmax),
        ("span rules and response kinds", Duration::from_secs(60), span_rules),
        ("end to end with built-in providers", Duration::from_secs(5), end_to_end),
        ("operating point defaults", Duration::from_secs(60), defaults),
        ("index persistence round trip", Duration::from_secs(60), persistence),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, budget, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|p| {
                let msg = p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panic".into());
                Err(format!("panicked: {msg}"))
            })
            .and_then(|()| {
                let took = started.elapsed();
                if took > *budget {
                    Err(format!("took {took:.2?}, budget {budget:.0?}"))
                } else {
                    Ok(())
                }
            });
        let took = started.elapsed();
        match outcome {
            Ok(()) => println!("PASS [{:>2}] {name} ({took:.2?})", i + 1),
            Err(reason) => {
                failed += 1;
                println!("FAIL [{:>2}] {name} ({took:.2?}): {reason}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

// ---------------------------------------------------------------- 1

fn bm25_formula(docs: &[Vec<String>], query: &[String], k1: f64, b: f64) -> Vec<f64> {
    let n = docs.len() as f64;
    let avgdl = docs.iter().map(Vec::len).sum::<usize>() as f64 / n;
    docs.iter()
        .map(|d| {
            let mut total = 0.0;
            for t in query {
                let df = docs.iter().filter(|x| x.contains(t)).count() as f64;
                if df == 0.0 {
                    continue;
                }
                let tf = d.iter().filter(|x| *x == t).count() as f64;
                let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                total += idf * (tf * (k1 + 1.0)) / (tf + k1 * (1.0 - b + b * d.len() as f64 / avgdl));
            }
            total
        })
        .collect()
}

fn bm25_oracle() -> Outcome {
    let mut rng = StdRng::seed_from_u64(1);
    for corpus in 0..200 {
        let vocab = rng.random_range(1..=20);
        let n_docs = rng.random_range(1..=10);
        let docs: Vec<Vec<String>> = (0..n_docs)
            .map(|_| {
                let len = rng.random_range(1..=25);
                (0..len).map(|_| format!("t{}", rng.random_range(0..vocab))).collect()
            })
            .collect();
        let index = InvertedIndex::from_token_lists(
            docs.iter().enumerate().map(|(i, d)| (format!("d{i}"), d.clone())),
            Bm25Params::default(),
        )
        .map_err(|e| e.to_string())?;
        for _ in 0..20 {
            let qlen = rng.random_range(1..=5);
            // vocab + 2 lets queries contain unseen terms
            let query: Vec<String> = (0..qlen).map(|_| format!("t{}", rng.random_range(0..vocab + 2))).collect();
            let expected = bm25_formula(&docs, &query, 1.5, 0.75);
            let got: HashMap<String, f64> = index.bm25_scores(&query).into_iter().map(|s| (s.doc_id, s.score)).collect();
            for (i, e) in expected.iter().enumerate() {
                let g = got.get(&format!("d{i}")).copied().unwrap_or(0.0);
                ensure!((g - e).abs() <= 1e-9, "corpus {corpus} doc {i} query {query:?}: index {g} formula {e}");
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- 2

fn chunking() -> Outcome {
    for len in 1..=5000usize {
        let spans = window_spans(len, 220, 50).map_err(|e| e.to_string())?;
        ensure!(!spans.is_empty(), "len {len}: no windows");
        ensure!(spans[0].0 == 0, "len {len}: first window starts at {}", spans[0].0);
        ensure!(spans.last().unwrap().1 == len, "len {len}: coverage stops at {}", spans.last().unwrap().1);
        for (i, &(s, e)) in spans.iter().enumerate() {
            ensure!(s < e && e - s <= 220, "len {len}: window {i} is [{s},{e})");
            let last = i + 1 == spans.len();
            ensure!(last || e < len, "len {len}: window {i} reaches the end but more follow");
            if !last {
                let (ns, _) = spans[i + 1];
                ensure!(e - ns == 50, "len {len}: overlap between {i} and {} is {}", i + 1, e as i64 - ns as i64);
            }
        }
    }
    ensure!(
        window_spans(500, 220, 50).unwrap() == vec![(0, 220), (170, 390), (340, 500)],
        "500-token fixture windows were {:?}",
        window_spans(500, 220, 50).unwrap()
    );
    // chunk text is the original body slice covering its tokens
    let body: Vec<String> = (0..500).map(|i| format!("tok{i}")).collect();
    let doc = Document::from_record(
        RawRecord {
            doc_id: "d".into(),
            source: "s".into(),
            title: "t".into(),
            abstract_text: "a b c".into(),
            body_paragraphs: vec![body.join(" ")],
        },
        &CorpusConfig::default(),
    )
    .map_err(|r| format!("{r:?}"))?;
    let chunks = chunk_body(&doc, 220, 50).map_err(|e| e.to_string())?;
    for c in &chunks {
        ensure!(tokenize(&c.text) == body[c.token_start..c.token_end], "chunk {} text does not match its tokens", c.chunk_id);
    }
    Ok(())
}

// ---------------------------------------------------------------- 3

fn record(id: &str, source: &str, abstract_text: &str, body: Vec<String>) -> RawRecord {
    RawRecord {
        doc_id: id.into(),
        source: source.into(),
        title: format!("title of {id}"),
        abstract_text: abstract_text.into(),
        body_paragraphs: body,
    }
}

fn ingestion() -> Outcome {
    let words = |n: usize| (0..n).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
    // six distinct documents over seven lines: "dup" appears from two sources
    let records = vec![
        record("keep1", "pmc", "covid incubation period", vec!["median five days".into()]),
        record("dup", "pmc", "short version", vec!["one paragraph".into()]),
        record("keep2", "pmc", "masks reduce spread", vec!["droplets".into()]),
        record("dup", "pdf", "longer full text version", vec!["one paragraph".into(), "and a second paragraph".into()]),
        record("longabs", "pmc", &words(301), vec!["body".into()]),
        record("longbody", "pmc", "fine abstract", (0..101).map(|i| format!("paragraph {i}")).collect()),
        record("keep3", "pmc", "vaccine trials", vec!["antibodies".into()]),
    ];
    let out = ingest(records, &CorpusConfig::default(), Execution::default()).map_err(|e| e.to_string())?;
    let r = out.report;
    ensure!(r.input == 7 && r.deduped == 6, "input/deduped = {}/{}", r.input, r.deduped);
    ensure!(r.dropped_abstract_len == 1, "abstract drops = {}", r.dropped_abstract_len);
    ensure!(r.dropped_body_len == 1, "body drops = {}", r.dropped_body_len);
    ensure!(r.dropped_no_abstract == 0 && r.dropped_no_body == 0, "unexpected presence drops: {r:?}");
    ensure!(r.kept == 4, "kept = {}", r.kept);
    let ids: Vec<&str> = out.documents.iter().map(|d| d.doc_id.as_str()).collect();
    ensure!(ids == ["keep1", "dup", "keep2", "keep3"], "kept ids {ids:?}");
    let dup = &out.documents[1];
    ensure!(dup.source == "pdf", "duplicate kept the {} version, not the longer pdf one", dup.source);

    // boundaries: exactly 300 abstract tokens and 100 paragraphs survive
    let edge = vec![
        record("a300", "pmc", &words(300), vec!["x".into()]),
        record("b100", "pmc", "ok", (0..100).map(|i| format!("p{i}")).collect()),
    ];
    let out = ingest(edge, &CorpusConfig::default(), Execution::default()).map_err(|e| e.to_string())?;
    ensure!(out.report.kept == 2, "boundary records dropped: {:?}", out.report);
    Ok(())
}

// ---------------------------------------------------------------- 4

fn random_arm(rng: &mut StdRng, n_docs: usize, max: f64) -> Vec<ScoredDoc> {
    let mut v = Vec::new();
    for d in 0..n_docs {
        if rng.random_bool(0.8) {
            v.push(ScoredDoc::new(format!("d{d:03}"), rng.random_range(0.0..max)));
        }
    }
    v.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.doc_id.cmp(&b.doc_id)));
    v
}

fn ids(c: &[FusedCandidate]) -> BTreeSet<String> {
    c.iter().map(|c| c.doc_id.clone()).collect()
}

fn same_ranking(a: &[FusedCandidate], b: &[FusedCandidate]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| {
            (x.aggregated - y.aggregated).abs() < 1e-9
                && (x.doc_id == y.doc_id || b.iter().any(|z| z.doc_id == x.doc_id && (z.aggregated - x.aggregated).abs() < 1e-9))
        })
}

fn scale(list: &[ScoredDoc], c: f64) -> Vec<ScoredDoc> {
    list.iter().map(|s| ScoredDoc::new(s.doc_id.clone(), s.score * c)).collect()
}

fn fusion_properties() -> Outcome {
    let mut rng = StdRng::seed_from_u64(4);
    for table in 0..100 {
        let n_docs = rng.random_range(5..80);
        let bm25 = random_arm(&mut rng, n_docs, 8.0);
        let dense = random_arm(&mut rng, n_docs, 1.0);
        let cfg = |strategy, tb, tc, top_k| FusionConfig {
            bm25_threshold: tb,
            cosine_threshold: tc,
            top_k,
            strategy,
            ..FusionConfig::default()
        };
        let (tb, tc) = (rng.random_range(0.0..6.0), rng.random_range(0.0..0.95));
        let all = usize::MAX;
        let union = fuse(&bm25, &dense, &cfg(Strategy::Union, tb, tc, all));
        let sparse = fuse(&bm25, &dense, &cfg(Strategy::SparseOnly, tb, tc, all));
        let dense_only = fuse(&bm25, &dense, &cfg(Strategy::DenseOnly, tb, tc, all));
        ensure!(ids(&union).is_superset(&ids(&sparse)), "table {table}: union misses sparse survivors");
        ensure!(ids(&union).is_superset(&ids(&dense_only)), "table {table}: union misses dense survivors");
        let survivors: BTreeSet<String> = bm25
            .iter()
            .filter(|s| s.score >= tb)
            .chain(dense.iter().filter(|s| s.score >= tc))
            .map(|s| s.doc_id.clone())
            .collect();
        ensure!(ids(&union) == survivors, "table {table}: union pool differs from survivor union");

        for c in union.iter().chain(&sparse).chain(&dense_only) {
            ensure!(
                (0.0..=1.0).contains(&c.bm25_norm) && (0.0..=1.0).contains(&c.cosine_norm),
                "table {table}: normalized score out of range for {}",
                c.doc_id
            );
        }

        let (sb, sc) = (rng.random_range(0.1..50.0), rng.random_range(0.1..50.0));
        let scaled = fuse(&scale(&bm25, sb), &scale(&dense, sc), &cfg(Strategy::Union, tb * sb, tc * sc, all));
        ensure!(same_ranking(&union, &scaled), "table {table}: ranking changed under scaling by {sb}, {sc}");

        let top = fuse(&bm25, &dense, &cfg(Strategy::Union, tb, tc, 20));
        ensure!(top.len() == union.len().min(20), "table {table}: top-20 returned {}", top.len());
        ensure!(top[..] == union[..top.len()], "table {table}: top-20 is not the head of the full ranking");
    }
    Ok(())
}

// ---------------------------------------------------------------- 5

/// Synonyms share an axis; every other token lands on one residual axis.
struct ConceptEmbedder;

const CONCEPTS: [&[&str]; 2] = [&["coronavirus", "ncov", "sarscov"], &["vaccine", "immunization", "inoculation"]];

impl EmbeddingProvider for ConceptEmbedder {
    fn dimension(&self) -> usize {
        3
    }

    fn provider_id(&self) -> String {
        "concept-test".into()
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        let mut v = vec![0.0; 3];
        for tok in tokenize(text) {
            let axis = CONCEPTS.iter().position(|c| c.contains(&tok.as_str())).unwrap_or(2);
            v[axis] += 1.0;
        }
        Ok(EmbeddingVector::new(v))
    }
}

fn miniature_corpus() -> (Vec<Document>, Vec<Qrel>) {
    let mut docs = Vec::new();
    let mut qrels = Vec::new();
    let mut add = |id: String, abstract_text: String, grade: Option<u8>| {
        docs.push(
            Document::from_record(record(&id, "mini", &abstract_text, vec!["body".into()]), &CorpusConfig::default())
                .unwrap(),
        );
        if let Some(g) = grade {
            qrels.push(Qrel {
                topic_id: "1".into(),
                doc_id: id,
                grade: g,
            });
        }
    };
    let filler = |tag: &str, n: usize| (0..n).map(|i| format!("{tag}x{i}")).collect::<Vec<_>>().join(" ");
    // lexical matches: literal query terms, long and diluted
    for i in 0..5 {
        add(format!("lex{i}"), format!("coronavirus vaccine {} coronavirus vaccine", filler(&format!("l{i}"), 8)), Some(2));
    }
    // semantic matches: synonyms only
    let synonyms = ["ncov immunization", "sarscov inoculation", "ncov inoculation", "sarscov immunization", "ncov vaccine immunization sarscov"];
    for (i, s) in synonyms.iter().enumerate() {
        let text = if i == 4 { "ncov immunization".to_string() } else { s.to_string() };
        add(format!("sem{i}"), text, Some(1));
    }
    // non-relevant, one query term each
    for i in 0..8 {
        add(format!("nco{i}"), format!("coronavirus n{i}x"), Some(0));
    }
    for i in 0..7 {
        add(format!("nva{i}"), format!("vaccine v{i}x"), Some(0));
    }
    // unrelated
    for i in 0..5 {
        add(format!("unr{i}"), format!("u{i}a u{i}b"), Some(0));
    }
    (docs, qrels)
}

/// Direct threshold sweep over raw scores, independent of the library's
/// fusion and evaluation code.
fn brute_force_best(
    bm25: &HashMap<String, f64>,
    cos: &HashMap<String, f64>,
    judged: &BTreeMap<String, bool>,
    strategy: Strategy,
    grids: &Grids,
) -> (f64, Option<f64>, Option<f64>) {
    let axis = |a: &GridAxis| -> Vec<f64> {
        let n = ((a.max - a.min) / a.step + 1e-9).floor() as usize + 1;
        (0..n).map(|i| ((a.min + i as f64 * a.step) * 1e9).round() / 1e9).collect()
    };
    let bs: Vec<Option<f64>> = if strategy.uses_sparse() { axis(&grids.bm25).into_iter().map(Some).collect() } else { vec![None] };
    let cs: Vec<Option<f64>> = if strategy.uses_dense() { axis(&grids.cosine).into_iter().map(Some).collect() } else { vec![None] };
    let mut best = (-1.0, None, None);
    for &b in &bs {
        for &c in &cs {
            let (mut tp, mut fp, mut fn_) = (0u32, 0u32, 0u32);
            for (doc, &rel) in judged {
                let hit_b = b.is_some_and(|t| bm25.get(doc).is_some_and(|&s| s >= t));
                let hit_c = c.is_some_and(|t| cos.get(doc).is_some_and(|&s| s >= t));
                match (hit_b || hit_c, rel) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    _ => {}
                }
            }
            let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
            let r = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
            let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
            if f1 > best.0 + 1e-12 {
                best = (f1, b, c);
            }
        }
    }
    best
}

fn strategy_miniature() -> Outcome {
    let (docs, qrels) = miniature_corpus();
    ensure!(docs.len() == 30, "fixture has {} documents", docs.len());
    let index = InvertedIndex::build(&docs, Bm25Params::default()).map_err(|e| e.to_string())?;
    let store = DenseStore::build(&docs, &ConceptEmbedder, Execution::default()).map_err(|e| e.to_string())?;
    let topics = vec![Topic {
        topic_id: "1".into(),
        query: "coronavirus vaccine".into(),
    }];
    let grids = Grids::default();
    let report = compare_strategies(&topics, &qrels, &index, &store, &ConceptEmbedder, &grids, &EvalOptions::default())
        .map_err(|e| e.to_string())?;
    let f1 = |s| report.row(s).unwrap().f1;
    let (sparse, dense, union) = (f1(Strategy::SparseOnly), f1(Strategy::DenseOnly), f1(Strategy::Union));
    ensure!(union > sparse && union > dense, "union {union} not above sparse {sparse} and dense {dense}");

    // oracle from raw scores
    let query = tokenize("coronavirus vaccine");
    let bm25: HashMap<String, f64> = bm25_formula(&docs.iter().map(|d| d.abstract_tokens.clone()).collect::<Vec<_>>(), &query, 1.5, 0.75)
        .into_iter()
        .zip(&docs)
        .filter(|(_, d)| d.abstract_tokens.iter().any(|t| query.contains(t)))
        .map(|(s, d)| (d.doc_id.clone(), s))
        .collect();
    let q = ConceptEmbedder.embed("coronavirus vaccine").unwrap();
    let cos: HashMap<String, f64> = docs
        .iter()
        .map(|d| {
            let v = ConceptEmbedder.embed(&d.abstract_text).unwrap();
            let (qv, dv) = (q.values(), v.values());
            let dot: f64 = qv.iter().zip(dv).map(|(a, b)| a * b).sum();
            let n = q.norm() * v.norm();
            (d.doc_id.clone(), if n == 0.0 { 0.0 } else { dot / n })
        })
        .collect();
    let judged = binarize(&qrels).topic("1").unwrap().clone();
    for (s, got) in [(Strategy::SparseOnly, sparse), (Strategy::DenseOnly, dense), (Strategy::Union, union)] {
        let (want, _, _) = brute_force_best(&bm25, &cos, &judged, s, &grids);
        ensure!((got - want).abs() < 1e-9, "{s}: report F1 {got}, oracle {want}");
    }
    ensure!((sparse - 2.0 / 3.0).abs() < 1e-9, "sparse F1 {sparse}, expected 2/3");
    ensure!((dense - 2.0 / 3.0).abs() < 1e-9, "dense F1 {dense}, expected 2/3");
    ensure!((union - 1.0).abs() < 1e-9, "union F1 {union}, expected 1");
    Ok(())
}

// ---------------------------------------------------------------- 6

fn grid_argmax() -> Outcome {
    let mut rng = StdRng::seed_from_u64(6);
    let grids = Grids {
        bm25: GridAxis::new(0.0, 6.0, 0.25),
        cosine: GridAxis::new(0.0, 1.0, 0.05),
    };
    for fixture in 0..40 {
        let mut table = ScoreTable::default();
        let mut qrels = Vec::new();
        for t in 0..rng.random_range(1..4) {
            let n = rng.random_range(3..25);
            let topic_id = format!("t{t}");
            table.topics.push(TopicScores {
                topic_id: topic_id.clone(),
                bm25: random_arm(&mut rng, n, 6.0),
                dense: random_arm(&mut rng, n, 1.0),
            });
            for d in 0..n {
                if rng.random_bool(0.7) {
                    qrels.push(Qrel {
                        topic_id: topic_id.clone(),
                        doc_id: format!("d{d:03}"),
                        grade: rng.random_range(0..3),
                    });
                }
            }
        }
        let judgments = binarize(&qrels);
        for strategy in Strategy::ALL {
            for top_k in [None, Some(5)] {
                let opts = EvalOptions {
                    top_k,
                    ..EvalOptions::default()
                };
                let res = grid_search(strategy, &grids, &table, &judgments, &opts).map_err(|e| e.to_string())?;
                // exhaustive re-evaluation of every point, pooled over topics
                let mut best: Option<(f64, Option<f64>, Option<f64>)> = None;
                for p in &res.table {
                    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
                    for ts in &table.topics {
                        let Some(judged) = judgments.topic(&ts.topic_id) else { continue };
                        let mut pool: Vec<(String, f64, f64)> = Vec::new();
                        let mut seen = BTreeSet::new();
                        for s in ts.bm25.iter().filter(|s| p.bm25_threshold.is_some_and(|t| s.score >= t)) {
                            seen.insert(s.doc_id.clone());
                        }
                        for s in ts.dense.iter().filter(|s| p.cosine_threshold.is_some_and(|t| s.score >= t)) {
                            seen.insert(s.doc_id.clone());
                        }
                        for d in &seen {
                            let b = ts.bm25.iter().find(|s| &s.doc_id == d).map_or(0.0, |s| s.score);
                            let c = ts.dense.iter().find(|s| &s.doc_id == d).map_or(0.0, |s| s.score);
                            pool.push((d.clone(), b, c));
                        }
                        let retrieved: BTreeSet<String> = match top_k {
                            None => seen,
                            Some(k) => {
                                let norm = |vals: Vec<f64>| -> Vec<f64> {
                                    let (lo, hi) = vals.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
                                    vals.iter().map(|v| if hi > lo { (v - lo) / (hi - lo) } else { 1.0 }).collect()
                                };
                                let nb = norm(pool.iter().map(|x| x.1).collect());
                                let nc = norm(pool.iter().map(|x| x.2).collect());
                                let mut agg: Vec<(f64, String)> = pool
                                    .iter()
                                    .enumerate()
                                    .map(|(i, x)| {
                                        let a = if strategy.uses_sparse() { nb[i] } else { 0.0 }
                                            + if strategy.uses_dense() { nc[i] } else { 0.0 };
                                        (a, x.0.clone())
                                    })
                                    .collect();
                                agg.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
                                agg.into_iter().take(k).map(|x| x.1).collect()
                            }
                        };
                        for (doc, &rel) in judged {
                            match (retrieved.contains(doc), rel) {
                                (true, true) => tp += 1,
                                (true, false) => fp += 1,
                                (false, true) => fn_ += 1,
                                _ => {}
                            }
                        }
                    }
                    let f1 = if 2 * tp + fp + fn_ == 0 { 0.0 } else { 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64 };
                    ensure!(
                        (f1 - p.score.f1).abs() < 1e-12,
                        "fixture {fixture} {strategy} cut {top_k:?} at {:?}/{:?}: table {} vs recount {f1}",
                        p.bm25_threshold,
                        p.cosine_threshold,
                        p.score.f1
                    );
                    if best.is_none_or(|b| f1 > b.0) {
                        best = Some((f1, p.bm25_threshold, p.cosine_threshold));
                    }
                }
                let (f1, b, c) = best.unwrap();
                ensure!(
                    res.best.score.f1 == f1 && res.best.bm25_threshold == b && res.best.cosine_threshold == c,
                    "fixture {fixture} {strategy}: argmax {:?} vs exhaustive ({f1}, {b:?}, {c:?})",
                    res.best
                );
                // table order is lexicographic, so the first maximum is the smallest vector
                let expected_points = match strategy {
                    Strategy::SparseOnly => 25,
                    Strategy::DenseOnly => 21,
                    Strategy::Union => 25 * 21,
                };
                ensure!(res.table.len() == expected_points, "{strategy}: {} grid points", res.table.len());
                ensure!(
                    res.table.windows(2).all(|w| {
                        (w[0].bm25_threshold, w[0].cosine_threshold) < (w[1].bm25_threshold, w[1].cosine_threshold)
                    }),
                    "{strategy}: table not in lexicographic order"
                );
            }
        }
    }

    // tie rule: every point ties, and a plateau in the middle of the grid
    let table = ScoreTable {
        topics: vec![TopicScores {
            topic_id: "t".into(),
            bm25: vec![ScoredDoc::new("r", 5.0), ScoredDoc::new("n", 1.0)],
            dense: vec![ScoredDoc::new("r", 0.9), ScoredDoc::new("n", 0.3)],
        }],
    };
    let j = binarize(&[
        Qrel { topic_id: "t".into(), doc_id: "r".into(), grade: 1 },
        Qrel { topic_id: "t".into(), doc_id: "n".into(), grade: 0 },
    ]);
    let g = Grids {
        bm25: GridAxis::new(0.0, 6.0, 0.5),
        cosine: GridAxis::new(0.0, 1.0, 0.1),
    };
    let res = grid_search(Strategy::Union, &g, &table, &j, &EvalOptions::default()).map_err(|e| e.to_string())?;
    // F1 = 1 needs n excluded on both arms and r kept on one: the smallest
    // such vector is bm25 1.5 (just above n), cosine 0.4 (just above n)
    ensure!(res.best.score.f1 == 1.0, "tie fixture best F1 {}", res.best.score.f1);
    ensure!(
        res.best.bm25_threshold == Some(1.5) && res.best.cosine_threshold == Some(0.4),
        "tie fixture chose {:?}/{:?}",
        res.best.bm25_threshold,
        res.best.cosine_threshold
    );
    let flat = Grids {
        bm25: GridAxis::new(2.0, 4.0, 1.0),
        cosine: GridAxis::point(0.5),
    };
    let res = grid_search(Strategy::SparseOnly, &flat, &table, &j, &EvalOptions::default()).map_err(|e| e.to_string())?;
    ensure!(res.table.iter().all(|p| p.score.f1 == 1.0), "flat fixture is not flat");
    ensure!(res.best.bm25_threshold == Some(2.0), "flat fixture chose {:?}", res.best.bm25_threshold);
    Ok(())
}

// ---------------------------------------------------------------- 7

/// Emits arbitrary spans: lengths up to 30 tokens, some with markers, some
/// empty, log-likelihoods anywhere. Deterministic per passage.
struct RandomExtractor {
    seed: u64,
    valid: bool,
}

impl SpanExtractor for RandomExtractor {
    fn extract(&self, _question: &str, passage: &str) -> Result<Vec<ExtractedSpan>, ProviderError> {
        let h = passage.bytes().fold(self.seed, |h, b| h.wrapping_mul(31).wrapping_add(b as u64));
        let mut rng = StdRng::seed_from_u64(h);
        let words: Vec<&str> = passage.split_whitespace().collect();
        let n = rng.random_range(0..6);
        Ok((0..n)
            .map(|_| {
                let len = if self.valid { rng.random_range(1..=30) } else { rng.random_range(16..=30) };
                let start = rng.random_range(0..words.len().max(1));
                let mut toks: Vec<String> = words.iter().cycle().skip(start).take(len).map(|s| s.to_string()).collect();
                if rng.random_bool(0.3) || !self.valid {
                    let m = DEFAULT_MARKERS[rng.random_range(0..DEFAULT_MARKERS.len())];
                    let at = rng.random_range(0..=toks.len());
                    toks.insert(at, m.to_string());
                }
                ExtractedSpan {
                    text: toks.join(" "),
                    start_loglik: rng.random_range(-20.0..5.0),
                    end_loglik: rng.random_range(-20.0..5.0),
                }
            })
            .collect())
    }
}

fn span_catalog(n: usize) -> Catalog {
    let docs: Vec<Document> = (0..n)
        .map(|i| {
            let body = (0..3)
                .map(|p| (0..60).map(|w| format!("d{i}p{p}w{w}")).collect::<Vec<_>>().join(" "))
                .collect();
            Document::from_record(record(&format!("doc{i:02}"), "s", "abstract words", body), &CorpusConfig::default()).unwrap()
        })
        .collect();
    let chunks = ChunkStore::build(&docs, 220, 50, Execution::Sequential).unwrap();
    Catalog::new(docs, chunks).unwrap()
}

fn marker_free(text: &str) -> bool {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric() && c != '[' && c != ']'))
        .all(|w| !DEFAULT_MARKERS.contains(&w))
        && !["[CLS]", "[SEP]", "[PAD]"].iter().any(|m| text.contains(m))
}

fn span_rules() -> Outcome {
    let catalog = span_catalog(30);
    let cfg = AnswerConfig::default();
    let mut rng = StdRng::seed_from_u64(7);
    let mut seen = BTreeSet::new();
    for round in 0..300 {
        let n = rng.random_range(0..30);
        let mut retrieved: Vec<FusedCandidate> = (0..n)
            .map(|i| FusedCandidate {
                doc_id: format!("doc{:02}", (i * 7 + round) % 30),
                bm25_raw: 0.0,
                cosine_raw: 0.0,
                bm25_norm: 0.0,
                cosine_norm: 0.0,
                aggregated: rng.random_range(0.0..2.0),
                passed_bm25: true,
                passed_cosine: false,
            })
            .collect();
        retrieved.sort_by(|a, b| b.aggregated.total_cmp(&a.aggregated));
        retrieved.dedup_by(|a, b| a.doc_id == b.doc_id);
        let extractor = RandomExtractor {
            seed: round as u64,
            valid: round % 5 != 0,
        };
        let resp = answer_pipeline("question", &retrieved, &catalog, &extractor, &cfg, Execution::default())
            .map_err(|e| e.to_string())?;
        let trace = resp.diagnostics.answer.clone().unwrap_or_default();
        let expected = if retrieved.is_empty() {
            ResponseKind::Clarification
        } else if trace.accepted == 0 {
            ResponseKind::DocumentList
        } else {
            ResponseKind::Answers
        };
        ensure!(resp.kind == expected, "round {round}: kind {:?}, expected {expected:?}", resp.kind);
        seen.insert(format!("{:?}", resp.kind));
        ensure!(resp.items.len() <= 5, "round {round}: {} items", resp.items.len());
        if resp.kind == ResponseKind::Answers {
            let docs: BTreeSet<_> = resp.items.iter().map(|i| i.doc_id.clone()).collect();
            ensure!(docs.len() == resp.items.len(), "round {round}: two answers from one document");
            for item in &resp.items {
                ensure!(tokenize(&item.text).len() <= 15, "round {round}: answer {:?} over 15 tokens", item.text);
                ensure!(marker_free(&item.text), "round {round}: answer {:?} carries a marker", item.text);
                ensure!(item.paper_title.is_some(), "round {round}: answer without a title");
            }
            let scores: Vec<f64> = resp.items.iter().map(|i| i.score.unwrap()).collect();
            ensure!(scores.windows(2).all(|w| w[0] >= w[1]), "round {round}: answers not ranked");
        }
        if resp.kind == ResponseKind::DocumentList {
            let top: Vec<String> = retrieved.iter().take(5).map(|c| catalog.title(&c.doc_id).unwrap().to_string()).collect();
            let got: Vec<String> = resp.items.iter().map(|i| i.text.clone()).collect();
            ensure!(got == top, "round {round}: document list is not the top titles");
        }
    }
    ensure!(seen.len() == 3, "response kinds reached: {seen:?}");
    Ok(())
}

// ---------------------------------------------------------------- 8

fn cordchat(args: &[&str], stdin: Option<&str>) -> Result<String, String> {
    use std::io::Write;
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cordchat"));
    cmd.args(args)
        .env_remove("CORDCHAT_CONFIG")
        .stdin(std::process::Stdio::piped())
        .stdout(std::process::Stdio::piped())
        .stderr(std::process::Stdio::piped());
    let mut child = cmd.spawn().map_err(|e| e.to_string())?;
    {
        let mut input = child.stdin.take().unwrap();
        if let Some(s) = stdin {
            input.write_all(s.as_bytes()).map_err(|e| e.to_string())?;
        }
    }
    let out = child.wait_with_output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("cordchat {args:?} failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn build_artifacts(dir: &Path) -> Result<(), String> {
    let d = dir.to_str().unwrap();
    let corpus = format!("{FIXTURES}/corpus20.jsonl");
    cordchat(&["--artifacts", d, "ingest", &corpus], None)?;
    cordchat(&["--artifacts", d, "index"], None)?;
    cordchat(&["--artifacts", d, "embed"], None)?;
    Ok(())
}

fn end_to_end() -> Outcome {
    let question = "What is the incubation period of covid-19?";
    let mut answers = Vec::new();
    let mut artifacts = Vec::new();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    for run in 0..2 {
        let dir = tmp.path().join(format!("run{run}"));
        build_artifacts(&dir)?;
        let out = cordchat(&["--artifacts", dir.to_str().unwrap(), "ask", question, "--json"], None)?;
        answers.push(out);
        let files: Vec<Vec<u8>> = ["documents.jsonl", "chunks.jsonl", "sparse.idx", "vectors.bin"]
            .iter()
            .map(|f| std::fs::read(dir.join(f)).unwrap())
            .collect();
        artifacts.push(files);
    }
    ensure!(answers[0] == answers[1], "answers differ between runs");
    ensure!(artifacts[0] == artifacts[1], "artifacts differ between runs");
    let v: serde_json::Value = serde_json::from_str(&answers[0]).map_err(|e| e.to_string())?;
    ensure!(v["kind"] == "answers", "ask returned {}", v["kind"]);
    ensure!(v["items"][0]["doc_id"] == "c01", "top answer from {}", v["items"][0]["doc_id"]);

    let dir = tmp.path().join("run0");
    let chat = cordchat(
        &["--artifacts", dir.to_str().unwrap(), "--debug", "chat", "--json"],
        Some(&format!("hello\n{question}\n")),
    )?;
    let replies: Vec<serde_json::Value> = chat.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    ensure!(replies.len() == 2, "chat produced {} replies", replies.len());
    ensure!(replies[0]["kind"] == "smalltalk", "hello routed to {}", replies[0]["kind"]);
    ensure!(replies[0]["diagnostics"]["retrieval"].is_null(), "hello went through retrieval");
    ensure!(replies[1]["diagnostics"]["nlu"]["is_covid"] == true, "covid question not detected");
    ensure!(!replies[1]["diagnostics"]["retrieval"].is_null(), "covid question skipped retrieval");
    ensure!(
        ["answers", "document_list"].contains(&replies[1]["kind"].as_str().unwrap_or("")),
        "covid question answered with {}",
        replies[1]["kind"]
    );
    Ok(())
}

// ---------------------------------------------------------------- 9

fn defaults() -> Outcome {
    let c = AppConfig::default();
    let checks: [(&str, f64, f64); 8] = [
        ("bm25 threshold", c.fusion.bm25_threshold, 2.77),
        ("cosine threshold", c.fusion.cosine_threshold, 0.89),
        ("top k", c.fusion.top_k as f64, 20.0),
        ("answer cap", c.answer.max_answers as f64, 5.0),
        ("window", c.corpus.window as f64, 220.0),
        ("overlap", c.corpus.overlap as f64, 50.0),
        ("abstract filter", c.corpus.max_abstract_tokens as f64, 300.0),
        ("body filter", c.corpus.max_body_paragraphs as f64, 100.0),
    ];
    for (name, got, want) in checks {
        ensure!(got == want, "{name} is {got}, expected {want}");
    }
    ensure!(FusionConfig::default() == c.fusion, "library and app fusion defaults differ");
    ensure!(CorpusConfig::default() == c.corpus, "library and app corpus defaults differ");
    ensure!(c.answer.max_span_tokens == 15, "span cap {}", c.answer.max_span_tokens);
    ensure!(Bm25Params::default().k1 == 1.5 && Bm25Params::default().b == 0.75, "bm25 parameters");
    Ok(())
}

// ---------------------------------------------------------------- 10

fn persistence() -> Outcome {
    let parsed = cordchat_gateway::app::read_corpus(Path::new(&format!("{FIXTURES}/corpus20.jsonl"))).map_err(|e| e.to_string())?;
    let docs = ingest(parsed.records, &CorpusConfig::default(), Execution::default()).map_err(|e| e.to_string())?.documents;
    let a = InvertedIndex::build(&docs, Bm25Params::default()).map_err(|e| e.to_string())?;
    let b = InvertedIndex::build(&docs, Bm25Params::default()).map_err(|e| e.to_string())?;
    ensure!(a.to_bytes() == b.to_bytes(), "rebuild is not byte-identical");

    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    cordchat_core::engine::write_index(tmp.path(), &a).map_err(|e| e.to_string())?;
    let loaded = cordchat_core::engine::load_index(tmp.path()).map_err(|e| e.to_string())?;
    ensure!(loaded.to_bytes() == a.to_bytes(), "reloaded index serializes differently");

    let store = DenseStore::build(&docs, &HashedEmbedder::default(), Execution::default()).map_err(|e| e.to_string())?;
    store.save(tmp.path()).map_err(|e| e.to_string())?;
    let store2 = DenseStore::load(tmp.path()).map_err(|e| e.to_string())?;

    let queries = ["covid vaccine", "incubation period", "masks", "camels mers", "nothing matches zzz", "sars-cov-2 spike ACE2"];
    for q in queries {
        let toks = tokenize(q);
        ensure!(loaded.bm25_scores(&toks) == a.bm25_scores(&toks), "bm25 scores differ after load for {q:?}");
        let v = HashedEmbedder::default().embed(q).unwrap();
        ensure!(
            store2.dense_scores(&v).unwrap() == store.dense_scores(&v).unwrap(),
            "dense scores differ after load for {q:?}"
        );
    }

    // the CLI writes the same bytes
    let dir = tmp.path().join("cli");
    build_artifacts(&dir)?;
    ensure!(std::fs::read(dir.join("sparse.idx")).unwrap() == a.to_bytes(), "CLI index differs from library build");
    Ok(())
}
