//! Command-line interface.

use std::io::{BufRead, Write};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};
use cordchat_core::answer::{ResponseKind, SystemResponse};
use cordchat_core::corpus::ingest;
use cordchat_core::dense::DenseStore;
use cordchat_core::dialogue::{Session, SessionStore};
use cordchat_core::engine::{load_documents, write_index, write_ingested, Engine, INDEX_FILE};
use cordchat_core::eval::{
    binarize, compare_strategies, grid_search, parse_qrels, parse_topics, Averaging, EvalOptions, GridAxis,
    Grids, Qrel, ScoreTable, Topic,
};
use cordchat_core::fusion::{Retrieval, Strategy};
use cordchat_core::sparse::{Bm25Params, InvertedIndex};

use crate::app;
use crate::config::AppConfig;
use crate::error::GatewayError;
use crate::server::{router, AppState};

#[derive(Debug, Parser)]
#[command(name = "cordchat", version, about = "Conversational search and extractive QA over a literature corpus")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, env = "CORDCHAT_CONFIG")]
    pub config: Option<PathBuf>,

    /// Artifact directory.
    #[arg(long, global = true)]
    pub artifacts: Option<PathBuf>,

    #[arg(long, global = true)]
    pub bm25_threshold: Option<f64>,

    #[arg(long, global = true)]
    pub cosine_threshold: Option<f64>,

    /// Fusion cut-off.
    #[arg(long, global = true)]
    pub top_k: Option<usize>,

    /// sparse_only, dense_only or union.
    #[arg(long, global = true)]
    pub strategy: Option<Strategy>,

    /// Weight of the span log-likelihood in answer ranking.
    #[arg(long, global = true)]
    pub alpha: Option<f64>,

    /// Print per-stage diagnostics.
    #[arg(long, global = true)]
    pub debug: bool,

    /// Run on one thread.
    #[arg(long, global = true)]
    pub sequential: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Deduplicate, filter and chunk a JSON-lines corpus.
    Ingest {
        /// Corpus file; defaults to `paths.corpus`.
        corpus: Option<PathBuf>,
        /// Output directory; defaults to the artifact directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the BM25 index over ingested abstracts.
    Index,
    /// Embed ingested abstracts into the dense store.
    Embed,
    /// Rank documents for a query.
    Search {
        query: String,
        #[arg(short)]
        k: Option<usize>,
        #[arg(long)]
        json: bool,
    },
    /// Answer one question.
    Ask {
        question: String,
        #[arg(long)]
        json: bool,
    },
    /// Interactive conversation on stdin/stdout.
    Chat {
        #[arg(long)]
        json: bool,
    },
    /// Tune thresholds for all three strategies against judgments.
    Eval {
        #[command(flatten)]
        data: EvalData,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        json: bool,
    },
    /// Tune thresholds for one strategy.
    GridSearch {
        /// Strategy to tune.
        target: Strategy,
        #[command(flatten)]
        data: EvalData,
        #[command(flatten)]
        grid: GridArgs,
        /// Write every evaluated grid point as JSON here.
        #[arg(long)]
        table_out: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Start the HTTP API.
    Serve {
        #[arg(long)]
        bind: Option<String>,
    },
}

#[derive(Debug, Args)]
pub struct EvalData {
    /// JSON-lines topics `{topic_id, query}`; defaults to `paths.topics`.
    #[arg(long)]
    pub topics: Option<PathBuf>,
    /// `topic iteration doc grade` judgments; defaults to `paths.qrels`.
    #[arg(long)]
    pub qrels: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long)]
    pub bm25_min: Option<f64>,
    #[arg(long)]
    pub bm25_max: Option<f64>,
    #[arg(long)]
    pub bm25_step: Option<f64>,
    #[arg(long)]
    pub cosine_min: Option<f64>,
    #[arg(long)]
    pub cosine_max: Option<f64>,
    #[arg(long)]
    pub cosine_step: Option<f64>,
    /// Average per topic instead of pooling judged pairs.
    #[arg(long = "macro")]
    pub macro_avg: bool,
    /// Apply the fusion top-k cut while evaluating.
    #[arg(long)]
    pub cut: Option<usize>,
}

impl GridArgs {
    fn apply(&self, grids: &mut Grids) {
        let set = |axis: &mut GridAxis, min: Option<f64>, max: Option<f64>, step: Option<f64>| {
            axis.min = min.unwrap_or(axis.min);
            axis.max = max.unwrap_or(axis.max);
            axis.step = step.unwrap_or(axis.step);
        };
        set(&mut grids.bm25, self.bm25_min, self.bm25_max, self.bm25_step);
        set(&mut grids.cosine, self.cosine_min, self.cosine_max, self.cosine_step);
    }
}

impl Cli {
    /// Configuration from file and environment with this invocation's flags
    /// on top.
    pub fn config(&self) -> Result<AppConfig, GatewayError> {
        let mut cfg = AppConfig::resolve(self.config.as_deref())?;
        if let Some(dir) = &self.artifacts {
            cfg.paths.artifacts = dir.clone();
        }
        if let Some(t) = self.bm25_threshold {
            cfg.fusion.bm25_threshold = t;
        }
        if let Some(t) = self.cosine_threshold {
            cfg.fusion.cosine_threshold = t;
        }
        if let Some(k) = self.top_k {
            cfg.fusion.top_k = k;
        }
        if let Some(s) = self.strategy {
            cfg.fusion.strategy = s;
        }
        if let Some(a) = self.alpha {
            cfg.answer.alpha = a;
        }
        if self.debug {
            cfg.server.debug = true;
        }
        if self.sequential {
            cfg.sequential = true;
        }
        match &self.command {
            Command::Serve { bind: Some(b) } => cfg.server.bind = b.clone(),
            Command::Eval { grid, .. } | Command::GridSearch { grid, .. } => {
                grid.apply(&mut cfg.eval.grids);
                if grid.macro_avg {
                    cfg.eval.averaging = Averaging::Macro;
                }
                if grid.cut.is_some() {
                    cfg.eval.top_k = grid.cut;
                }
            }
            _ => {}
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Streams for one invocation.
pub struct Io<'a> {
    pub input: &'a mut dyn BufRead,
    pub out: &'a mut dyn Write,
    pub err: &'a mut dyn Write,
}

pub fn run(cli: &Cli, io: Io<'_>) -> Result<(), GatewayError> {
    let cfg = cli.config()?;
    match &cli.command {
        Command::Ingest { corpus, out } => {
            let corpus = corpus
                .clone()
                .or_else(|| cfg.paths.corpus.clone())
                .ok_or_else(|| GatewayError::Config("no corpus file given".into()))?;
            let out_dir = out.clone().unwrap_or_else(|| cfg.paths.artifacts.clone());
            cmd_ingest(&cfg, &corpus, &out_dir, io)
        }
        Command::Index => cmd_index(&cfg, io),
        Command::Embed => cmd_embed(&cfg, io),
        Command::Search { query, k, json } => {
            let engine = app::load_engine(&cfg)?;
            let retrieval = search(&engine, query, *k)?;
            print_search(&retrieval, *json, cfg.server.debug, io)
        }
        Command::Ask { question, json } => {
            let engine = app::load_engine(&cfg)?;
            let response = engine.ask(question)?;
            print_response(&response, *json, cfg.server.debug, io.out)?;
            Ok(())
        }
        Command::Chat { json } => cmd_chat(&cfg, *json, io),
        Command::Eval { data, json, .. } => {
            let (topics, qrels) = load_eval_data(&cfg, data, io.err)?;
            let engine = app::load_engine(&cfg)?;
            let report = compare_strategies(
                &topics,
                &qrels,
                engine.index(),
                engine.store(),
                engine.embedder(),
                &cfg.eval.grids,
                &eval_options(&cfg),
            )?;
            if *json {
                writeln!(io.out, "{}", serde_json::to_string_pretty(&report).map_err(cordchat_core::Error::from)?)?;
            } else {
                write!(io.out, "{}", report.render_table())?;
            }
            Ok(())
        }
        Command::GridSearch {
            target,
            data,
            table_out,
            json,
            ..
        } => {
            let (topics, qrels) = load_eval_data(&cfg, data, io.err)?;
            let engine = app::load_engine(&cfg)?;
            let opts = eval_options(&cfg);
            let table = ScoreTable::compute(&topics, engine.index(), engine.store(), engine.embedder(), opts.execution)?;
            let result = grid_search(*target, &cfg.eval.grids, &table, &binarize(&qrels), &opts)?;
            if let Some(path) = table_out {
                std::fs::write(path, serde_json::to_vec(&result.table).map_err(cordchat_core::Error::from)?)?;
            }
            if *json {
                let v = serde_json::json!({
                    "strategy": result.strategy,
                    "best": result.best,
                    "points": result.table.len(),
                });
                writeln!(io.out, "{}", serde_json::to_string_pretty(&v).map_err(cordchat_core::Error::from)?)?;
            } else {
                let b = &result.best;
                let thresholds: Vec<String> = [("bm25", b.bm25_threshold), ("cosine", b.cosine_threshold)]
                    .iter()
                    .filter_map(|(n, t)| t.map(|t| format!("{n} >= {t}")))
                    .collect();
                writeln!(
                    io.out,
                    "{}: F1 {:.4} (P {:.4}, R {:.4}) at {} over {} grid points",
                    result.strategy,
                    b.score.f1,
                    b.score.precision,
                    b.score.recall,
                    thresholds.join(", "),
                    result.table.len()
                )?;
            }
            Ok(())
        }
        Command::Serve { .. } => serve(&cfg),
    }
}

fn cmd_ingest(cfg: &AppConfig, corpus: &std::path::Path, out_dir: &std::path::Path, io: Io<'_>) -> Result<(), GatewayError> {
    let parsed = app::read_corpus(corpus)?;
    for issue in &parsed.skipped {
        writeln!(io.err, "warning: {}:{}: {}", corpus.display(), issue.line, issue.reason)?;
    }
    if parsed.records.is_empty() {
        writeln!(io.err, "warning: {} contains no records", corpus.display())?;
    }
    let ingested = ingest(parsed.records, &cfg.corpus, cfg.execution())?;
    write_ingested(out_dir, &ingested)?;
    writeln!(
        io.out,
        "{}",
        serde_json::to_string_pretty(&ingested.report).map_err(cordchat_core::Error::from)?
    )?;
    writeln!(
        io.err,
        "kept {} documents, {} chunks -> {}",
        ingested.report.kept,
        ingested.chunks.chunk_count(),
        out_dir.display()
    )?;
    Ok(())
}

fn cmd_index(cfg: &AppConfig, io: Io<'_>) -> Result<(), GatewayError> {
    let dir = &cfg.paths.artifacts;
    let docs = load_documents(dir, &cfg.corpus)?;
    let index = InvertedIndex::build(&docs, Bm25Params::default())?;
    write_index(dir, &index)?;
    writeln!(
        io.out,
        "indexed {} documents, {} terms -> {}",
        index.doc_count(),
        index.term_count(),
        dir.join(INDEX_FILE).display()
    )?;
    Ok(())
}

fn cmd_embed(cfg: &AppConfig, io: Io<'_>) -> Result<(), GatewayError> {
    let dir = &cfg.paths.artifacts;
    let docs = load_documents(dir, &cfg.corpus)?;
    let embedder = app::embedder(cfg)?;
    let store = DenseStore::build(&docs, embedder.as_ref(), cfg.execution())?;
    store.save(dir)?;
    writeln!(
        io.out,
        "embedded {} documents, dimension {}, provider {}",
        store.len(),
        store.dimension(),
        store.provider_id()
    )?;
    Ok(())
}

/// Retrieval with the engine's configured fusion and an optional `k`.
pub fn search(engine: &Engine, query: &str, k: Option<usize>) -> Result<Retrieval, GatewayError> {
    let mut fusion = engine.fusion;
    if let Some(k) = k {
        fusion.top_k = k;
    }
    Ok(engine.search(query, &fusion)?)
}

fn print_search(retrieval: &Retrieval, json: bool, debug: bool, io: Io<'_>) -> Result<(), GatewayError> {
    for w in &retrieval.warnings {
        writeln!(io.err, "warning: {w}")?;
    }
    if json {
        let mut v = serde_json::json!({ "candidates": retrieval.candidates });
        if debug {
            v["trace"] = serde_json::to_value(&retrieval.trace).map_err(cordchat_core::Error::from)?;
        }
        writeln!(io.out, "{}", serde_json::to_string_pretty(&v).map_err(cordchat_core::Error::from)?)?;
        return Ok(());
    }
    for (rank, c) in retrieval.candidates.iter().enumerate() {
        writeln!(
            io.out,
            "{}\t{}\t{:.6}\tbm25={:.4}\tcosine={:.4}",
            rank + 1,
            c.doc_id,
            c.aggregated,
            c.bm25_raw,
            c.cosine_raw
        )?;
    }
    if debug {
        writeln!(io.err, "{}", serde_json::to_string(&retrieval.trace).map_err(cordchat_core::Error::from)?)?;
    }
    Ok(())
}

/// Human-readable rendering of one response.
pub fn format_response(response: &SystemResponse) -> String {
    let mut s = String::new();
    match response.kind {
        ResponseKind::Answers => {
            for (i, item) in response.items.iter().enumerate() {
                let title = item.paper_title.as_deref().unwrap_or("");
                s.push_str(&format!("{}. {} [{}]\n", i + 1, item.text, title));
            }
        }
        ResponseKind::DocumentList => {
            s.push_str("These papers may help:\n");
            for (i, item) in response.items.iter().enumerate() {
                s.push_str(&format!("{}. {}\n", i + 1, item.text));
            }
        }
        ResponseKind::Clarification | ResponseKind::Smalltalk => {
            for item in &response.items {
                s.push_str(&item.text);
                s.push('\n');
            }
        }
    }
    s
}

fn print_response(response: &SystemResponse, json: bool, debug: bool, out: &mut dyn Write) -> Result<(), GatewayError> {
    if json {
        let mut v = serde_json::to_value(response).map_err(cordchat_core::Error::from)?;
        if !debug {
            if let Some(o) = v.as_object_mut() {
                o.remove("diagnostics");
            }
        }
        writeln!(out, "{}", serde_json::to_string(&v).map_err(cordchat_core::Error::from)?)?;
    } else {
        write!(out, "{}", format_response(response))?;
        if debug {
            writeln!(
                out,
                "diagnostics: {}",
                serde_json::to_string(&response.diagnostics).map_err(cordchat_core::Error::from)?
            )?;
        }
    }
    Ok(())
}

fn cmd_chat(cfg: &AppConfig, json: bool, io: Io<'_>) -> Result<(), GatewayError> {
    let engine = Arc::new(app::load_engine(cfg)?);
    let manager = app::dialogue_manager(cfg, engine)?;
    let store = SessionStore::new(Duration::from_secs(cfg.session.ttl_secs));
    let mut session = Session::new("cli", store.now_ms());
    let mut line = String::new();
    loop {
        line.clear();
        if io.input.read_line(&mut line)? == 0 {
            break;
        }
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        if matches!(text, "exit" | "quit") {
            break;
        }
        match manager.handle_turn(&mut session, text, store.now_ms()) {
            Ok(response) => print_response(&response, json, cfg.server.debug, io.out)?,
            Err(e) => writeln!(io.err, "error: {e}")?,
        }
        io.out.flush()?;
    }
    Ok(())
}

fn eval_options(cfg: &AppConfig) -> EvalOptions {
    EvalOptions {
        averaging: cfg.eval.averaging,
        top_k: cfg.eval.top_k,
        execution: cfg.execution(),
    }
}

fn load_eval_data(
    cfg: &AppConfig,
    data: &EvalData,
    err: &mut dyn Write,
) -> Result<(Vec<Topic>, Vec<Qrel>), GatewayError> {
    let topics_path = data
        .topics
        .clone()
        .or_else(|| cfg.paths.topics.clone())
        .ok_or_else(|| GatewayError::Config("no topics file given".into()))?;
    let qrels_path = data
        .qrels
        .clone()
        .or_else(|| cfg.paths.qrels.clone())
        .ok_or_else(|| GatewayError::Config("no qrels file given".into()))?;
    let open = |p: &PathBuf| {
        std::fs::File::open(p)
            .map(std::io::BufReader::new)
            .map_err(|e| GatewayError::input(p, e))
    };
    let (topics, bad_topics) = parse_topics(open(&topics_path)?)?;
    for issue in bad_topics {
        writeln!(err, "warning: {}:{}: {}", topics_path.display(), issue.line, issue.reason)?;
    }
    let parsed = parse_qrels(open(&qrels_path)?)?;
    for issue in parsed.rejected {
        writeln!(err, "warning: {}:{}: {}", qrels_path.display(), issue.line, issue.reason)?;
    }
    if topics.is_empty() {
        return Err(GatewayError::Config(format!("{} has no usable topics", topics_path.display())));
    }
    Ok((topics, parsed.qrels))
}

fn serve(cfg: &AppConfig) -> Result<(), GatewayError> {
    let started = Instant::now();
    let engine = Arc::new(app::load_engine(cfg)?);
    let manager = app::dialogue_manager(cfg, engine)?;
    let sessions = SessionStore::new(Duration::from_secs(cfg.session.ttl_secs));
    if let Some(path) = &cfg.session.snapshot {
        if path.is_file() {
            let n = sessions.restore_snapshot(path)?;
            tracing::info!(sessions = n, "restored session snapshot");
        }
    }
    let checksums = app::artifact_checksums(&cfg.paths.artifacts)?;
    let state = Arc::new(AppState::new(manager, sessions, cfg.server.debug, checksums));
    tracing::info!(load_ms = started.elapsed().as_secs_f64() * 1e3, "artifacts loaded");

    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    let bind = cfg.server.bind.clone();
    let snapshot = cfg.session.snapshot.clone();
    // the last reference must not drop inside the runtime: remote provider
    // clients own blocking runtimes of their own
    let keep_alive = state.clone();
    let result = runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&bind)
            .await
            .map_err(|e| GatewayError::Config(format!("cannot bind {bind}: {e}")))?;
        tracing::info!(address = %bind, "listening");
        let reaper = state.clone();
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(Duration::from_secs(60));
            loop {
                tick.tick().await;
                let expired = reaper.sessions().expire();
                if !expired.is_empty() {
                    tracing::debug!(count = expired.len(), "expired sessions");
                }
            }
        });
        axum::serve(listener, router(state.clone()))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| GatewayError::Server(e.to_string()))?;
        if let Some(path) = snapshot {
            state.sessions().save_snapshot(&path)?;
        }
        Ok(())
    });
    drop(runtime);
    drop(keep_alive);
    result
}
