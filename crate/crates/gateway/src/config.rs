//! Application configuration.
//!
//! Sources, lowest to highest precedence: built-in defaults, a TOML file,
//! `CORDCHAT_*` environment variables, command-line flags (applied by the
//! caller after [`AppConfig::resolve`]).
//!
//! ```toml
//! [paths]
//! artifacts = "artifacts"
//!
//! [fusion]
//! bm25_threshold = 2.77
//! strategy = "union"
//!
//! [providers]
//! embedder = "http://localhost:9000"
//!
//! [server]
//! bind = "127.0.0.1:8080"
//! ```

use std::path::{Path, PathBuf};

use cordchat_core::answer::AnswerConfig;
use cordchat_core::corpus::CorpusConfig;
use cordchat_core::dense::DEFAULT_DIMENSION;
use cordchat_core::eval::{Averaging, Grids};
use cordchat_core::fusion::FusionConfig;
use serde::{Deserialize, Serialize};

use crate::error::GatewayError;

pub const ENV_PREFIX: &str = "CORDCHAT_";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Raw corpus (JSON lines) consumed by `ingest`.
    pub corpus: Option<PathBuf>,
    /// Directory holding every derived artifact.
    pub artifacts: PathBuf,
    pub topics: Option<PathBuf>,
    pub qrels: Option<PathBuf>,
    /// Alternative disease dictionary.
    pub dictionary: Option<PathBuf>,
}

/// Base URLs of remote model services. Unset means the built-in provider.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Providers {
    pub embedder: Option<String>,
    pub extractor: Option<String>,
    pub classifier: Option<String>,
    pub generator: Option<String>,
    pub timeout_ms: u64,
    /// Dimension of the built-in embedder, or the one expected from the
    /// remote embedder.
    pub dimension: usize,
}

impl Default for Providers {
    fn default() -> Self {
        Self {
            embedder: None,
            extractor: None,
            classifier: None,
            generator: None,
            timeout_ms: 10_000,
            dimension: DEFAULT_DIMENSION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Session {
    pub ttl_secs: u64,
    /// Sessions are restored from and saved to this file when set.
    pub snapshot: Option<PathBuf>,
}

impl Default for Session {
    fn default() -> Self {
        Self {
            ttl_secs: 1800,
            snapshot: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Server {
    pub bind: String,
    /// Attach per-stage diagnostics to HTTP responses.
    pub debug: bool,
}

impl Default for Server {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            debug: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Evaluation {
    pub averaging: Averaging,
    /// Apply the fusion top-k cut while grid searching.
    pub top_k: Option<usize>,
    pub grids: Grids,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub paths: Paths,
    pub corpus: CorpusConfig,
    pub fusion: FusionConfig,
    pub answer: AnswerConfig,
    pub providers: Providers,
    pub session: Session,
    pub server: Server,
    pub eval: Evaluation,
    /// Run the data-parallel paths on one thread.
    pub sequential: bool,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            paths: Paths {
                artifacts: PathBuf::from("artifacts"),
                ..Paths::default()
            },
            corpus: CorpusConfig::default(),
            fusion: FusionConfig::default(),
            answer: AnswerConfig::default(),
            providers: Providers::default(),
            session: Session::default(),
            server: Server::default(),
            eval: Evaluation::default(),
            sequential: false,
        }
    }
}

fn parse_env<T: std::str::FromStr>(key: &str, raw: &str) -> Result<T, GatewayError>
where
    T::Err: std::fmt::Display,
{
    raw.parse()
        .map_err(|e| GatewayError::Config(format!("{ENV_PREFIX}{key}={raw:?}: {e}")))
}

fn parse_bool(key: &str, raw: &str) -> Result<bool, GatewayError> {
    match raw.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" | "" => Ok(false),
        _ => Err(GatewayError::Config(format!("{ENV_PREFIX}{key}={raw:?}: expected a boolean"))),
    }
}

impl AppConfig {
    pub fn from_toml(text: &str) -> Result<Self, GatewayError> {
        toml::from_str(text).map_err(|e| GatewayError::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))
    }

    /// Applies `CORDCHAT_<KEY>` overrides looked up through `lookup`.
    pub fn apply_env<F>(&mut self, lookup: F) -> Result<(), GatewayError>
    where
        F: Fn(&str) -> Option<String>,
    {
        let get = |key: &str| lookup(&format!("{ENV_PREFIX}{key}"));
        if let Some(v) = get("CORPUS") {
            self.paths.corpus = Some(v.into());
        }
        if let Some(v) = get("ARTIFACTS") {
            self.paths.artifacts = v.into();
        }
        if let Some(v) = get("TOPICS") {
            self.paths.topics = Some(v.into());
        }
        if let Some(v) = get("QRELS") {
            self.paths.qrels = Some(v.into());
        }
        if let Some(v) = get("DICTIONARY") {
            self.paths.dictionary = Some(v.into());
        }
        if let Some(v) = get("BM25_THRESHOLD") {
            self.fusion.bm25_threshold = parse_env("BM25_THRESHOLD", &v)?;
        }
        if let Some(v) = get("COSINE_THRESHOLD") {
            self.fusion.cosine_threshold = parse_env("COSINE_THRESHOLD", &v)?;
        }
        if let Some(v) = get("TOP_K") {
            self.fusion.top_k = parse_env("TOP_K", &v)?;
        }
        if let Some(v) = get("STRATEGY") {
            self.fusion.strategy = parse_env("STRATEGY", &v)?;
        }
        if let Some(v) = get("ALPHA") {
            self.answer.alpha = parse_env("ALPHA", &v)?;
        }
        if let Some(v) = get("EMBEDDER_URL") {
            self.providers.embedder = Some(v);
        }
        if let Some(v) = get("EXTRACTOR_URL") {
            self.providers.extractor = Some(v);
        }
        if let Some(v) = get("CLASSIFIER_URL") {
            self.providers.classifier = Some(v);
        }
        if let Some(v) = get("GENERATOR_URL") {
            self.providers.generator = Some(v);
        }
        if let Some(v) = get("PROVIDER_TIMEOUT_MS") {
            self.providers.timeout_ms = parse_env("PROVIDER_TIMEOUT_MS", &v)?;
        }
        if let Some(v) = get("DIMENSION") {
            self.providers.dimension = parse_env("DIMENSION", &v)?;
        }
        if let Some(v) = get("SESSION_TTL_SECS") {
            self.session.ttl_secs = parse_env("SESSION_TTL_SECS", &v)?;
        }
        if let Some(v) = get("BIND") {
            self.server.bind = v;
        }
        if let Some(v) = get("DEBUG") {
            self.server.debug = parse_bool("DEBUG", &v)?;
        }
        if let Some(v) = get("SEQUENTIAL") {
            self.sequential = parse_bool("SEQUENTIAL", &v)?;
        }
        Ok(())
    }

    /// Defaults, then `file` if given, then the process environment.
    pub fn resolve(file: Option<&Path>) -> Result<Self, GatewayError> {
        let mut cfg = match file {
            Some(path) => Self::from_file(path)?,
            None => Self::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok())?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        self.fusion.validate()?;
        self.answer.validate()?;
        cordchat_core::corpus::window_spans(0, self.corpus.window, self.corpus.overlap)?;
        if self.providers.dimension == 0 {
            return Err(GatewayError::Config("providers.dimension must be positive".into()));
        }
        if self.providers.timeout_ms == 0 {
            return Err(GatewayError::Config("providers.timeout_ms must be positive".into()));
        }
        if self.session.ttl_secs == 0 {
            return Err(GatewayError::Config("session.ttl_secs must be positive".into()));
        }
        Ok(())
    }

    pub fn execution(&self) -> cordchat_core::Execution {
        if self.sequential {
            cordchat_core::Execution::Sequential
        } else {
            cordchat_core::Execution::default()
        }
    }
}
