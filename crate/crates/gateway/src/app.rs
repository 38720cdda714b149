//! Builds engines, providers and dialogue managers from an [`AppConfig`].

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use cordchat_core::corpus::{parse_corpus, ParsedCorpus};
use cordchat_core::dense::{sha256_hex, EmbeddingProvider, HashedEmbedder, MANIFEST_FILE, VECTORS_FILE};
use cordchat_core::dialogue::{CannedGenerator, DialogueManager, Generator};
use cordchat_core::engine::{Engine, CHUNKS_FILE, DOCUMENTS_FILE, INDEX_FILE};
use cordchat_core::nlu::{DiseaseDictionary, Nlu};

use crate::config::AppConfig;
use crate::error::GatewayError;
use crate::providers::{RemoteClassifier, RemoteEmbedder, RemoteExtractor, RemoteGenerator};

/// Files whose checksums `/health` reports.
pub const ARTIFACT_FILES: [&str; 5] = [DOCUMENTS_FILE, CHUNKS_FILE, INDEX_FILE, VECTORS_FILE, MANIFEST_FILE];

fn timeout(cfg: &AppConfig) -> Duration {
    Duration::from_millis(cfg.providers.timeout_ms)
}

fn provider_err(e: cordchat_core::ProviderError) -> GatewayError {
    GatewayError::Config(format!("provider setup failed: {e}"))
}

pub fn read_corpus(path: &Path) -> Result<ParsedCorpus, GatewayError> {
    let file = File::open(path).map_err(|e| GatewayError::input(path, e))?;
    Ok(parse_corpus(BufReader::new(file))?)
}

pub fn embedder(cfg: &AppConfig) -> Result<Arc<dyn EmbeddingProvider>, GatewayError> {
    Ok(match &cfg.providers.embedder {
        Some(url) => Arc::new(RemoteEmbedder::new(url, cfg.providers.dimension, timeout(cfg)).map_err(provider_err)?),
        None => Arc::new(HashedEmbedder::new(cfg.providers.dimension)?),
    })
}

pub fn generator(cfg: &AppConfig) -> Result<Arc<dyn Generator>, GatewayError> {
    Ok(match &cfg.providers.generator {
        Some(url) => Arc::new(RemoteGenerator::new(url, timeout(cfg)).map_err(provider_err)?),
        None => Arc::new(CannedGenerator),
    })
}

pub fn nlu(cfg: &AppConfig) -> Result<Nlu, GatewayError> {
    let dictionary = match &cfg.paths.dictionary {
        Some(path) => DiseaseDictionary::load(path)?,
        None => DiseaseDictionary::builtin(),
    };
    let mut nlu = Nlu::new(dictionary);
    if let Some(url) = &cfg.providers.classifier {
        nlu = nlu.with_classifier(Arc::new(RemoteClassifier::new(url, timeout(cfg)).map_err(provider_err)?));
    }
    Ok(nlu)
}

/// Loads the artifacts and installs the configured providers and defaults.
pub fn load_engine(cfg: &AppConfig) -> Result<Engine, GatewayError> {
    cfg.validate()?;
    let dir = &cfg.paths.artifacts;
    for name in ARTIFACT_FILES {
        let path = dir.join(name);
        if !path.is_file() {
            return Err(GatewayError::input(
                &path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "artifact missing; run ingest, index and embed first"),
            ));
        }
    }
    let mut engine = Engine::load(dir, &cfg.corpus)?.with_embedder(embedder(cfg)?)?;
    if let Some(url) = &cfg.providers.extractor {
        engine = engine.with_extractor(Arc::new(RemoteExtractor::new(url, timeout(cfg)).map_err(provider_err)?));
    }
    engine.fusion = cfg.fusion;
    engine.answer = cfg.answer.clone();
    engine.execution = cfg.execution();
    Ok(engine)
}

pub fn dialogue_manager(cfg: &AppConfig, engine: Arc<Engine>) -> Result<DialogueManager, GatewayError> {
    Ok(DialogueManager::new(engine, nlu(cfg)?, generator(cfg)?))
}

/// sha256 of every artifact file present in `dir`.
pub fn artifact_checksums(dir: &Path) -> Result<BTreeMap<String, String>, GatewayError> {
    let mut out = BTreeMap::new();
    for name in ARTIFACT_FILES {
        let path = dir.join(name);
        if path.is_file() {
            let bytes = std::fs::read(&path).map_err(|e| GatewayError::input(&path, e))?;
            out.insert(name.to_string(), sha256_hex(&bytes));
        }
    }
    Ok(out)
}
