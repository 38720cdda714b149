//! HTTP clients for remote model services.
//!
//! | provider   | request                              | response                                   |
//! |------------|--------------------------------------|--------------------------------------------|
//! | embedder   | `POST /embed {text}`                 | `{vector: [f64]}`                          |
//! | extractor  | `POST /extract {question, passage}`  | `{spans: [{text, start_loglik, end_loglik}]}` |
//! | classifier | `POST /classify {text}`              | `{confidence}`, probability of covid       |
//! | generator  | `POST /generate {history: [turn]}`   | `{text}`                                   |
//!
//! Clients are blocking and must be constructed outside an async runtime.

use std::time::Duration;

use cordchat_core::answer::{ExtractedSpan, SpanExtractor};
use cordchat_core::dense::{EmbeddingProvider, EmbeddingVector};
use cordchat_core::dialogue::{Generator, Turn};
use cordchat_core::nlu::{Classification, CovidClassifier};
use cordchat_core::ProviderError;
use reqwest::blocking::Client;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone)]
struct Endpoint {
    client: Client,
    base: String,
}

impl Endpoint {
    fn new(base: &str, timeout: Duration) -> Result<Self, ProviderError> {
        let client = Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ProviderError::Unavailable(e.to_string()))?;
        Ok(Self {
            client,
            base: base.trim_end_matches('/').to_string(),
        })
    }

    fn post<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: &B) -> Result<R, ProviderError> {
        let url = format!("{}/{path}", self.base);
        let resp = self
            .client
            .post(&url)
            .json(body)
            .send()
            .map_err(|e| ProviderError::Unavailable(format!("{url}: {e}")))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(ProviderError::Unavailable(format!("{url}: HTTP {status}")));
        }
        resp.json::<R>()
            .map_err(|e| ProviderError::BadResponse(format!("{url}: {e}")))
    }
}

#[derive(Serialize)]
struct TextRequest<'a> {
    text: &'a str,
}

#[derive(Deserialize)]
struct EmbedResponse {
    vector: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RemoteEmbedder {
    endpoint: Endpoint,
    dimension: usize,
}

impl RemoteEmbedder {
    pub fn new(base: &str, dimension: usize, timeout: Duration) -> Result<Self, ProviderError> {
        Ok(Self {
            endpoint: Endpoint::new(base, timeout)?,
            dimension,
        })
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn provider_id(&self) -> String {
        format!("remote:{}", self.endpoint.base)
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        let resp: EmbedResponse = self.endpoint.post("embed", &TextRequest { text })?;
        if resp.vector.len() != self.dimension {
            return Err(ProviderError::DimensionMismatch {
                expected: self.dimension,
                got: resp.vector.len(),
            });
        }
        let v = EmbeddingVector::new(resp.vector);
        if !v.is_finite() {
            return Err(ProviderError::BadResponse("non-finite embedding entry".into()));
        }
        Ok(v)
    }
}

#[derive(Serialize)]
struct ExtractRequest<'a> {
    question: &'a str,
    passage: &'a str,
}

#[derive(Deserialize)]
struct ExtractResponse {
    spans: Vec<ExtractedSpan>,
}

#[derive(Debug, Clone)]
pub struct RemoteExtractor {
    endpoint: Endpoint,
}

impl RemoteExtractor {
    pub fn new(base: &str, timeout: Duration) -> Result<Self, ProviderError> {
        Ok(Self {
            endpoint: Endpoint::new(base, timeout)?,
        })
    }
}

impl SpanExtractor for RemoteExtractor {
    fn extract(&self, question: &str, passage: &str) -> Result<Vec<ExtractedSpan>, ProviderError> {
        let resp: ExtractResponse = self.endpoint.post("extract", &ExtractRequest { question, passage })?;
        Ok(resp.spans)
    }
}

#[derive(Deserialize)]
struct ClassifyResponse {
    confidence: f64,
}

#[derive(Debug, Clone)]
pub struct RemoteClassifier {
    endpoint: Endpoint,
}

impl RemoteClassifier {
    pub fn new(base: &str, timeout: Duration) -> Result<Self, ProviderError> {
        Ok(Self {
            endpoint: Endpoint::new(base, timeout)?,
        })
    }
}

impl CovidClassifier for RemoteClassifier {
    fn classify(&self, text: &str) -> Result<Classification, ProviderError> {
        let resp: ClassifyResponse = self.endpoint.post("classify", &TextRequest { text })?;
        if !resp.confidence.is_finite() || !(0.0..=1.0).contains(&resp.confidence) {
            return Err(ProviderError::BadResponse(format!(
                "confidence {} is not a probability",
                resp.confidence
            )));
        }
        Ok(Classification::from_probability(resp.confidence))
    }
}

#[derive(Serialize)]
struct GenerateRequest<'a> {
    history: &'a [Turn],
}

#[derive(Deserialize)]
struct GenerateResponse {
    text: String,
}

#[derive(Debug, Clone)]
pub struct RemoteGenerator {
    endpoint: Endpoint,
}

impl RemoteGenerator {
    pub fn new(base: &str, timeout: Duration) -> Result<Self, ProviderError> {
        Ok(Self {
            endpoint: Endpoint::new(base, timeout)?,
        })
    }
}

impl Generator for RemoteGenerator {
    fn generate(&self, history: &[Turn]) -> Result<String, ProviderError> {
        let resp: GenerateResponse = self.endpoint.post("generate", &GenerateRequest { history })?;
        Ok(resp.text)
    }
}
