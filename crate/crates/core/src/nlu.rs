//! Turn understanding: coreference on the latest turn, covid-relatedness
//! detection and disease-keyword enrichment.
//!
//! Dictionary matching works on whitespace words, lowercased and stripped of
//! surrounding punctuation, so hyphenated names like `sars-cov-2` stay whole
//! and never match the shorter `sars`.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, OnceLock};

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, ProviderError, Result};

const BUILTIN_DICTIONARY: &str = include_str!("../data/diseases.json");

/// Probabilistic classifiers call a turn covid-related at or above this.
pub const COVID_PROBABILITY_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiseaseFamily {
    /// Entity recorded in the session when this family matches. Defaults to
    /// the first expansion.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub canonical: Option<String>,
    pub aliases: Vec<String>,
    pub expansions: Vec<String>,
}

impl DiseaseFamily {
    fn canonical_name(&self, family: &str) -> String {
        self.canonical
            .clone()
            .or_else(|| self.expansions.first().cloned())
            .unwrap_or_else(|| family.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DiseaseDictionary {
    families: BTreeMap<String, DiseaseFamily>,
}

impl DiseaseDictionary {
    pub fn builtin() -> Self {
        Self::from_json(BUILTIN_DICTIONARY).expect("bundled disease dictionary is valid")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let dict: Self = serde_json::from_str(json)?;
        for (name, fam) in &dict.families {
            if fam.aliases.iter().chain(&fam.expansions).any(|a| words(a).is_empty()) {
                return Err(Error::InvalidInput(format!("family {name} has an empty alias or expansion")));
            }
        }
        Ok(dict)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn families(&self) -> impl Iterator<Item = (&str, &DiseaseFamily)> {
        self.families.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Families with an alias or expansion present in `text`.
    pub fn matched_families(&self, text: &str) -> Vec<&str> {
        let w = words(text);
        self.families
            .iter()
            .filter(|(_, fam)| {
                fam.aliases
                    .iter()
                    .chain(&fam.expansions)
                    .any(|alias| contains_phrase(&w, &words(alias)))
            })
            .map(|(name, _)| name.as_str())
            .collect()
    }
}

impl Default for DiseaseDictionary {
    fn default() -> Self {
        Self::builtin()
    }
}

fn words(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

fn contains_phrase(haystack: &[String], phrase: &[String]) -> bool {
    !phrase.is_empty() && haystack.windows(phrase.len()).any(|w| w == phrase)
}

/// Appends each matched family's expansions that are not already present.
/// Repeats until nothing new is added, so the result is a fixed point.
/// Returns the enriched text and the canonical entities of every family
/// matched in it.
pub fn enrich_query(text: &str, dictionary: &DiseaseDictionary) -> (String, Vec<String>) {
    let mut out = text.to_string();
    loop {
        let mut appended = false;
        for name in dictionary.matched_families(&out) {
            let fam = &dictionary.families[name];
            for exp in &fam.expansions {
                if !contains_phrase(&words(&out), &words(exp)) {
                    if !out.is_empty() && !out.ends_with(char::is_whitespace) {
                        out.push(' ');
                    }
                    out.push_str(exp);
                    appended = true;
                }
            }
        }
        if !appended {
            break;
        }
    }
    let entities = dictionary
        .matched_families(&out)
        .into_iter()
        .map(|name| dictionary.families[name].canonical_name(name))
        .collect();
    (out, entities)
}

fn coref_pattern() -> &'static Regex {
    static PATTERN: OnceLock<Regex> = OnceLock::new();
    PATTERN.get_or_init(|| {
        Regex::new(r"(?i)\b(?:the\s+virus|the\s+disease|it|this|that)\b").expect("valid pattern")
    })
}

/// Replaces `it`, `this`, `that`, `the virus` and `the disease` with the most
/// recent disease entity (the last one in `session_entities`).
pub fn resolve_coreference(session_entities: &[String], utterance: &str) -> String {
    match session_entities.last() {
        Some(entity) => coref_pattern()
            .replace_all(utterance, regex::NoExpand(entity))
            .into_owned(),
        None => utterance.to_string(),
    }
}

pub trait CoreferenceResolver: Send + Sync {
    fn resolve(&self, session_entities: &[String], utterance: &str) -> String;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RuleResolver;

impl CoreferenceResolver for RuleResolver {
    fn resolve(&self, session_entities: &[String], utterance: &str) -> String {
        resolve_coreference(session_entities, utterance)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub is_covid: bool,
    pub confidence: f64,
}

impl Classification {
    /// From the probability that the text is covid-related.
    pub fn from_probability(p: f64) -> Self {
        let p = p.clamp(0.0, 1.0);
        Self {
            is_covid: p >= COVID_PROBABILITY_THRESHOLD,
            confidence: p,
        }
    }
}

pub trait CovidClassifier: Send + Sync {
    fn classify(&self, text: &str) -> Result<Classification, ProviderError>;
}

/// True with confidence 1.0 when any dictionary alias appears, otherwise
/// false with confidence 0.0.
#[derive(Debug, Clone, Default)]
pub struct DictionaryClassifier {
    dictionary: DiseaseDictionary,
}

impl DictionaryClassifier {
    pub fn new(dictionary: DiseaseDictionary) -> Self {
        Self { dictionary }
    }
}

impl CovidClassifier for DictionaryClassifier {
    fn classify(&self, text: &str) -> Result<Classification, ProviderError> {
        let hit = !self.dictionary.matched_families(text).is_empty();
        Ok(Classification {
            is_covid: hit,
            confidence: if hit { 1.0 } else { 0.0 },
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub classification: Classification,
    pub warning: Option<String>,
}

/// Delegates to `classifier`; on failure answers with `fallback` and a
/// warning.
pub fn detect_covid(text: &str, classifier: &dyn CovidClassifier, fallback: &DictionaryClassifier) -> Detection {
    match classifier.classify(text) {
        Ok(c) if c.confidence.is_finite() => Detection {
            classification: Classification {
                is_covid: c.is_covid,
                confidence: c.confidence.clamp(0.0, 1.0),
            },
            warning: None,
        },
        other => {
            let reason = match other {
                Err(e) => e.to_string(),
                Ok(_) => "non-finite confidence".to_string(),
            };
            Detection {
                classification: fallback.classify(text).expect("dictionary classifier is infallible"),
                warning: Some(format!("covid classifier failed ({reason}); used dictionary fallback")),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnAnalysis {
    pub raw_text: String,
    pub resolved_text: String,
    pub is_covid: bool,
    pub confidence: f64,
    pub enriched_text: String,
    pub matched_entities: Vec<String>,
}

#[derive(Clone)]
pub struct Nlu {
    fallback: DictionaryClassifier,
    dictionary: DiseaseDictionary,
    classifier: Arc<dyn CovidClassifier>,
    resolver: Arc<dyn CoreferenceResolver>,
}

impl Nlu {
    pub fn new(dictionary: DiseaseDictionary) -> Self {
        let fallback = DictionaryClassifier::new(dictionary.clone());
        Self {
            classifier: Arc::new(fallback.clone()),
            fallback,
            dictionary,
            resolver: Arc::new(RuleResolver),
        }
    }

    pub fn with_classifier(mut self, classifier: Arc<dyn CovidClassifier>) -> Self {
        self.classifier = classifier;
        self
    }

    pub fn with_resolver(mut self, resolver: Arc<dyn CoreferenceResolver>) -> Self {
        self.resolver = resolver;
        self
    }

    pub fn dictionary(&self) -> &DiseaseDictionary {
        &self.dictionary
    }

    /// Resolve, classify, and enrich when covid-related. Returns any
    /// provider warnings alongside the analysis.
    pub fn analyze(&self, session_entities: &[String], utterance: &str) -> (TurnAnalysis, Vec<String>) {
        let resolved = self.resolver.resolve(session_entities, utterance);
        let detection = detect_covid(&resolved, self.classifier.as_ref(), &self.fallback);
        let (enriched, entities) = if detection.classification.is_covid {
            enrich_query(&resolved, &self.dictionary)
        } else {
            (resolved.clone(), Vec::new())
        };
        let analysis = TurnAnalysis {
            raw_text: utterance.to_string(),
            resolved_text: resolved,
            is_covid: detection.classification.is_covid,
            confidence: detection.classification.confidence,
            enriched_text: enriched,
            matched_entities: entities,
        };
        (analysis, detection.warning.into_iter().collect())
    }
}

impl Default for Nlu {
    fn default() -> Self {
        Self::new(DiseaseDictionary::builtin())
    }
}
