//! Per-session conversation state and turn routing.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::answer::SystemResponse;
use crate::engine::Engine;
use crate::error::{Error, ProviderError, Result};
use crate::nlu::Nlu;
use crate::text::fnv1a;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    User,
    Bot,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub turns: Vec<Turn>,
    pub disease_entities: Vec<String>,
    pub created_at: u64,
    pub last_active: u64,
}

impl Session {
    pub fn new(session_id: impl Into<String>, now: u64) -> Self {
        Self {
            session_id: session_id.into(),
            turns: Vec::new(),
            disease_entities: Vec::new(),
            created_at: now,
            last_active: now,
        }
    }

    /// Appends a turn, nudging the timestamp forward so turns stay strictly
    /// time-ordered even when the clock has not advanced.
    pub fn push_turn(&mut self, speaker: Speaker, text: impl Into<String>, now: u64) {
        let ts = match self.turns.last() {
            Some(last) if now <= last.timestamp => last.timestamp + 1,
            _ => now,
        };
        self.turns.push(Turn {
            speaker,
            text: text.into(),
            timestamp: ts,
        });
        self.last_active = self.last_active.max(ts);
    }

    fn remember_entity(&mut self, entity: &str) {
        if self.disease_entities.last().map(String::as_str) != Some(entity) {
            self.disease_entities.push(entity.to_string());
        }
    }
}

pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }
}

/// A clock that only moves when told to.
#[derive(Debug, Default)]
pub struct ManualClock(AtomicU64);

impl ManualClock {
    pub fn new(start: u64) -> Self {
        Self(AtomicU64::new(start))
    }

    pub fn advance(&self, ms: u64) {
        self.0.fetch_add(ms, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

/// Produces open-domain replies from the conversation so far.
pub trait Generator: Send + Sync {
    fn generate(&self, history: &[Turn]) -> Result<String, ProviderError>;
}

pub const GREETING: &str = "Hi! I can chat, or help you dig through the coronavirus research literature.";

const CANNED: [&str; 8] = [
    "That's interesting, tell me more.",
    "I see. How has your day been otherwise?",
    "Ha, I hadn't thought of it that way.",
    "Sounds good to me!",
    "Really? Why do you say that?",
    "I'm mostly here for questions about coronavirus research, but happy to chat.",
    "That makes sense.",
    "Hmm, what do you think about it?",
];

/// Picks a canned reply by hashing the last user turn; greets on an empty
/// history.
#[derive(Debug, Clone, Copy, Default)]
pub struct CannedGenerator;

impl Generator for CannedGenerator {
    fn generate(&self, history: &[Turn]) -> Result<String, ProviderError> {
        let last_user = history.iter().rev().find(|t| t.speaker == Speaker::User);
        Ok(match last_user {
            None => GREETING.to_string(),
            Some(turn) => {
                let h = fnv1a(turn.text.trim().to_lowercase().as_bytes());
                CANNED[(h % CANNED.len() as u64) as usize].to_string()
            }
        })
    }
}

/// In-memory sessions with idle expiry. Each session sits behind its own
/// mutex, so turns within a session are serialized while different
/// sessions proceed in parallel.
pub struct SessionStore {
    ttl: Duration,
    clock: Arc<dyn Clock>,
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
    counter: AtomicU64,
}

impl SessionStore {
    pub fn new(ttl: Duration) -> Self {
        Self::with_clock(ttl, Arc::new(SystemClock))
    }

    pub fn with_clock(ttl: Duration, clock: Arc<dyn Clock>) -> Self {
        Self {
            ttl,
            clock,
            sessions: Mutex::new(HashMap::new()),
            counter: AtomicU64::new(0),
        }
    }

    fn map(&self) -> MutexGuard<'_, HashMap<String, Arc<Mutex<Session>>>> {
        self.sessions.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn now_ms(&self) -> u64 {
        self.clock.now_ms()
    }

    pub fn create(&self) -> Arc<Mutex<Session>> {
        let now = self.clock.now_ms();
        let n = self.counter.fetch_add(1, Ordering::SeqCst);
        let id = format!("s-{now:x}-{n:04x}");
        let session = Arc::new(Mutex::new(Session::new(id.clone(), now)));
        self.map().insert(id, session.clone());
        session
    }

    pub fn get(&self, session_id: &str) -> Result<Arc<Mutex<Session>>> {
        self.map()
            .get(session_id)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("session {session_id}")))
    }

    /// Marks the session active now. `last_active` never moves backwards.
    pub fn touch(&self, session_id: &str) -> Result<()> {
        let session = self.get(session_id)?;
        let now = self.clock.now_ms();
        let mut s = session.lock().unwrap_or_else(|p| p.into_inner());
        s.last_active = s.last_active.max(now);
        Ok(())
    }

    /// Drops sessions idle for longer than the TTL; returns their ids.
    pub fn expire(&self) -> Vec<String> {
        let now = self.clock.now_ms();
        let ttl = self.ttl.as_millis() as u64;
        let mut map = self.map();
        let stale: Vec<String> = map
            .iter()
            .filter(|(_, s)| {
                let s = s.lock().unwrap_or_else(|p| p.into_inner());
                now.saturating_sub(s.last_active) > ttl
            })
            .map(|(id, _)| id.clone())
            .collect();
        for id in &stale {
            map.remove(id);
        }
        stale
    }

    pub fn len(&self) -> usize {
        self.map().len()
    }

    pub fn is_empty(&self) -> bool {
        self.map().is_empty()
    }

    pub fn snapshot(&self) -> Vec<Session> {
        let mut all: Vec<Session> = self
            .map()
            .values()
            .map(|s| s.lock().unwrap_or_else(|p| p.into_inner()).clone())
            .collect();
        all.sort_by(|a, b| a.session_id.cmp(&b.session_id));
        all
    }

    pub fn save_snapshot(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(&self.snapshot())?)?;
        Ok(())
    }

    /// Loads sessions from a snapshot file, replacing any with the same id.
    pub fn restore_snapshot(&self, path: &Path) -> Result<usize> {
        let sessions: Vec<Session> = serde_json::from_slice(&std::fs::read(path)?)?;
        let n = sessions.len();
        let mut map = self.map();
        for s in sessions {
            map.insert(s.session_id.clone(), Arc::new(Mutex::new(s)));
        }
        Ok(n)
    }
}

/// Routes each turn: covid-related turns go through retrieval and answer
/// extraction, everything else to the generator.
pub struct DialogueManager {
    engine: Arc<Engine>,
    nlu: Nlu,
    generator: Arc<dyn Generator>,
}

impl DialogueManager {
    pub fn new(engine: Arc<Engine>, nlu: Nlu, generator: Arc<dyn Generator>) -> Self {
        Self {
            engine,
            nlu,
            generator,
        }
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn handle_turn(&self, session: &mut Session, utterance: &str, now: u64) -> Result<SystemResponse> {
        let utterance = utterance.trim();
        if utterance.is_empty() {
            return Err(Error::InvalidInput("empty utterance".into()));
        }
        let (analysis, warnings) = self.nlu.analyze(&session.disease_entities, utterance);
        session.push_turn(Speaker::User, utterance, now);

        let mut response = if analysis.is_covid {
            match self.engine.ask(&analysis.enriched_text) {
                Ok(r) => r,
                Err(e) => {
                    let mut r = SystemResponse::clarification();
                    r.diagnostics.warnings.push(format!("retrieval pipeline failed: {e}"));
                    r
                }
            }
        } else {
            match self.generator.generate(&session.turns) {
                Ok(text) if !text.trim().is_empty() => SystemResponse::smalltalk(text),
                Ok(_) => {
                    let mut r = SystemResponse::clarification();
                    r.diagnostics.warnings.push("generator returned an empty reply".into());
                    r
                }
                Err(e) => {
                    let mut r = SystemResponse::clarification();
                    r.diagnostics.warnings.push(format!("generator failed: {e}"));
                    r
                }
            }
        };

        if analysis.is_covid {
            for entity in &analysis.matched_entities {
                session.remember_entity(entity);
            }
        }
        response.diagnostics.warnings.splice(0..0, warnings);
        response.diagnostics.nlu = Some(analysis);
        session.push_turn(Speaker::Bot, response.summary_text(), now);
        Ok(response)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canned_generator_is_deterministic() {
        let g = CannedGenerator;
        assert_eq!(g.generate(&[]).unwrap(), GREETING);
        let h = vec![Turn {
            speaker: Speaker::User,
            text: "what a lovely day".into(),
            timestamp: 1,
        }];
        let a = g.generate(&h).unwrap();
        assert_eq!(a, g.generate(&h).unwrap());
        assert!(!a.is_empty());
    }

    #[test]
    fn store_lifecycle() {
        let clock = Arc::new(ManualClock::new(1_000));
        let store = SessionStore::with_clock(Duration::from_secs(60), clock.clone());
        let s = store.create();
        let id = s.lock().unwrap().session_id.clone();
        assert!(Arc::ptr_eq(&store.get(&id).unwrap(), &s));
        assert!(matches!(store.get("nope"), Err(Error::NotFound(_))));

        clock.advance(30_000);
        store.touch(&id).unwrap();
        assert_eq!(s.lock().unwrap().last_active, 31_000);
        assert!(matches!(store.touch("nope"), Err(Error::NotFound(_))));

        clock.advance(60_000);
        assert!(store.expire().is_empty());
        clock.advance(1);
        assert_eq!(store.expire(), vec![id.clone()]);
        assert!(store.get(&id).is_err());
    }

    #[test]
    fn touch_never_goes_backwards() {
        let clock = Arc::new(ManualClock::new(500));
        let store = SessionStore::with_clock(Duration::from_secs(1), clock);
        let s = store.create();
        let id = s.lock().unwrap().session_id.clone();
        s.lock().unwrap().last_active = 9_999;
        store.touch(&id).unwrap();
        assert_eq!(s.lock().unwrap().last_active, 9_999);
    }

    #[test]
    fn turns_are_strictly_ordered() {
        let mut s = Session::new("x", 10);
        s.push_turn(Speaker::User, "a", 10);
        s.push_turn(Speaker::Bot, "b", 10);
        s.push_turn(Speaker::User, "c", 5);
        let ts: Vec<u64> = s.turns.iter().map(|t| t.timestamp).collect();
        assert_eq!(ts, vec![10, 11, 12]);
    }

    #[test]
    fn snapshot_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sessions.json");
        let store = SessionStore::new(Duration::from_secs(60));
        let s = store.create();
        s.lock().unwrap().push_turn(Speaker::User, "hello", 1);
        store.save_snapshot(&path).unwrap();

        let other = SessionStore::new(Duration::from_secs(60));
        assert_eq!(other.restore_snapshot(&path).unwrap(), 1);
        assert_eq!(other.snapshot(), store.snapshot());
    }
}
