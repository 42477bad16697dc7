//! Session layer behind the streaming gateway.
//!
//! Each session owns a [`Dialogue`] and an [`EventHub`]. Posting an utterance
//! runs one turn on a worker thread; the engine's events are published as
//! [`StreamEvent`] frames in emission order, and the turn ends with exactly
//! one `turn_done` frame. The dialogue history is updated before that frame
//! goes out, so a client may post its next utterance as soon as it sees it.

mod hub;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use hub::{EventHub, Subscription};

use crate::adapters::DialogueHistory;
use crate::config::{ConfigError, RuntimeConfig};
use crate::engine::{Dialogue, TurnEngine, TurnObserver};
use crate::protocol::{Conversation, ConversationalPhrase, EventKind, KnowledgeEvent, TurnTranscript};
use crate::time::{as_secs, secs, Clock};

pub const PROTOCOL_VERSION: u32 = 1;
pub const DEFAULT_SUBSCRIBER_CAPACITY: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameKind {
    SilenceTick,
    KnowledgeChunk,
    PhraseDelta,
    PhraseDone,
    TurnDone,
    Error,
}

/// One frame of the v1 event protocol. Timestamps are seconds from turn
/// start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamEvent {
    pub protocol_version: u32,
    pub session_id: String,
    pub turn_index: usize,
    /// Strictly increasing from 0 within a turn.
    pub seq: u64,
    pub kind: FrameKind,
    /// Knowledge-event or phrase index within the turn.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<f64>,
    /// For phrase frames: the kind of event the phrase answers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<EventKind>,
    /// For `turn_done`: phrase count and TTFT.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ttft: Option<f64>,
}

impl StreamEvent {
    pub fn new(kind: FrameKind) -> Self {
        Self {
            protocol_version: PROTOCOL_VERSION,
            session_id: String::new(),
            turn_index: 0,
            seq: 0,
            kind,
            index: None,
            text: None,
            timestamp: None,
            source: None,
            n: None,
            ttft: None,
        }
    }

    pub fn to_ndjson(&self) -> String {
        serde_json::to_string(self).expect("frame serializes") + "\n"
    }
}

/// Rebuilds the (events, phrases) lists carried by one turn's frames.
pub fn project_frames(frames: &[StreamEvent]) -> (Vec<KnowledgeEvent>, Vec<ConversationalPhrase>) {
    let mut events = Vec::new();
    let mut phrases = Vec::new();
    for f in frames {
        let at = secs(f.timestamp.unwrap_or_default());
        match f.kind {
            FrameKind::SilenceTick | FrameKind::KnowledgeChunk => events.push(KnowledgeEvent {
                seq: f.index.unwrap_or(events.len()),
                kind: if f.kind == FrameKind::SilenceTick { EventKind::Silence } else { EventKind::Chunk },
                text: f.text.clone(),
                timestamp: at,
            }),
            FrameKind::PhraseDone => phrases.push(ConversationalPhrase {
                seq: f.index.unwrap_or(phrases.len()),
                text: f.text.clone().unwrap_or_default(),
                start_timestamp: at,
            }),
            _ => {}
        }
    }
    (events, phrases)
}

/// True when `seq` runs 0, 1, 2, ... with no gaps or repeats.
pub fn seq_contiguous(frames: &[StreamEvent]) -> bool {
    frames.iter().enumerate().all(|(i, f)| f.seq == i as u64)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GatewayError {
    #[error("session {0} not found")]
    SessionNotFound(String),
    #[error("session {0} already has a turn in progress")]
    TurnInProgress(String),
    #[error("utterance is empty")]
    EmptyUtterance,
    #[error(transparent)]
    InvalidConfig(#[from] ConfigError),
}

pub type ClockFactory = Arc<dyn Fn(&RuntimeConfig) -> Arc<dyn Clock> + Send + Sync>;
/// Called on the turn thread after each frame is delivered.
pub type PublishHook = Arc<dyn Fn(&StreamEvent) + Send + Sync>;
pub type EngineFactory =
    Arc<dyn Fn(&RuntimeConfig, Arc<dyn Clock>) -> Result<TurnEngine, ConfigError> + Send + Sync>;

#[derive(Clone)]
pub struct GatewayOptions {
    pub base_config: RuntimeConfig,
    pub subscriber_capacity: usize,
    /// When set, each session's completed turns are written to
    /// `<dir>/<session id>.json` after every turn.
    pub persist_dir: Option<PathBuf>,
    pub clock_factory: Option<ClockFactory>,
    pub engine_factory: Option<EngineFactory>,
    pub publish_hook: Option<PublishHook>,
}

impl GatewayOptions {
    pub fn new(base_config: RuntimeConfig) -> Self {
        Self {
            base_config,
            subscriber_capacity: DEFAULT_SUBSCRIBER_CAPACITY,
            persist_dir: None,
            clock_factory: None,
            engine_factory: None,
            publish_hook: None,
        }
    }
}

/// Config echo returned when a session is created.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub session_id: String,
    pub protocol_version: u32,
    pub created_at: f64,
    pub backend: String,
    pub infill: String,
    pub config: RuntimeConfig,
}

struct Session {
    info: SessionInfo,
    hub: Arc<EventHub>,
    dialogue: Arc<Mutex<Dialogue>>,
    active: Arc<Mutex<bool>>,
    snapshot: Arc<Mutex<(Conversation, DialogueHistory)>>,
}

struct Emitter {
    hub: Arc<EventHub>,
    hook: Option<PublishHook>,
}

impl Emitter {
    fn emit(&self, frame: StreamEvent) {
        let f = self.hub.publish(frame);
        if let Some(h) = &self.hook {
            h(&f);
        }
    }
}

struct HubObserver<'a> {
    out: &'a Emitter,
    events: Vec<EventKind>,
}

impl TurnObserver for HubObserver<'_> {
    fn on_event(&mut self, e: &KnowledgeEvent) {
        self.events.push(e.kind);
        let mut f = StreamEvent::new(match e.kind {
            EventKind::Silence => FrameKind::SilenceTick,
            EventKind::Chunk => FrameKind::KnowledgeChunk,
        });
        f.index = Some(e.seq);
        f.text.clone_from(&e.text);
        f.timestamp = Some(as_secs(e.timestamp));
        self.out.emit(f);
    }

    fn on_phrase(&mut self, p: &ConversationalPhrase) {
        for kind in [FrameKind::PhraseDelta, FrameKind::PhraseDone] {
            let mut f = StreamEvent::new(kind);
            f.index = Some(p.seq);
            f.text = Some(p.text.clone());
            f.timestamp = Some(as_secs(p.start_timestamp));
            f.source = self.events.get(p.seq).copied();
            self.out.emit(f);
        }
    }
}

fn turn_done(t: Option<&TurnTranscript>) -> StreamEvent {
    let mut f = StreamEvent::new(FrameKind::TurnDone);
    if let Some(t) = t {
        f.n = Some(t.n());
        f.ttft = t.ttft().map(as_secs);
        f.text = Some(t.response_text());
    }
    f
}

/// In-memory session registry.
pub struct SessionManager {
    opts: GatewayOptions,
    sessions: RwLock<HashMap<String, Arc<Session>>>,
}

impl SessionManager {
    pub fn new(opts: GatewayOptions) -> Self {
        Self {
            opts,
            sessions: RwLock::new(HashMap::new()),
        }
    }

    pub fn base_config(&self) -> &RuntimeConfig {
        &self.opts.base_config
    }

    fn get(&self, id: &str) -> Result<Arc<Session>, GatewayError> {
        self.sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| GatewayError::SessionNotFound(id.to_string()))
    }

    /// Registers a session with the base config plus dotted-key overrides.
    pub fn create_session(
        &self,
        overrides: &serde_json::Map<String, serde_json::Value>,
    ) -> Result<SessionInfo, GatewayError> {
        let config = self.opts.base_config.with_json_overrides(overrides)?;
        let clock = match &self.opts.clock_factory {
            Some(f) => f(&config),
            None => config.build_clock(),
        };
        let engine = match &self.opts.engine_factory {
            Some(f) => f(&config, clock)?,
            None => config.build_engine(clock)?,
        };
        let id = uuid::Uuid::new_v4().simple().to_string();
        let info = SessionInfo {
            session_id: id.clone(),
            protocol_version: PROTOCOL_VERSION,
            created_at: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0),
            backend: engine.backend().label().to_string(),
            infill: engine.infill().label().to_string(),
            config,
        };
        let conversation = Conversation::new(id.clone(), "session");
        let session = Session {
            info: info.clone(),
            hub: Arc::new(EventHub::new(id.clone(), self.opts.subscriber_capacity)),
            snapshot: Arc::new(Mutex::new((conversation.clone(), DialogueHistory::new()))),
            dialogue: Arc::new(Mutex::new(Dialogue::new(engine, conversation))),
            active: Arc::new(Mutex::new(false)),
        };
        self.sessions.write().unwrap().insert(id, Arc::new(session));
        Ok(info)
    }

    pub fn session_info(&self, id: &str) -> Result<SessionInfo, GatewayError> {
        Ok(self.get(id)?.info.clone())
    }

    /// Starts a turn and returns its index. Frames flow to subscribers.
    pub fn post_utterance(&self, id: &str, text: &str) -> Result<usize, GatewayError> {
        let s = self.get(id)?;
        let text = text.trim().to_string();
        if text.is_empty() {
            return Err(GatewayError::EmptyUtterance);
        }
        {
            let mut active = s.active.lock().unwrap();
            if *active {
                return Err(GatewayError::TurnInProgress(id.to_string()));
            }
            *active = true;
        }
        let turn_index = s.snapshot.lock().unwrap().0.turns().len();
        s.hub.begin_turn(turn_index);
        let out = Emitter {
            hub: s.hub.clone(),
            hook: self.opts.publish_hook.clone(),
        };
        let (dialogue, active, snapshot) = (s.dialogue.clone(), s.active.clone(), s.snapshot.clone());
        let persist = self.opts.persist_dir.clone().map(|d| d.join(format!("{id}.json")));
        std::thread::spawn(move || {
            let mut dialogue = dialogue.lock().unwrap();
            let mut obs = HubObserver {
                out: &out,
                events: Vec::new(),
            };
            let outcome = dialogue.run_turn(&text, &mut obs).cloned();
            *snapshot.lock().unwrap() = (dialogue.conversation().clone(), dialogue.history().clone());
            if let (Ok(_), Some(path)) = (&outcome, &persist) {
                let json = serde_json::to_string_pretty(dialogue.conversation()).expect("conversation serializes");
                if let Err(e) = std::fs::write(path, json) {
                    tracing::error!(path = %path.display(), error = %e, "cannot persist transcript");
                }
            }
            drop(dialogue);
            let done = match &outcome {
                Ok(t) => turn_done(Some(t)),
                Err(e) => {
                    tracing::warn!(error = %e, "turn failed");
                    let mut f = StreamEvent::new(FrameKind::Error);
                    f.text = Some(e.to_string());
                    out.emit(f);
                    turn_done(None)
                }
            };
            // release before the terminal frame so a client reacting to it can post again
            *active.lock().unwrap() = false;
            out.emit(done);
        });
        Ok(turn_index)
    }

    pub fn subscribe(&self, id: &str) -> Result<Subscription, GatewayError> {
        Ok(self.get(id)?.hub.subscribe())
    }

    /// Completed turns so far.
    pub fn transcript(&self, id: &str) -> Result<Conversation, GatewayError> {
        Ok(self.get(id)?.snapshot.lock().unwrap().0.clone())
    }

    /// The backend-side history after the last completed turn.
    pub fn history(&self, id: &str) -> Result<DialogueHistory, GatewayError> {
        Ok(self.get(id)?.snapshot.lock().unwrap().1.clone())
    }

    pub fn is_active(&self, id: &str) -> Result<bool, GatewayError> {
        Ok(*self.get(id)?.active.lock().unwrap())
    }

    /// Polls until the session has no turn in progress.
    pub fn wait_idle(&self, id: &str, timeout: Duration) -> Result<bool, GatewayError> {
        let until = Instant::now() + timeout;
        while self.is_active(id)? {
            if Instant::now() >= until {
                return Ok(false);
            }
            std::thread::sleep(Duration::from_millis(2));
        }
        Ok(true)
    }

    pub fn session_count(&self) -> usize {
        self.sessions.read().unwrap().len()
    }
}
