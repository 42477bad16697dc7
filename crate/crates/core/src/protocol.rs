//! Domain types of the conversational-infill protocol.
//!
//! A turn is one user utterance, the ordered list of knowledge events the
//! infill generator saw (backend chunks or silence markers), and the phrases
//! it produced. Events and phrases strictly alternate: a new event may only
//! be appended once the previous one has been answered, so at every point
//! `phrases <= events <= phrases + 1`, and a closed turn has exactly one
//! phrase per event.

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::{find_reserved, SILENCE_TOKEN};
use crate::time::serde_secs;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("user utterance is empty")]
    EmptyUtterance,
    #[error("protocol violation: {reason} (events={events}, phrases={phrases})")]
    ProtocolViolation {
        reason: &'static str,
        events: usize,
        phrases: usize,
    },
    #[error("knowledge chunk text is empty")]
    InvalidChunk,
    #[error("silence events carry no text")]
    SilenceWithText,
    #[error("phrase text is empty")]
    EmptyPhrase,
    #[error("text contains reserved marker {0:?}")]
    ReservedMarker(&'static str),
    #[error("timestamp {got:?} precedes {floor:?}")]
    TimestampOrder { got: Duration, floor: Duration },
    #[error("turn is closed")]
    ClosedTurn,
    #[error("turn is unbalanced: {events} events but {phrases} phrases")]
    UnbalancedTurn { events: usize, phrases: usize },
    #[error("malformed transcript: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Chunk,
    Silence,
}

/// One element of the external stream seen by the infill generator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeEvent {
    pub seq: usize,
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(with = "serde_secs")]
    pub timestamp: Duration,
}

impl KnowledgeEvent {
    pub fn is_silence(&self) -> bool {
        self.kind == EventKind::Silence
    }

    /// Text as it appears in a generation context: the chunk itself, or the
    /// silence literal.
    pub fn context_text(&self) -> &str {
        match self.kind {
            EventKind::Silence => SILENCE_TOKEN,
            EventKind::Chunk => self.text.as_deref().unwrap_or_default(),
        }
    }
}

/// One infill output, conditioned on the event with the same `seq`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationalPhrase {
    pub seq: usize,
    pub text: String,
    /// Time the phrase's first output became available.
    #[serde(with = "serde_secs")]
    pub start_timestamp: Duration,
}

impl ConversationalPhrase {
    pub fn source_event_seq(&self) -> usize {
        self.seq
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TurnStatus {
    Open,
    Closed,
}

/// The mutable record of a turn in progress. Single writer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TurnState {
    user_utterance: String,
    events: Vec<KnowledgeEvent>,
    phrases: Vec<ConversationalPhrase>,
    status: TurnStatus,
}

fn check_reserved(text: &str) -> Result<(), ProtocolError> {
    match find_reserved(text) {
        Some(marker) => Err(ProtocolError::ReservedMarker(marker)),
        None => Ok(()),
    }
}

impl TurnState {
    /// Opens a turn for a (trimmed) user utterance.
    pub fn open(user_utterance: &str) -> Result<Self, ProtocolError> {
        let utterance = user_utterance.trim();
        if utterance.is_empty() {
            return Err(ProtocolError::EmptyUtterance);
        }
        check_reserved(utterance)?;
        Ok(Self {
            user_utterance: utterance.to_string(),
            events: Vec::new(),
            phrases: Vec::new(),
            status: TurnStatus::Open,
        })
    }

    pub fn user_utterance(&self) -> &str {
        &self.user_utterance
    }

    pub fn events(&self) -> &[KnowledgeEvent] {
        &self.events
    }

    pub fn phrases(&self) -> &[ConversationalPhrase] {
        &self.phrases
    }

    pub fn status(&self) -> TurnStatus {
        self.status
    }

    /// The event awaiting a phrase, if any.
    pub fn pending_event(&self) -> Option<&KnowledgeEvent> {
        if self.events.len() == self.phrases.len() + 1 {
            self.events.last()
        } else {
            None
        }
    }

    fn ensure_open(&self) -> Result<(), ProtocolError> {
        match self.status {
            TurnStatus::Open => Ok(()),
            TurnStatus::Closed => Err(ProtocolError::ClosedTurn),
        }
    }

    fn violation(&self, reason: &'static str) -> ProtocolError {
        ProtocolError::ProtocolViolation {
            reason,
            events: self.events.len(),
            phrases: self.phrases.len(),
        }
    }

    /// Appends the next event and returns its sequence number.
    pub fn append_event(
        &mut self,
        kind: EventKind,
        text: Option<&str>,
        timestamp: Duration,
    ) -> Result<usize, ProtocolError> {
        self.ensure_open()?;
        if self.events.len() != self.phrases.len() {
            return Err(self.violation("previous event has not been answered"));
        }
        let text = match kind {
            EventKind::Chunk => {
                let t = text.map(str::trim).unwrap_or_default();
                if t.is_empty() {
                    return Err(ProtocolError::InvalidChunk);
                }
                check_reserved(t)?;
                Some(t.to_string())
            }
            EventKind::Silence => {
                if text.is_some_and(|t| !t.trim().is_empty()) {
                    return Err(ProtocolError::SilenceWithText);
                }
                None
            }
        };
        if let Some(last) = self.events.last() {
            if timestamp < last.timestamp {
                return Err(ProtocolError::TimestampOrder {
                    got: timestamp,
                    floor: last.timestamp,
                });
            }
        }
        let seq = self.events.len();
        self.events.push(KnowledgeEvent {
            seq,
            kind,
            text,
            timestamp,
        });
        Ok(seq)
    }

    pub fn push_chunk(&mut self, text: &str, timestamp: Duration) -> Result<usize, ProtocolError> {
        self.append_event(EventKind::Chunk, Some(text), timestamp)
    }

    pub fn push_silence(&mut self, timestamp: Duration) -> Result<usize, ProtocolError> {
        self.append_event(EventKind::Silence, None, timestamp)
    }

    /// Answers the pending event with a phrase; returns the phrase's `seq`.
    pub fn append_phrase(
        &mut self,
        text: &str,
        start_timestamp: Duration,
    ) -> Result<usize, ProtocolError> {
        self.ensure_open()?;
        let Some(event) = self.pending_event() else {
            return Err(self.violation("no unanswered event"));
        };
        let floor = event.timestamp;
        let text = text.trim();
        if text.is_empty() {
            return Err(ProtocolError::EmptyPhrase);
        }
        check_reserved(text)?;
        if start_timestamp < floor {
            return Err(ProtocolError::TimestampOrder {
                got: start_timestamp,
                floor,
            });
        }
        if let Some(prev) = self.phrases.last() {
            if start_timestamp < prev.start_timestamp {
                return Err(ProtocolError::TimestampOrder {
                    got: start_timestamp,
                    floor: prev.start_timestamp,
                });
            }
        }
        let seq = self.phrases.len();
        self.phrases.push(ConversationalPhrase {
            seq,
            text: text.to_string(),
            start_timestamp,
        });
        Ok(seq)
    }

    /// Closes the turn. Fails, leaving the turn open, unless every event has
    /// been answered.
    pub fn close(&mut self) -> Result<TurnTranscript, ProtocolError> {
        self.ensure_open()?;
        if self.events.len() != self.phrases.len() {
            return Err(ProtocolError::UnbalancedTurn {
                events: self.events.len(),
                phrases: self.phrases.len(),
            });
        }
        self.status = TurnStatus::Closed;
        Ok(TurnTranscript {
            turn_index: 0,
            user: self.user_utterance.clone(),
            events: self.events.clone(),
            phrases: self.phrases.clone(),
            ttft: self.phrases.first().map(|p| p.start_timestamp),
        })
    }

    /// Balanced snapshot of an open turn: everything up to the last answered
    /// event. Used when a turn has to be abandoned mid-flight.
    pub fn balanced_prefix(&self) -> TurnTranscript {
        let n = self.phrases.len();
        TurnTranscript {
            turn_index: 0,
            user: self.user_utterance.clone(),
            events: self.events[..n].to_vec(),
            phrases: self.phrases.clone(),
            ttft: self.phrases.first().map(|p| p.start_timestamp),
        }
    }
}

/// Immutable record of a closed turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "TranscriptRepr", into = "TranscriptRepr")]
pub struct TurnTranscript {
    turn_index: usize,
    user: String,
    events: Vec<KnowledgeEvent>,
    phrases: Vec<ConversationalPhrase>,
    ttft: Option<Duration>,
}

impl TurnTranscript {
    pub fn turn_index(&self) -> usize {
        self.turn_index
    }

    pub fn user(&self) -> &str {
        &self.user
    }

    pub fn events(&self) -> &[KnowledgeEvent] {
        &self.events
    }

    pub fn phrases(&self) -> &[ConversationalPhrase] {
        &self.phrases
    }

    /// Number of event/phrase pairs.
    pub fn n(&self) -> usize {
        self.phrases.len()
    }

    pub fn ttft(&self) -> Option<Duration> {
        self.ttft
    }

    pub fn silence_count(&self) -> usize {
        self.events.iter().filter(|e| e.is_silence()).count()
    }

    pub fn chunk_count(&self) -> usize {
        self.events.len() - self.silence_count()
    }

    /// Phrases joined by single spaces: what the user heard.
    pub fn response_text(&self) -> String {
        self.phrases
            .iter()
            .map(|p| p.text.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn with_index(mut self, turn_index: usize) -> Self {
        self.turn_index = turn_index;
        self
    }

    /// Rebuilds a transcript through the [`TurnState`] state machine, so the
    /// result satisfies every protocol invariant.
    pub fn from_parts(
        user: &str,
        events: &[KnowledgeEvent],
        phrases: &[ConversationalPhrase],
    ) -> Result<Self, ProtocolError> {
        if events.len() != phrases.len() {
            return Err(ProtocolError::UnbalancedTurn {
                events: events.len(),
                phrases: phrases.len(),
            });
        }
        let mut state = TurnState::open(user)?;
        for (i, (e, p)) in events.iter().zip(phrases).enumerate() {
            if e.seq != i || p.seq != i {
                return Err(ProtocolError::Malformed(format!(
                    "sequence numbers must be consecutive from 0 (position {i})"
                )));
            }
            state.append_event(e.kind, e.text.as_deref(), e.timestamp)?;
            state.append_phrase(&p.text, p.start_timestamp)?;
        }
        state.close()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("transcript serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, ProtocolError> {
        serde_json::from_str(s).map_err(|e| ProtocolError::Malformed(e.to_string()))
    }
}

#[derive(Serialize, Deserialize)]
struct TranscriptRepr {
    #[serde(default)]
    turn_index: usize,
    user: String,
    events: Vec<KnowledgeEvent>,
    phrases: Vec<ConversationalPhrase>,
    #[serde(default, with = "serde_secs::option", skip_serializing_if = "Option::is_none")]
    ttft: Option<Duration>,
}

impl From<TurnTranscript> for TranscriptRepr {
    fn from(t: TurnTranscript) -> Self {
        Self {
            turn_index: t.turn_index,
            user: t.user,
            events: t.events,
            phrases: t.phrases,
            ttft: t.ttft,
        }
    }
}

impl TryFrom<TranscriptRepr> for TurnTranscript {
    type Error = ProtocolError;

    fn try_from(r: TranscriptRepr) -> Result<Self, Self::Error> {
        let t = TurnTranscript::from_parts(&r.user, &r.events, &r.phrases)?;
        Ok(t.with_index(r.turn_index))
    }
}

/// The six generation domains; conversations may also carry free-form labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Advice,
    Assistant,
    Education,
    Planning,
    CustomerService,
    Medical,
}

impl Domain {
    pub const ALL: [Domain; 6] = [
        Domain::Advice,
        Domain::Assistant,
        Domain::Education,
        Domain::Planning,
        Domain::CustomerService,
        Domain::Medical,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Advice => "advice",
            Domain::Assistant => "assistant",
            Domain::Education => "education",
            Domain::Planning => "planning",
            Domain::CustomerService => "customer_service",
            Domain::Medical => "medical",
        }
    }

    /// Persona-seeded domains; the others are seeded with subtopics.
    pub fn uses_personas(self) -> bool {
        matches!(
            self,
            Domain::Medical | Domain::CustomerService | Domain::Education
        )
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Domain {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        Domain::ALL
            .into_iter()
            .find(|d| d.as_str() == norm)
            .ok_or_else(|| format!("unknown domain {s:?}"))
    }
}

/// A sequence of closed turns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ConversationRepr", into = "ConversationRepr")]
pub struct Conversation {
    id: String,
    domain_label: String,
    turns: Vec<TurnTranscript>,
}

impl Conversation {
    pub fn new(id: impl Into<String>, domain_label: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            domain_label: domain_label.into(),
            turns: Vec::new(),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn domain_label(&self) -> &str {
        &self.domain_label
    }

    pub fn turns(&self) -> &[TurnTranscript] {
        &self.turns
    }

    /// Appends a turn, assigning it the next index.
    pub fn push_turn(&mut self, turn: TurnTranscript) -> usize {
        let idx = self.turns.len();
        self.turns.push(turn.with_index(idx));
        idx
    }
}

#[derive(Serialize, Deserialize)]
struct ConversationRepr {
    id: String,
    #[serde(default)]
    domain_label: String,
    turns: Vec<TurnTranscript>,
}

impl From<Conversation> for ConversationRepr {
    fn from(c: Conversation) -> Self {
        Self {
            id: c.id,
            domain_label: c.domain_label,
            turns: c.turns,
        }
    }
}

impl TryFrom<ConversationRepr> for Conversation {
    type Error = ProtocolError;

    fn try_from(r: ConversationRepr) -> Result<Self, Self::Error> {
        for (i, t) in r.turns.iter().enumerate() {
            if t.turn_index != i {
                return Err(ProtocolError::Malformed(format!(
                    "turn_index {} at position {i}",
                    t.turn_index
                )));
            }
        }
        Ok(Self {
            id: r.id,
            domain_label: r.domain_label,
            turns: r.turns,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::secs;

    #[test]
    fn open_trims_and_rejects_blank() {
        let s = TurnState::open("  hi ").unwrap();
        assert_eq!(s.user_utterance(), "hi");
        assert!(s.events().is_empty() && s.phrases().is_empty());
        assert_eq!(s.status(), TurnStatus::Open);
        assert_eq!(TurnState::open(""), Err(ProtocolError::EmptyUtterance));
        assert_eq!(TurnState::open(" \n\t"), Err(ProtocolError::EmptyUtterance));
    }

    #[test]
    fn first_event_and_phrase() {
        let mut s = TurnState::open("What's the weather in Tokyo?").unwrap();
        assert_eq!(s.push_chunk("Tokyo will be rainy.", secs(2.1)), Ok(0));
        assert_eq!(
            s.append_phrase("Let me check the forecast for Tokyo...", secs(2.26)),
            Ok(0)
        );
        assert_eq!(s.phrases()[0].source_event_seq(), 0);
    }

    #[test]
    fn silence_has_no_text() {
        let mut s = TurnState::open("q").unwrap();
        let seq = s.append_event(EventKind::Silence, None, secs(1.0)).unwrap();
        assert_eq!(seq, 0);
        assert_eq!(s.events()[0].kind, EventKind::Silence);
        assert_eq!(s.events()[0].text, None);
        let mut s = TurnState::open("q").unwrap();
        assert_eq!(
            s.append_event(EventKind::Silence, Some("x"), secs(1.0)),
            Err(ProtocolError::SilenceWithText)
        );
    }

    #[test]
    fn strict_alternation() {
        let mut s = TurnState::open("q").unwrap();
        s.push_silence(secs(1.0)).unwrap();
        assert!(matches!(
            s.push_silence(secs(3.1)),
            Err(ProtocolError::ProtocolViolation { .. })
        ));
        s.append_phrase("One moment.", secs(1.15)).unwrap();
        assert!(matches!(
            s.append_phrase("again", secs(1.2)),
            Err(ProtocolError::ProtocolViolation { .. })
        ));
    }

    #[test]
    fn chunk_validation() {
        let mut s = TurnState::open("q").unwrap();
        assert_eq!(
            s.push_chunk("   ", secs(0.0)),
            Err(ProtocolError::InvalidChunk)
        );
        assert_eq!(
            s.push_chunk("a <|sil|> b", secs(0.0)),
            Err(ProtocolError::ReservedMarker(SILENCE_TOKEN))
        );
        s.push_chunk("ok.", secs(1.0)).unwrap();
        assert_eq!(s.append_phrase("  ", secs(1.0)), Err(ProtocolError::EmptyPhrase));
        assert!(matches!(
            s.append_phrase("early", secs(0.5)),
            Err(ProtocolError::TimestampOrder { .. })
        ));
    }

    #[test]
    fn close_requires_balance() {
        let mut s = TurnState::open("q").unwrap();
        for i in 0..3 {
            s.push_silence(secs(i as f64)).unwrap();
            s.append_phrase("p", secs(i as f64 + 0.1)).unwrap();
        }
        let t = s.close().unwrap();
        assert_eq!(t.n(), 3);
        assert_eq!(t.ttft(), Some(secs(0.1)));
        assert_eq!(s.status(), TurnStatus::Closed);
        assert_eq!(s.push_silence(secs(9.0)), Err(ProtocolError::ClosedTurn));

        let mut s = TurnState::open("q").unwrap();
        s.push_silence(secs(0.0)).unwrap();
        s.append_phrase("p", secs(0.1)).unwrap();
        s.push_silence(secs(1.0)).unwrap();
        assert_eq!(
            s.close(),
            Err(ProtocolError::UnbalancedTurn { events: 2, phrases: 1 })
        );
        assert_eq!(s.status(), TurnStatus::Open);
    }

    #[test]
    fn empty_turn_closes() {
        let t = TurnState::open("q").unwrap().close().unwrap();
        assert_eq!(t.n(), 0);
        assert_eq!(t.ttft(), None);
    }

    #[test]
    fn transcript_json_field_names() {
        let mut s = TurnState::open("Tallest mountain?").unwrap();
        s.push_silence(secs(1.0)).unwrap();
        s.append_phrase("One moment.", secs(1.15)).unwrap();
        s.push_chunk("It is Everest.", secs(2.5)).unwrap();
        s.append_phrase("It is Everest.", secs(2.65)).unwrap();
        let t = s.close().unwrap();
        let v: serde_json::Value = serde_json::from_str(&t.to_json()).unwrap();
        assert_eq!(v["user"], "Tallest mountain?");
        assert_eq!(v["events"][0]["kind"], "silence");
        assert!(v["events"][0].get("text").is_none());
        assert_eq!(v["events"][1]["text"], "It is Everest.");
        assert_eq!(v["events"][1]["timestamp"], 2.5);
        assert_eq!(v["phrases"][1]["start_timestamp"], 2.65);
        assert_eq!(v["phrases"][1]["seq"], 1);
        assert_eq!(TurnTranscript::from_json(&t.to_json()).unwrap(), t);
    }

    #[test]
    fn transcript_json_rejects_unbalanced() {
        let doc = r#"{"user":"q","events":[{"seq":0,"kind":"silence","timestamp":1.0}],"phrases":[]}"#;
        assert!(TurnTranscript::from_json(doc).is_err());
    }

    #[test]
    fn domain_parsing() {
        assert_eq!("customer-service".parse::<Domain>(), Ok(Domain::CustomerService));
        assert_eq!("Medical".parse::<Domain>(), Ok(Domain::Medical));
        assert!("cooking".parse::<Domain>().is_err());
    }
}
