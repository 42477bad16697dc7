//! Generation-context format.
//!
//! The infill generator sees one turn as an interleaved chat transcript:
//! the user utterance once, then alternating `knowledge` and `assistant`
//! messages, ending with the knowledge message it must answer. Silence
//! events render as the literal [`SILENCE_TOKEN`].
//!
//! Each message is framed as
//!
//! ```text
//! <|im_start|>{role}\n{content}<|im_end|>\n
//! ```
//!
//! with roles `user`, `knowledge` and `assistant`. The frame markers and the
//! silence literal are reserved: protocol types refuse text containing them,
//! which keeps rendering injective and parsing unambiguous.

use serde_json::Value;
use thiserror::Error;

use crate::protocol::{EventKind, TurnState};

pub const SILENCE_TOKEN: &str = "<|sil|>";
pub const MSG_START: &str = "<|im_start|>";
pub const MSG_END: &str = "<|im_end|>";

const RESERVED: [&str; 3] = [SILENCE_TOKEN, MSG_START, MSG_END];

/// Returns the first reserved marker contained in `text`.
pub fn find_reserved(text: &str) -> Option<&'static str> {
    RESERVED.into_iter().find(|m| text.contains(m))
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("turn has no unanswered event")]
    NotPending,
    #[error("schema error: {0}")]
    Schema(String),
    #[error("turn {turn}: {responder} responder sentences but {thoughts} thoughts")]
    Alignment {
        turn: usize,
        responder: usize,
        thoughts: usize,
    },
    #[error("malformed context: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    User,
    Assistant,
    Knowledge,
}

impl Role {
    pub fn tag(self) -> &'static str {
        match self {
            Role::User => "user",
            Role::Assistant => "assistant",
            Role::Knowledge => "knowledge",
        }
    }

    fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "user" => Some(Role::User),
            "assistant" => Some(Role::Assistant),
            "knowledge" => Some(Role::Knowledge),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoleTaggedMessage {
    pub role: Role,
    pub content: String,
}

impl RoleTaggedMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
        }
    }

    pub fn is_silence(&self) -> bool {
        self.role == Role::Knowledge && self.content == SILENCE_TOKEN
    }
}

pub fn render_messages(messages: &[RoleTaggedMessage]) -> String {
    let mut out = String::new();
    for m in messages {
        out.push_str(MSG_START);
        out.push_str(m.role.tag());
        out.push('\n');
        out.push_str(&m.content);
        out.push_str(MSG_END);
        out.push('\n');
    }
    out
}

/// Header appended by completion endpoints to request the next phrase.
pub fn generation_header() -> String {
    format!("{MSG_START}{}\n", Role::Assistant.tag())
}

/// Messages of an open turn with one pending event.
pub fn context_messages(state: &TurnState) -> Result<Vec<RoleTaggedMessage>, PromptError> {
    if state.pending_event().is_none() {
        return Err(PromptError::NotPending);
    }
    let mut msgs = Vec::with_capacity(1 + 2 * state.events().len());
    msgs.push(RoleTaggedMessage::new(Role::User, state.user_utterance()));
    for (i, e) in state.events().iter().enumerate() {
        msgs.push(RoleTaggedMessage::new(Role::Knowledge, e.context_text()));
        if let Some(p) = state.phrases().get(i) {
            msgs.push(RoleTaggedMessage::new(Role::Assistant, p.text.as_str()));
        }
    }
    Ok(msgs)
}

/// Renders the generation context for the pending event of `state`.
pub fn render_context(state: &TurnState) -> Result<String, PromptError> {
    context_messages(state).map(|m| render_messages(&m))
}

/// Context for a small model prompted with the bare question, no knowledge.
pub fn render_user_only(utterance: &str) -> String {
    render_messages(&[RoleTaggedMessage::new(Role::User, utterance.trim())])
}

/// Splits a rendered document back into messages.
pub fn parse_messages(rendered: &str) -> Result<Vec<RoleTaggedMessage>, PromptError> {
    let mut rest = rendered;
    let mut out = Vec::new();
    while !rest.is_empty() {
        let Some(after_start) = rest.strip_prefix(MSG_START) else {
            return Err(PromptError::Malformed(format!(
                "expected {MSG_START} at byte {}",
                rendered.len() - rest.len()
            )));
        };
        let (tag, body) = after_start
            .split_once('\n')
            .ok_or_else(|| PromptError::Malformed("missing role line".into()))?;
        let role = Role::from_tag(tag)
            .ok_or_else(|| PromptError::Malformed(format!("unknown role {tag:?}")))?;
        let end = body
            .find(MSG_END)
            .ok_or_else(|| PromptError::Malformed("unterminated message".into()))?;
        out.push(RoleTaggedMessage::new(role, &body[..end]));
        rest = body[end + MSG_END.len()..]
            .strip_prefix('\n')
            .ok_or_else(|| PromptError::Malformed("missing newline after message".into()))?;
    }
    Ok(out)
}

/// One knowledge slot of a turn, without timing.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum KnowledgeSlot {
    Silence,
    Chunk(String),
}

impl KnowledgeSlot {
    pub fn from_text(text: &str) -> Self {
        if text.trim() == SILENCE_TOKEN {
            KnowledgeSlot::Silence
        } else {
            KnowledgeSlot::Chunk(text.to_string())
        }
    }

    pub fn kind(&self) -> EventKind {
        match self {
            KnowledgeSlot::Silence => EventKind::Silence,
            KnowledgeSlot::Chunk(_) => EventKind::Chunk,
        }
    }

    pub fn text(&self) -> Option<&str> {
        match self {
            KnowledgeSlot::Silence => None,
            KnowledgeSlot::Chunk(t) => Some(t),
        }
    }

    pub fn context_text(&self) -> &str {
        self.text().unwrap_or(SILENCE_TOKEN)
    }
}

/// Timing-free view of a turn: what the generation format carries.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TurnRecord {
    pub user: String,
    pub events: Vec<KnowledgeSlot>,
    pub phrases: Vec<String>,
}

impl TurnRecord {
    pub fn of_state(state: &TurnState) -> Self {
        Self {
            user: state.user_utterance().to_string(),
            events: state
                .events()
                .iter()
                .map(|e| match e.kind {
                    EventKind::Silence => KnowledgeSlot::Silence,
                    EventKind::Chunk => KnowledgeSlot::Chunk(e.text.clone().unwrap_or_default()),
                })
                .collect(),
            phrases: state.phrases().iter().map(|p| p.text.clone()).collect(),
        }
    }

    /// Replays the record into an open [`TurnState`] with zeroed timestamps.
    pub fn to_state(&self) -> Result<TurnState, crate::protocol::ProtocolError> {
        let mut state = TurnState::open(&self.user)?;
        for (i, e) in self.events.iter().enumerate() {
            state.append_event(e.kind(), e.text(), Default::default())?;
            if let Some(p) = self.phrases.get(i) {
                state.append_phrase(p, Default::default())?;
            }
        }
        Ok(state)
    }

    /// The record truncated to the context for phrase `j`: events `0..=j`
    /// and phrases `0..j`.
    pub fn prefix_for(&self, j: usize) -> TurnRecord {
        TurnRecord {
            user: self.user.clone(),
            events: self.events[..=j].to_vec(),
            phrases: self.phrases[..j].to_vec(),
        }
    }

    pub fn render_context(&self) -> Result<String, PromptError> {
        if self.events.len() != self.phrases.len() + 1 {
            return Err(PromptError::NotPending);
        }
        let mut msgs = vec![RoleTaggedMessage::new(Role::User, self.user.as_str())];
        for (i, e) in self.events.iter().enumerate() {
            msgs.push(RoleTaggedMessage::new(Role::Knowledge, e.context_text()));
            if let Some(p) = self.phrases.get(i) {
                msgs.push(RoleTaggedMessage::new(Role::Assistant, p.as_str()));
            }
        }
        Ok(render_messages(&msgs))
    }
}

/// Parses a rendered generation context (one user message, then alternating
/// knowledge/assistant, optionally ending on either).
pub fn parse_context(rendered: &str) -> Result<TurnRecord, PromptError> {
    let msgs = parse_messages(rendered)?;
    let mut it = msgs.into_iter();
    let user = match it.next() {
        Some(m) if m.role == Role::User => m.content,
        _ => return Err(PromptError::Malformed("context must open with a user message".into())),
    };
    let mut rec = TurnRecord {
        user,
        ..Default::default()
    };
    for (i, m) in it.enumerate() {
        let expected = if i % 2 == 0 { Role::Knowledge } else { Role::Assistant };
        if m.role != expected {
            return Err(PromptError::Malformed(format!(
                "message {} has role {}, expected {}",
                i + 1,
                m.role.tag(),
                expected.tag()
            )));
        }
        match m.role {
            Role::Knowledge => rec.events.push(KnowledgeSlot::from_text(&m.content)),
            _ => rec.phrases.push(m.content),
        }
    }
    Ok(rec)
}

fn str_list(turn: &Value, field: &str, idx: usize) -> Result<Vec<String>, PromptError> {
    let arr = turn
        .get(field)
        .and_then(Value::as_array)
        .ok_or_else(|| PromptError::Schema(format!("turn {idx}: missing list field {field:?}")))?;
    arr.iter()
        .map(|v| {
            v.as_str().map(str::to_string).ok_or_else(|| {
                PromptError::Schema(format!("turn {idx}: {field:?} entries must be strings"))
            })
        })
        .collect()
}

/// Parses a dataset conversation document (`turns[].user`, `responder`,
/// `responder_thoughts`) into aligned turn records.
pub fn parse_transcript(document: &str) -> Result<Vec<TurnRecord>, PromptError> {
    let doc: Value =
        serde_json::from_str(document).map_err(|e| PromptError::Schema(e.to_string()))?;
    let turns = doc
        .get("turns")
        .and_then(Value::as_array)
        .ok_or_else(|| PromptError::Schema("missing list field \"turns\"".into()))?;
    turns
        .iter()
        .enumerate()
        .map(|(idx, turn)| {
            let user = turn
                .get("user")
                .and_then(Value::as_str)
                .ok_or_else(|| PromptError::Schema(format!("turn {idx}: missing field \"user\"")))?;
            let responder = str_list(turn, "responder", idx)?;
            let thoughts = str_list(turn, "responder_thoughts", idx)?;
            if responder.len() != thoughts.len() {
                return Err(PromptError::Alignment {
                    turn: idx,
                    responder: responder.len(),
                    thoughts: thoughts.len(),
                });
            }
            Ok(TurnRecord {
                user: user.to_string(),
                events: thoughts.iter().map(|t| KnowledgeSlot::from_text(t)).collect(),
                phrases: responder,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::secs;

    #[test]
    fn first_silence_context() {
        let mut s = TurnState::open("U").unwrap();
        s.push_silence(secs(1.0)).unwrap();
        let msgs = context_messages(&s).unwrap();
        assert_eq!(
            msgs,
            vec![
                RoleTaggedMessage::new(Role::User, "U"),
                RoleTaggedMessage::new(Role::Knowledge, SILENCE_TOKEN),
            ]
        );
        assert_eq!(
            render_context(&s).unwrap(),
            "<|im_start|>user\nU<|im_end|>\n<|im_start|>knowledge\n<|sil|><|im_end|>\n"
        );
    }

    #[test]
    fn chunk_then_silence_context() {
        let chunk = "Jack Nicklaus is indeed one of the most successful Masters winners. \
                     His wins were between 1963 and 1986";
        let mut s = TurnState::open("Who won the most Masters?").unwrap();
        s.push_chunk(chunk, secs(0.8)).unwrap();
        s.append_phrase(
            "He had a string of amazing wins, from 1963 to 1986, which are impressive indeed.",
            secs(0.95),
        )
        .unwrap();
        s.push_silence(secs(1.8)).unwrap();
        let msgs = context_messages(&s).unwrap();
        assert_eq!(msgs.len(), 4);
        assert_eq!(msgs[1].content, chunk);
        assert_eq!(msgs[2].role, Role::Assistant);
        assert!(msgs[3].is_silence());
    }

    #[test]
    fn not_pending() {
        let s = TurnState::open("U").unwrap();
        assert_eq!(render_context(&s), Err(PromptError::NotPending));
    }

    #[test]
    fn parse_rejects_bad_structure() {
        assert!(parse_context("hello").is_err());
        assert!(parse_context("<|im_start|>knowledge\nx<|im_end|>\n").is_err());
        let two_knowledge = "<|im_start|>user\nU<|im_end|>\n<|im_start|>knowledge\na<|im_end|>\n<|im_start|>knowledge\nb<|im_end|>\n";
        assert!(parse_context(two_knowledge).is_err());
        assert!(parse_messages("<|im_start|>user\nU").is_err());
    }

    #[test]
    fn transcript_alignment_error() {
        let doc = r#"{"turns":[{"user":"u","responder":["a","b","c"],"responder_thoughts":["x","y"]}]}"#;
        assert_eq!(
            parse_transcript(doc),
            Err(PromptError::Alignment { turn: 0, responder: 3, thoughts: 2 })
        );
    }

    #[test]
    fn transcript_marker_mapping() {
        let doc = r#"{"turns":[{"user":"u","responder":["Hmm.","It is Everest."],"responder_thoughts":["<|sil|>","chunk text"]}]}"#;
        let recs = parse_transcript(doc).unwrap();
        assert_eq!(
            recs[0].events,
            vec![KnowledgeSlot::Silence, KnowledgeSlot::Chunk("chunk text".into())]
        );
    }

    #[test]
    fn transcript_schema_errors() {
        assert!(matches!(parse_transcript("{}"), Err(PromptError::Schema(_))));
        let doc = r#"{"turns":[{"responder":[],"responder_thoughts":[]}]}"#;
        assert!(matches!(parse_transcript(doc), Err(PromptError::Schema(_))));
    }
}
