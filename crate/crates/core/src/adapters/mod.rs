//! Generation back-ends.
//!
//! A [`Backend`] is the conversation-level knowledge source: it sees the whole
//! dialogue history and streams text into a [`KnowledgeSink`]. An [`Infill`]
//! generator is the turn-level phrase producer: it sees one rendered context
//! and returns one phrase. Both come in scripted (deterministic, clock
//! driven) and HTTP flavours.

mod history;
pub mod http;
pub mod scripted;

use std::time::Duration;

use thiserror::Error;

pub use history::{DialogueHistory, HistoryError, HistoryMessage, Speaker};
pub use http::{HttpBackend, HttpBackendConfig, HttpInfill, HttpInfillConfig};
pub use scripted::{PhraseMode, ScriptedBackend, ScriptedChunk, ScriptedInfill, ScriptedSchedule};

use crate::prompt::SILENCE_TOKEN;
use crate::queue::KnowledgeSink;
use crate::time::Clock;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("network error: {0}")]
    Network(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("provider error: {0}")]
    Provider(String),
    #[error("backend stream stalled with nothing scheduled")]
    Stalled,
    #[error("invalid backend configuration: {0}")]
    Config(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum InfillError {
    #[error("network error: {0}")]
    Network(String),
    #[error("could not parse completion: {0}")]
    Parse(String),
    #[error("infill returned an empty phrase")]
    Empty,
    #[error("infill returned the silence literal")]
    SilenceLiteral,
}

pub trait Backend: Send + Sync {
    fn label(&self) -> &str;

    /// Starts streaming an answer to the last user message of `history`.
    /// Returns once the stream is set up; the stream itself must eventually
    /// finish or fail through `sink`.
    fn start_turn(&self, history: &DialogueHistory, sink: KnowledgeSink) -> Result<(), BackendError>;
}

/// One-shot, non-streaming completion, used for dataset generation.
pub trait TextGenerator: Send + Sync {
    fn complete(&self, system_prompt: Option<&str>, history: &DialogueHistory) -> Result<String, BackendError>;
}

/// A generated phrase with its timing, in the caller's clock.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Generation {
    pub text: String,
    pub started: Duration,
    pub first_output: Duration,
}

pub trait Infill: Send + Sync {
    fn label(&self) -> &str;

    fn generate(&self, context: &str, clock: &dyn Clock) -> Result<Generation, InfillError>;
}

/// Checks that a phrase is usable: trimmed, non-empty, no silence literal.
pub fn validate_phrase(text: &str) -> Result<String, InfillError> {
    let t = text.trim();
    if t.contains(SILENCE_TOKEN) {
        return Err(InfillError::SilenceLiteral);
    }
    if t.is_empty() {
        return Err(InfillError::Empty);
    }
    Ok(t.to_string())
}
