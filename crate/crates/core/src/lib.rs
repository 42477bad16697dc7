//! Conversational infill runtime.
//!
//! A small, fast infill generator keeps talking to the user while a large
//! backend model streams knowledge in the background. This crate holds the
//! protocol types, the turn engine, the generation-context format, model
//! adapters, entailment checks, dataset tooling, the evaluation harness and
//! the session layer used by the streaming gateway.

pub mod adapters;
pub mod config;
pub mod dataset;
pub mod engine;
pub mod entailment;
pub mod eval;
pub mod gateway;
pub mod prompt;
pub mod protocol;
pub mod queue;
pub mod segment;
pub mod time;

pub use engine::{Dialogue, SilencePolicy, TurnEngine, TurnError, TurnObserver};
pub use protocol::{
    Conversation, ConversationalPhrase, Domain, EventKind, KnowledgeEvent, ProtocolError,
    TurnState, TurnTranscript,
};
pub use time::{as_secs, secs, Clock, SystemClock, VirtualClock};
