use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    Assistant,
}

impl Speaker {
    pub fn as_str(self) -> &'static str {
        match self {
            Speaker::User => "user",
            Speaker::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryMessage {
    pub role: Speaker,
    pub text: String,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("history must alternate user/assistant starting with user; cannot append {0:?}")]
pub struct HistoryError(pub Speaker);

/// Backend-side dialogue history. Alternates user/assistant, starting with
/// the user.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueHistory {
    messages: Vec<HistoryMessage>,
}

impl DialogueHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn messages(&self) -> &[HistoryMessage] {
        &self.messages
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    fn next_speaker(&self) -> Speaker {
        match self.messages.last() {
            Some(m) if m.role == Speaker::User => Speaker::Assistant,
            _ => Speaker::User,
        }
    }

    pub fn push(&mut self, role: Speaker, text: impl Into<String>) -> Result<(), HistoryError> {
        if role != self.next_speaker() {
            return Err(HistoryError(role));
        }
        self.messages.push(HistoryMessage {
            role,
            text: text.into(),
        });
        Ok(())
    }

    pub fn push_user(&mut self, text: impl Into<String>) -> Result<(), HistoryError> {
        self.push(Speaker::User, text)
    }

    pub fn push_assistant(&mut self, text: impl Into<String>) -> Result<(), HistoryError> {
        self.push(Speaker::Assistant, text)
    }

    /// Drops a trailing user message (a turn that never completed).
    pub fn pop_pending_user(&mut self) -> Option<HistoryMessage> {
        if self.messages.last().is_some_and(|m| m.role == Speaker::User) {
            self.messages.pop()
        } else {
            None
        }
    }

    /// The most recent user message, i.e. the utterance being answered.
    pub fn last_user(&self) -> Option<&str> {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Speaker::User)
            .map(|m| m.text.as_str())
    }

    pub fn is_alternating(&self) -> bool {
        self.messages.iter().enumerate().all(|(i, m)| {
            m.role
                == if i % 2 == 0 {
                    Speaker::User
                } else {
                    Speaker::Assistant
                }
        })
    }
}
