//! Synthetic conversation corpus: schema, validation, turn splitting and
//! entailment filtering.
//!
//! Corpus files are line-delimited JSON, one conversation per line:
//!
//! ```json
//! {"id":"...","domain":"medical","seed":"a parent asking about a child's fever",
//!  "turns":[{"user":"...","responder":["..."],"responder_thoughts":["<|sil|>"]}]}
//! ```
//!
//! `responder_thoughts[i]` is the knowledge behind `responder[i]`: either a
//! chunk of backend text or the silence literal.

mod llm;
mod seeds;
mod templates;

use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use llm::{generation_prompt, llm_generate, llm_seed_bank, GENERATION_SYSTEM_PROMPT};
pub use seeds::SeedBank;
pub use templates::template_generate;

use crate::entailment::{verify_pair, ClassifierError, NliClassifier, PairDecision};
use crate::prompt::{find_reserved, parse_context, KnowledgeSlot, PromptError, TurnRecord, SILENCE_TOKEN};
use crate::protocol::Domain;

pub const MIN_TURNS: usize = 8;
pub const MAX_TURNS: usize = 12;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("document {id:?} is invalid: {}", summarize(.violations))]
    Validation { id: String, violations: Vec<Violation> },
    #[error("unknown domain {0:?}")]
    UnknownDomain(String),
    #[error("generation failed: {0}")]
    Generation(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn summarize(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocTurn {
    pub user: String,
    pub responder: Vec<String>,
    pub responder_thoughts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationDocument {
    #[serde(default)]
    pub id: String,
    pub domain: String,
    #[serde(default)]
    pub seed: String,
    pub turns: Vec<DocTurn>,
}

impl ConversationDocument {
    pub fn from_json(s: &str) -> Result<Self, DatasetError> {
        serde_json::from_str(s).map_err(|e| DatasetError::Parse {
            line: 0,
            message: e.to_string(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("document serializes")
    }

    /// Turn records with trimmed text; thoughts equal to the silence literal
    /// become silence slots.
    pub fn records(&self) -> Vec<TurnRecord> {
        self.turns
            .iter()
            .map(|t| TurnRecord {
                user: t.user.trim().to_string(),
                events: t
                    .responder_thoughts
                    .iter()
                    .map(|k| KnowledgeSlot::from_text(k.trim()))
                    .collect(),
                phrases: t.responder.iter().map(|p| p.trim().to_string()).collect(),
            })
            .collect()
    }

    pub fn phrase_count(&self) -> usize {
        self.turns.iter().map(|t| t.responder.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule")]
pub enum Rule {
    NoTurns,
    EmptyUser,
    EmptyResponder,
    Alignment { responder: usize, thoughts: usize },
    EmptyEntry { field: String, index: usize },
    ReservedMarker { field: String, index: usize },
    TurnCount { turns: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub turn: Option<usize>,
    pub severity: Severity,
    #[serde(flatten)]
    pub rule: Rule,
}

impl Violation {
    fn error(turn: usize, rule: Rule) -> Self {
        Self {
            turn: Some(turn),
            severity: Severity::Error,
            rule,
        }
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(t) = self.turn {
            write!(f, "turn {t}: ")?;
        }
        match &self.rule {
            Rule::NoTurns => write!(f, "document has no turns"),
            Rule::EmptyUser => write!(f, "empty user utterance"),
            Rule::EmptyResponder => write!(f, "responder list is empty"),
            Rule::Alignment { responder, thoughts } => {
                write!(f, "{responder} responder sentences but {thoughts} thoughts")
            }
            Rule::EmptyEntry { field, index } => write!(f, "{field}[{index}] is empty"),
            Rule::ReservedMarker { field, index } => {
                write!(f, "{field}[{index}] contains a reserved marker")
            }
            Rule::TurnCount { turns } => {
                write!(f, "{turns} turns, expected {MIN_TURNS}-{MAX_TURNS}")
            }
        }
    }
}

/// Checks every schema invariant. Empty result iff the document is clean;
/// a turn count outside 8-12 is only a warning.
pub fn validate_document(doc: &ConversationDocument) -> Vec<Violation> {
    let mut out = Vec::new();
    if doc.turns.is_empty() {
        out.push(Violation {
            turn: None,
            severity: Severity::Error,
            rule: Rule::NoTurns,
        });
        return out;
    }
    for (i, t) in doc.turns.iter().enumerate() {
        if t.user.trim().is_empty() {
            out.push(Violation::error(i, Rule::EmptyUser));
        } else if find_reserved(&t.user).is_some() {
            out.push(Violation::error(
                i,
                Rule::ReservedMarker {
                    field: "user".into(),
                    index: 0,
                },
            ));
        }
        if t.responder.len() != t.responder_thoughts.len() {
            out.push(Violation::error(
                i,
                Rule::Alignment {
                    responder: t.responder.len(),
                    thoughts: t.responder_thoughts.len(),
                },
            ));
        } else if t.responder.is_empty() {
            out.push(Violation::error(i, Rule::EmptyResponder));
        }
        for (j, p) in t.responder.iter().enumerate() {
            if p.trim().is_empty() {
                out.push(Violation::error(i, Rule::EmptyEntry { field: "responder".into(), index: j }));
            } else if find_reserved(p).is_some() {
                out.push(Violation::error(i, Rule::ReservedMarker { field: "responder".into(), index: j }));
            }
        }
        for (j, k) in t.responder_thoughts.iter().enumerate() {
            let k = k.trim();
            if k.is_empty() {
                out.push(Violation::error(
                    i,
                    Rule::EmptyEntry { field: "responder_thoughts".into(), index: j },
                ));
            } else if k != SILENCE_TOKEN && find_reserved(k).is_some() {
                out.push(Violation::error(
                    i,
                    Rule::ReservedMarker { field: "responder_thoughts".into(), index: j },
                ));
            }
        }
    }
    if !(MIN_TURNS..=MAX_TURNS).contains(&doc.turns.len()) {
        out.push(Violation {
            turn: None,
            severity: Severity::Warning,
            rule: Rule::TurnCount {
                turns: doc.turns.len(),
            },
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub conversation_id: String,
    pub turn_index: usize,
    pub phrase_index: usize,
}

/// One fine-tuning example: the context up to a pending knowledge message
/// and the phrase that answers it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub rendered_context: String,
    pub target_phrase: String,
    pub provenance: Provenance,
}

impl TrainingExample {
    /// The knowledge the target phrase answers.
    pub fn final_knowledge(&self) -> Result<KnowledgeSlot, PromptError> {
        parse_context(&self.rendered_context)?
            .events
            .pop()
            .ok_or_else(|| PromptError::Malformed("context has no knowledge message".into()))
    }
}

/// One example per phrase: for phrase `j` of a turn, the context holds
/// events `0..=j` and phrases `0..j`.
pub fn split_turns(doc: &ConversationDocument) -> Result<Vec<TrainingExample>, DatasetError> {
    let violations: Vec<_> = validate_document(doc).into_iter().filter(Violation::is_error).collect();
    if !violations.is_empty() {
        return Err(DatasetError::Validation {
            id: doc.id.clone(),
            violations,
        });
    }
    let mut out = Vec::with_capacity(doc.phrase_count());
    for (turn_index, rec) in doc.records().into_iter().enumerate() {
        for (phrase_index, target) in rec.phrases.iter().enumerate() {
            out.push(TrainingExample {
                rendered_context: rec.prefix_for(phrase_index).render_context()?,
                target_phrase: target.clone(),
                provenance: Provenance {
                    conversation_id: doc.id.clone(),
                    turn_index,
                    phrase_index,
                },
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedExample {
    pub example: TrainingExample,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterOutcome {
    pub kept: Vec<TrainingExample>,
    pub rejected: Vec<RejectedExample>,
}

/// Keeps examples whose final chunk entails the target phrase. Silence-final
/// examples are always kept. Rejections are logged and dropped.
pub fn filter_entailed(
    examples: Vec<TrainingExample>,
    gate: &dyn NliClassifier,
) -> Result<FilterOutcome, DatasetError> {
    let mut out = FilterOutcome::default();
    for ex in examples {
        let knowledge = ex.final_knowledge()?;
        match verify_pair(&knowledge, &ex.target_phrase, gate)? {
            PairDecision::Exempt | PairDecision::Accepted { .. } => out.kept.push(ex),
            PairDecision::Rejected { verdict } => {
                let reason = format!(
                    "{:?} (score {:.3}) from {}",
                    verdict.label,
                    verdict.score,
                    gate.name()
                );
                tracing::info!(
                    conversation = %ex.provenance.conversation_id,
                    turn = ex.provenance.turn_index,
                    phrase = ex.provenance.phrase_index,
                    %reason,
                    "dropping example"
                );
                out.rejected.push(RejectedExample { example: ex, reason });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub conversations: usize,
    pub turns: usize,
    pub examples: usize,
    pub rejected: usize,
    pub reject_rate: f64,
}

impl CorpusStats {
    pub fn of_documents(docs: &[ConversationDocument]) -> Self {
        Self {
            conversations: docs.len(),
            turns: docs.iter().map(|d| d.turns.len()).sum(),
            examples: docs.iter().map(ConversationDocument::phrase_count).sum(),
            ..Default::default()
        }
    }

    pub fn with_filter(mut self, outcome: &FilterOutcome) -> Self {
        self.rejected = outcome.rejected.len();
        let total = outcome.kept.len() + outcome.rejected.len();
        self.reject_rate = if total == 0 {
            0.0
        } else {
            self.rejected as f64 / total as f64
        };
        self
    }

    pub fn turns_per_conversation(&self) -> f64 {
        if self.conversations == 0 {
            0.0
        } else {
            self.turns as f64 / self.conversations as f64
        }
    }
}

/// Reads line-delimited JSON records, skipping blank lines.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(reader: impl BufRead) -> Result<Vec<T>, DatasetError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| DatasetError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(mut writer: impl Write, items: &[T]) -> Result<(), DatasetError> {
    for item in items {
        serde_json::to_writer(&mut writer, item).map_err(std::io::Error::from)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn parse_domain(s: &str) -> Result<Domain, DatasetError> {
    s.parse().map_err(|_| DatasetError::UnknownDomain(s.to_string()))
}
