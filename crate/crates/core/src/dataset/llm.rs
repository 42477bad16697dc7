//! Single-shot LLM generation: the whole conversation is requested in one
//! completion rather than simulated turn by turn.

use serde::Deserialize;

use super::{parse_domain, validate_document, ConversationDocument, DatasetError, DocTurn};
use crate::adapters::{DialogueHistory, TextGenerator};
use crate::prompt::SILENCE_TOKEN;
use crate::protocol::Domain;

pub const GENERATION_SYSTEM_PROMPT: &str =
    "You write synthetic training conversations. Reply with a single JSON object and nothing else.";

/// The user prompt for one conversation. The seed appears verbatim.
pub fn generation_prompt(domain: Domain, seed: &str) -> String {
    let who = if domain.uses_personas() {
        format!("The user is {seed}.")
    } else {
        format!("The conversation is about {seed}.")
    };
    format!(
        "Write a complete {domain} conversation between a user and a responder. {who}\n\
         The conversation has 8 to 12 turns. Each turn has a \"user\" message, a \"responder\" list of short \
         spoken phrases, and a \"responder_thoughts\" list of the same length. Each thought is either {SILENCE_TOKEN} \
         (the responder has nothing new yet and says a natural filler) or one concise sentence of knowledge \
         that fully supports the phrase at the same position. Phrases must not add facts their thought does not contain.\n\
         Output format: {{\"domain\": \"{domain}\", \"seed\": \"...\", \"turns\": [{{\"user\": \"...\", \
         \"responder\": [\"...\"], \"responder_thoughts\": [\"...\"]}}]}}"
    )
}

fn persona_prompt(domain: Domain, count: usize) -> String {
    format!(
        "List {count} distinct users who might ask for help in the {domain} domain. \
         Each is a short one-clause role description, such as \"a parent asking about a child's fever\". \
         Avoid names, ages and backstories. One per line, no numbering."
    )
}

#[derive(Deserialize)]
struct Loose {
    #[serde(default)]
    id: String,
    #[serde(default)]
    domain: Option<String>,
    #[serde(default)]
    seed: Option<String>,
    turns: Vec<DocTurn>,
}

fn json_object(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    (end > start).then(|| &text[start..=end])
}

/// Generates, parses and validates one document. Generated data must be
/// fully clean: a turn-count warning is a validation error here.
pub fn llm_generate(domain: &str, seed: &str, generator: &dyn TextGenerator) -> Result<ConversationDocument, DatasetError> {
    let d = parse_domain(domain)?;
    let mut history = DialogueHistory::new();
    history
        .push_user(generation_prompt(d, seed.trim()))
        .expect("fresh history accepts a user message");
    let text = generator
        .complete(Some(GENERATION_SYSTEM_PROMPT), &history)
        .map_err(|e| DatasetError::Generation(e.to_string()))?;
    let body = json_object(&text).ok_or_else(|| DatasetError::Parse {
        line: 0,
        message: "no JSON object in generation output".into(),
    })?;
    let loose: Loose = serde_json::from_str(body).map_err(|e| DatasetError::Parse {
        line: 0,
        message: e.to_string(),
    })?;
    if let Some(got) = loose.domain.as_deref() {
        if parse_domain(got).ok() != Some(d) {
            tracing::warn!(expected = %d, %got, "generator changed the domain label");
        }
    }
    let doc = ConversationDocument {
        id: loose.id,
        domain: d.as_str().to_string(),
        seed: loose.seed.unwrap_or_else(|| seed.trim().to_string()),
        turns: loose.turns,
    };
    let violations = validate_document(&doc);
    if !violations.is_empty() {
        return Err(DatasetError::Validation {
            id: doc.id,
            violations,
        });
    }
    Ok(doc)
}

/// Asks the generator for up to `count` persona or subtopic seeds.
pub fn llm_seed_bank(domain: Domain, count: usize, generator: &dyn TextGenerator) -> Result<Vec<String>, DatasetError> {
    let mut history = DialogueHistory::new();
    history
        .push_user(persona_prompt(domain, count))
        .expect("fresh history accepts a user message");
    let text = generator
        .complete(None, &history)
        .map_err(|e| DatasetError::Generation(e.to_string()))?;
    let mut out: Vec<String> = Vec::new();
    for line in text.lines() {
        let s = line
            .trim()
            .trim_start_matches(|c: char| c.is_ascii_digit() || matches!(c, '.' | ')' | '-' | '*'))
            .trim()
            .trim_matches('"')
            .to_string();
        if !s.is_empty() && !out.contains(&s) {
            out.push(s);
        }
        if out.len() == count {
            break;
        }
    }
    Ok(out)
}
