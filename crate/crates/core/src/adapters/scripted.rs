//! Deterministic test doubles driven entirely by the clock they are given.

use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, DialogueHistory, Generation, Infill, InfillError};
use crate::prompt::{find_reserved, parse_context, KnowledgeSlot};
use crate::queue::KnowledgeSink;
use crate::time::{secs, Clock};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedChunk {
    /// Seconds after the previous chunk (or turn start).
    pub delay: f64,
    pub text: String,
}

/// Chunk texts with relative delays, then a final delay before close.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScriptedSchedule {
    #[serde(default)]
    pub chunks: Vec<ScriptedChunk>,
    #[serde(default)]
    pub close_delay: f64,
}

impl ScriptedSchedule {
    pub fn new(chunks: impl IntoIterator<Item = (f64, impl Into<String>)>, close_delay: f64) -> Self {
        Self {
            chunks: chunks
                .into_iter()
                .map(|(delay, text)| ScriptedChunk {
                    delay,
                    text: text.into(),
                })
                .collect(),
            close_delay,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let bad_delay = |d: f64| !d.is_finite() || d < 0.0;
        if bad_delay(self.close_delay) {
            return Err(BackendError::Config(format!("bad close delay {}", self.close_delay)));
        }
        for (i, c) in self.chunks.iter().enumerate() {
            if bad_delay(c.delay) {
                return Err(BackendError::Config(format!("chunk {i}: bad delay {}", c.delay)));
            }
            if c.text.trim().is_empty() {
                return Err(BackendError::Config(format!("chunk {i}: empty text")));
            }
            if let Some(m) = find_reserved(&c.text) {
                return Err(BackendError::Config(format!("chunk {i}: contains {m}")));
            }
        }
        Ok(())
    }

    /// Absolute (arrival, text) pairs and the close time.
    pub fn timeline(&self) -> (Vec<(Duration, &str)>, Duration) {
        let mut t = Duration::ZERO;
        let arrivals = self
            .chunks
            .iter()
            .map(|c| {
                t += secs(c.delay);
                (t, c.text.as_str())
            })
            .collect();
        (arrivals, t + secs(self.close_delay))
    }
}

type ScriptFn = dyn Fn(&DialogueHistory) -> ScriptedSchedule + Send + Sync;

/// Replays a schedule on every turn and records the history it was sent.
pub struct ScriptedBackend {
    label: String,
    script: Box<ScriptFn>,
    requests: Mutex<Vec<DialogueHistory>>,
}

impl ScriptedBackend {
    pub fn fixed(schedule: ScriptedSchedule) -> Self {
        Self::from_fn("scripted", move |_| schedule.clone())
    }

    /// Picks a schedule per turn from the history (last message is the user
    /// utterance being answered).
    pub fn from_fn(
        label: impl Into<String>,
        f: impl Fn(&DialogueHistory) -> ScriptedSchedule + Send + Sync + 'static,
    ) -> Self {
        Self {
            label: label.into(),
            script: Box::new(f),
            requests: Mutex::new(Vec::new()),
        }
    }

    /// Histories received so far, one per turn.
    pub fn requests(&self) -> Vec<DialogueHistory> {
        self.requests.lock().unwrap().clone()
    }
}

impl Backend for ScriptedBackend {
    fn label(&self) -> &str {
        &self.label
    }

    fn start_turn(&self, history: &DialogueHistory, sink: KnowledgeSink) -> Result<(), BackendError> {
        self.requests.lock().unwrap().push(history.clone());
        let schedule = (self.script)(history);
        schedule.validate()?;
        let (arrivals, close) = schedule.timeline();
        for (at, text) in arrivals {
            sink.push_chunk_at(text, at)
                .map_err(|e| BackendError::Provider(e.to_string()))?;
        }
        sink.close_at(close);
        Ok(())
    }
}

/// How a scripted infill turns a context into a phrase.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum PhraseMode {
    /// Repeat the latest chunk verbatim; say `silence_phrase` for silence or
    /// when there is no knowledge at all.
    Echo { silence_phrase: String },
    /// Always say the same thing.
    Constant { phrase: String },
}

impl Default for PhraseMode {
    fn default() -> Self {
        PhraseMode::Echo {
            silence_phrase: "One moment.".into(),
        }
    }
}

impl PhraseMode {
    pub fn phrase_for(&self, context: &str) -> String {
        match self {
            PhraseMode::Constant { phrase } => phrase.clone(),
            PhraseMode::Echo { silence_phrase } => match parse_context(context)
                .ok()
                .and_then(|r| r.events.last().cloned())
            {
                Some(KnowledgeSlot::Chunk(text)) => text,
                _ => silence_phrase.clone(),
            },
        }
    }
}

type PhraseFn = dyn Fn(&str) -> String + Send + Sync;

/// Infill generator with scripted latency and phrasing.
pub struct ScriptedInfill {
    label: String,
    latencies: Vec<Duration>,
    calls: Mutex<usize>,
    phrase: Box<PhraseFn>,
    contexts: Mutex<Vec<String>>,
}

impl ScriptedInfill {
    pub fn new(latency: Duration, mode: PhraseMode) -> Self {
        Self::with_fn(vec![latency], move |ctx| mode.phrase_for(ctx))
    }

    /// Echo mode with the default silence phrase.
    pub fn echo(latency: Duration) -> Self {
        Self::new(latency, PhraseMode::default())
    }

    pub fn constant(latency: Duration, phrase: impl Into<String>) -> Self {
        Self::new(
            latency,
            PhraseMode::Constant {
                phrase: phrase.into(),
            },
        )
    }

    /// Latencies are used in order and cycle.
    pub fn with_fn(latencies: Vec<Duration>, f: impl Fn(&str) -> String + Send + Sync + 'static) -> Self {
        assert!(!latencies.is_empty(), "at least one latency is required");
        Self {
            label: "scripted-infill".into(),
            latencies,
            calls: Mutex::new(0),
            phrase: Box::new(f),
            contexts: Mutex::new(Vec::new()),
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// Contexts received so far.
    pub fn contexts(&self) -> Vec<String> {
        self.contexts.lock().unwrap().clone()
    }
}

impl Infill for ScriptedInfill {
    fn label(&self) -> &str {
        &self.label
    }

    fn generate(&self, context: &str, clock: &dyn Clock) -> Result<Generation, InfillError> {
        let latency = {
            let mut calls = self.calls.lock().unwrap();
            let l = self.latencies[*calls % self.latencies.len()];
            *calls += 1;
            l
        };
        self.contexts.lock().unwrap().push(context.to_string());
        let started = clock.now();
        clock.sleep_until(started + latency);
        let text = (self.phrase)(context);
        Ok(Generation {
            text,
            started,
            first_output: clock.now(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::render_context;
    use crate::protocol::TurnState;
    use crate::queue::{Dequeued, KnowledgeQueue};
    use crate::time::VirtualClock;
    use std::sync::Arc;

    fn drain(schedule: ScriptedSchedule) -> (Vec<(Duration, String)>, Duration) {
        let clock: Arc<dyn Clock> = Arc::new(VirtualClock::new());
        let q = Arc::new(KnowledgeQueue::new());
        let backend = ScriptedBackend::fixed(schedule);
        let mut h = DialogueHistory::new();
        h.push_user("q").unwrap();
        backend
            .start_turn(&h, KnowledgeSink::new(q.clone(), clock.clone()))
            .unwrap();
        let mut got = Vec::new();
        loop {
            match q.dequeue(clock.as_ref(), None) {
                Dequeued::Chunk { text, arrival } => got.push((arrival, text)),
                Dequeued::End { at, .. } => return (got, at),
                Dequeued::Deadline(_) => unreachable!(),
            }
        }
    }

    #[test]
    fn single_chunk() {
        let (got, close) = drain(ScriptedSchedule::new([(3.0, "A.")], 0.0));
        assert_eq!(got, vec![(secs(3.0), "A.".to_string())]);
        assert_eq!(close, secs(3.0));
    }

    #[test]
    fn silent_backend() {
        let (got, close) = drain(ScriptedSchedule::new(Vec::<(f64, String)>::new(), 0.5));
        assert!(got.is_empty());
        assert_eq!(close, secs(0.5));
    }

    #[test]
    fn delays_are_cumulative() {
        let (got, _) = drain(ScriptedSchedule::new([(0.5, "A."), (0.5, "B.")], 0.0));
        let times: Vec<_> = got.iter().map(|(t, _)| *t).collect();
        assert_eq!(times, vec![secs(0.5), secs(1.0)]);
    }

    #[test]
    fn schedule_validation() {
        assert!(ScriptedSchedule::new([(-1.0, "A.")], 0.0).validate().is_err());
        assert!(ScriptedSchedule::new([(1.0, " ")], 0.0).validate().is_err());
        assert!(ScriptedSchedule::new([(1.0, "A <|sil|>")], 0.0).validate().is_err());
        let s: ScriptedSchedule =
            serde_json::from_str(r#"{"chunks":[{"delay":3.0,"text":"A."}]}"#).unwrap();
        assert_eq!(s.close_delay, 0.0);
    }

    #[test]
    fn echo_and_silence_modes() {
        let clock = VirtualClock::new();
        let infill = ScriptedInfill::echo(secs(0.15));
        let mut s = TurnState::open("Tallest mountain?").unwrap();
        s.push_chunk("It is Everest.", Duration::ZERO).unwrap();
        let g = infill.generate(&render_context(&s).unwrap(), &clock).unwrap();
        assert_eq!(g.text, "It is Everest.");
        assert_eq!(g.first_output - g.started, secs(0.15));

        s.append_phrase(&g.text, g.first_output).unwrap();
        s.push_silence(secs(1.0)).unwrap();
        let g = infill.generate(&render_context(&s).unwrap(), &clock).unwrap();
        assert_eq!(g.text, "One moment.");
    }

    #[test]
    fn ttft_arithmetic_for_first_silence() {
        let clock = VirtualClock::new();
        clock.sleep_until(secs(1.0));
        let infill = ScriptedInfill::echo(secs(0.15));
        let mut s = TurnState::open("q").unwrap();
        s.push_silence(secs(1.0)).unwrap();
        let g = infill.generate(&render_context(&s).unwrap(), &clock).unwrap();
        assert_eq!(g.first_output, secs(1.15));
    }

    #[test]
    fn latencies_cycle() {
        let clock = VirtualClock::new();
        let infill = ScriptedInfill::with_fn(vec![secs(0.1), secs(0.2)], |_| "x".into());
        let spans: Vec<_> = (0..3)
            .map(|_| {
                let g = infill.generate("", &clock).unwrap();
                g.first_output - g.started
            })
            .collect();
        assert_eq!(spans, vec![secs(0.1), secs(0.2), secs(0.1)]);
    }
}
