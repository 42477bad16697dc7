use std::sync::mpsc;
use std::sync::Arc;
use std::time::Duration;

use super::EvalError;
use crate::adapters::{validate_phrase, Backend, DialogueHistory, Infill};
use crate::engine::{TurnEngine, TurnObserver};
use crate::prompt::render_user_only;
use crate::protocol::{ConversationalPhrase, TurnTranscript};
use crate::queue::{Dequeued, KnowledgeQueue, KnowledgeSink, StreamEnd};
use crate::time::{Clock, TurnClock};

/// What a system said to one question.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemResponse {
    /// Dispatch to first output character, turn-relative.
    pub ttft: Duration,
    pub full_response: String,
    /// Present for the full runtime only.
    pub transcript: Option<TurnTranscript>,
}

/// A system answering single-turn questions.
pub trait EvalSystem: Send + Sync {
    fn name(&self) -> &str;

    fn clock(&self) -> Arc<dyn Clock>;

    /// Answers `question`, calling `first_output` once with the TTFT as soon
    /// as it is known.
    fn respond(&self, question: &str, first_output: &mut dyn FnMut(Duration)) -> Result<SystemResponse, EvalError>;
}

fn fresh_history(question: &str) -> Result<DialogueHistory, EvalError> {
    let q = question.trim();
    if q.is_empty() {
        return Err(EvalError::Item("empty question".into()));
    }
    let mut h = DialogueHistory::new();
    h.push_user(q).expect("fresh history");
    Ok(h)
}

/// Backend plus infill through the turn engine.
pub struct FullRuntime {
    name: String,
    engine: TurnEngine,
    clock: Arc<dyn Clock>,
}

impl FullRuntime {
    pub fn new(name: impl Into<String>, engine: TurnEngine, clock: Arc<dyn Clock>) -> Self {
        Self {
            name: name.into(),
            engine,
            clock,
        }
    }
}

struct FirstPhrase<'a> {
    seen: bool,
    f: &'a mut dyn FnMut(Duration),
}

impl TurnObserver for FirstPhrase<'_> {
    fn on_phrase(&mut self, phrase: &ConversationalPhrase) {
        if !self.seen {
            self.seen = true;
            (self.f)(phrase.start_timestamp);
        }
    }
}

impl EvalSystem for FullRuntime {
    fn name(&self) -> &str {
        &self.name
    }

    fn clock(&self) -> Arc<dyn Clock> {
        self.clock.clone()
    }

    fn respond(&self, question: &str, first_output: &mut dyn FnMut(Duration)) -> Result<SystemResponse, EvalError> {
        let history = fresh_history(question)?;
        let mut obs = FirstPhrase {
            seen: false,
            f: first_output,
        };
        let t = self
            .engine
            .run_turn(&history, &mut obs)
            .map_err(|e| EvalError::Item(e.to_string()))?;
        let ttft = t.ttft().ok_or_else(|| EvalError::Item("turn produced no phrase".into()))?;
        Ok(SystemResponse {
            ttft,
            full_response: t.response_text(),
            transcript: Some(t),
        })
    }
}

/// The backend alone; its chunks are the response.
pub struct BackendOnly {
    name: String,
    backend: Arc<dyn Backend>,
    clock: Arc<dyn Clock>,
}

impl BackendOnly {
    pub fn new(name: impl Into<String>, backend: Arc<dyn Backend>, clock: Arc<dyn Clock>) -> Self {
        Self {
            name: name.into(),
            backend,
            clock,
        }
    }
}

impl EvalSystem for BackendOnly {
    fn name(&self) -> &str {
        &self.name
    }

    fn clock(&self) -> Arc<dyn Clock> {
        self.clock.clone()
    }

    fn respond(&self, question: &str, first_output: &mut dyn FnMut(Duration)) -> Result<SystemResponse, EvalError> {
        let history = fresh_history(question)?;
        let clock: Arc<dyn Clock> = Arc::new(TurnClock::start(self.clock.clone()));
        let queue = Arc::new(KnowledgeQueue::new());
        self.backend
            .start_turn(&history, KnowledgeSink::new(queue.clone(), clock.clone()))
            .map_err(|e| EvalError::Item(e.to_string()))?;
        let mut chunks = Vec::new();
        let mut ttft = None;
        loop {
            match queue.dequeue(clock.as_ref(), None) {
                Dequeued::Chunk { text, arrival } => {
                    if ttft.is_none() {
                        // streamed text shows up before its sentence completes
                        let t = queue.first_activity().map_or(arrival, |a| a.min(arrival));
                        first_output(t);
                        ttft = Some(t);
                    }
                    chunks.push(text);
                }
                Dequeued::End {
                    outcome: StreamEnd::Complete,
                    ..
                } => break,
                Dequeued::End {
                    outcome: StreamEnd::Failed(e),
                    ..
                } => return Err(EvalError::Item(e.to_string())),
                Dequeued::Deadline(_) => unreachable!("no deadline was set"),
            }
        }
        let ttft = ttft.ok_or_else(|| EvalError::Item("backend produced no text".into()))?;
        Ok(SystemResponse {
            ttft,
            full_response: chunks.join(" "),
            transcript: None,
        })
    }
}

/// The infill model prompted with the bare question.
pub struct InfillOnly {
    name: String,
    infill: Arc<dyn Infill>,
    clock: Arc<dyn Clock>,
}

impl InfillOnly {
    pub fn new(name: impl Into<String>, infill: Arc<dyn Infill>, clock: Arc<dyn Clock>) -> Self {
        Self {
            name: name.into(),
            infill,
            clock,
        }
    }
}

impl EvalSystem for InfillOnly {
    fn name(&self) -> &str {
        &self.name
    }

    fn clock(&self) -> Arc<dyn Clock> {
        self.clock.clone()
    }

    fn respond(&self, question: &str, first_output: &mut dyn FnMut(Duration)) -> Result<SystemResponse, EvalError> {
        fresh_history(question)?;
        let clock = TurnClock::start(self.clock.clone());
        let g = self
            .infill
            .generate(&render_user_only(question), &clock)
            .map_err(|e| EvalError::Item(e.to_string()))?;
        let text = validate_phrase(&g.text).map_err(|e| EvalError::Item(e.to_string()))?;
        first_output(g.first_output);
        Ok(SystemResponse {
            ttft: g.first_output,
            full_response: text,
            transcript: None,
        })
    }
}

pub const DEFAULT_TTFT_CEILING: Duration = Duration::from_secs(60);

enum Progress {
    First,
    Done(Result<SystemResponse, EvalError>),
}

/// Runs one question and enforces the TTFT ceiling. Virtual-clock systems run
/// inline and are checked after the fact; wall-clock systems run on a worker
/// thread so a hung system times out.
pub fn run_one(system: &Arc<dyn EvalSystem>, question: &str, ceiling: Duration) -> Result<SystemResponse, EvalError> {
    let check = |r: SystemResponse| {
        if r.ttft > ceiling {
            Err(EvalError::Timeout(ceiling))
        } else {
            Ok(r)
        }
    };
    if system.clock().is_virtual() {
        return system.respond(question, &mut |_| {}).and_then(check);
    }
    let (tx, rx) = mpsc::channel();
    let worker = system.clone();
    let q = question.to_string();
    std::thread::spawn(move || {
        let tx_first = tx.clone();
        let out = worker.respond(&q, &mut |_| {
            let _ = tx_first.send(Progress::First);
        });
        let _ = tx.send(Progress::Done(out));
    });
    match rx.recv_timeout(ceiling) {
        Ok(Progress::First) => match rx.recv() {
            Ok(Progress::Done(r)) => r.and_then(check),
            _ => Err(EvalError::Item("system worker stopped".into())),
        },
        Ok(Progress::Done(r)) => r.and_then(check),
        Err(mpsc::RecvTimeoutError::Timeout) => Err(EvalError::Timeout(ceiling)),
        Err(mpsc::RecvTimeoutError::Disconnected) => Err(EvalError::Item("system worker panicked".into())),
    }
}

/// TTFT of one question, in seconds-exact [`Duration`].
pub fn measure_ttft(system: &Arc<dyn EvalSystem>, question: &str, ceiling: Duration) -> Result<Duration, EvalError> {
    run_one(system, question, ceiling).map(|r| r.ttft)
}
