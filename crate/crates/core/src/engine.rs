//! Runs conversational turns.
//!
//! The backend streams knowledge into a [`KnowledgeQueue`]; the infill loop
//! pulls one event at a time, renders the turn context and asks the infill
//! generator for a phrase. When no chunk is waiting, a silence event fires
//! `period` after the previous event (chunk or silence), up to
//! `max_consecutive` silences in a row. The turn ends once the backend stream
//! has finished and the queue is drained.

use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

use crate::adapters::{
    validate_phrase, Backend, BackendError, DialogueHistory, Infill, InfillError,
};
use crate::prompt::render_context;
use crate::protocol::{
    ConversationalPhrase, Conversation, EventKind, KnowledgeEvent, ProtocolError, TurnState,
    TurnTranscript,
};
use crate::queue::{Dequeued, KnowledgeQueue, KnowledgeSink, StreamEnd};
use crate::time::{as_secs, secs, Clock, TurnClock};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("silence period must be a finite, non-negative number of seconds (got {0})")]
    Period(f64),
    #[error("max consecutive silence must be at least 1")]
    Budget,
}

/// Silence cadence. A zero period means "respond instantly": the first
/// silence fires at turn start.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SilencePolicy {
    period: Duration,
    max_consecutive: u32,
}

impl Default for SilencePolicy {
    fn default() -> Self {
        Self {
            period: Duration::from_secs(1),
            max_consecutive: 3,
        }
    }
}

impl SilencePolicy {
    pub fn new(period_seconds: f64, max_consecutive: u32) -> Result<Self, PolicyError> {
        if !period_seconds.is_finite() || period_seconds < 0.0 {
            return Err(PolicyError::Period(period_seconds));
        }
        if max_consecutive == 0 {
            return Err(PolicyError::Budget);
        }
        Ok(Self {
            period: secs(period_seconds),
            max_consecutive,
        })
    }

    pub fn instant(max_consecutive: u32) -> Result<Self, PolicyError> {
        Self::new(0.0, max_consecutive)
    }

    pub fn period(&self) -> Duration {
        self.period
    }

    pub fn period_seconds(&self) -> f64 {
        as_secs(self.period)
    }

    pub fn max_consecutive(&self) -> u32 {
        self.max_consecutive
    }
}

/// What the infill loop should react to next.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NextEvent {
    Chunk { text: String, at: Duration },
    Silence { at: Duration },
    TurnEnd { at: Duration, outcome: StreamEnd },
}

/// Waits for the next event. Chunks are stamped with their arrival time and
/// silences with their deadline.
pub fn next_event(
    queue: &KnowledgeQueue,
    clock: &dyn Clock,
    policy: &SilencePolicy,
    last_event_time: Duration,
    consecutive_silence: u32,
) -> NextEvent {
    let deadline =
        (consecutive_silence < policy.max_consecutive).then(|| last_event_time + policy.period);
    match queue.dequeue(clock, deadline) {
        Dequeued::Chunk { text, arrival } => NextEvent::Chunk { text, at: arrival },
        Dequeued::Deadline(at) => NextEvent::Silence { at },
        Dequeued::End { at, outcome } => NextEvent::TurnEnd { at, outcome },
    }
}

/// Receives the engine's events as they happen.
pub trait TurnObserver {
    fn on_event(&mut self, _event: &KnowledgeEvent) {}
    fn on_phrase(&mut self, _phrase: &ConversationalPhrase) {}
}

impl TurnObserver for () {}

/// A turn that stopped early. The transcript is closed and balanced up to
/// the last answered event.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TurnError {
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("backend failure: {error}")]
    Backend {
        error: BackendError,
        partial: Box<TurnTranscript>,
    },
    #[error("infill failure: {error}")]
    Infill {
        error: InfillError,
        partial: Box<TurnTranscript>,
    },
}

impl TurnError {
    pub fn partial(&self) -> Option<&TurnTranscript> {
        match self {
            TurnError::Protocol(_) => None,
            TurnError::Backend { partial, .. } | TurnError::Infill { partial, .. } => Some(partial),
        }
    }
}

/// Runs single turns against one backend/infill pair.
#[derive(Clone)]
pub struct TurnEngine {
    backend: Arc<dyn Backend>,
    infill: Arc<dyn Infill>,
    clock: Arc<dyn Clock>,
    policy: SilencePolicy,
}

impl TurnEngine {
    pub fn new(
        backend: Arc<dyn Backend>,
        infill: Arc<dyn Infill>,
        clock: Arc<dyn Clock>,
        policy: SilencePolicy,
    ) -> Self {
        Self {
            backend,
            infill,
            clock,
            policy,
        }
    }

    pub fn backend(&self) -> &Arc<dyn Backend> {
        &self.backend
    }

    pub fn infill(&self) -> &Arc<dyn Infill> {
        &self.infill
    }

    pub fn policy(&self) -> SilencePolicy {
        self.policy
    }

    /// Runs one turn. `history` must end with the user utterance being
    /// answered; the backend sees all of it, the infill sees only this turn.
    pub fn run_turn(
        &self,
        history: &DialogueHistory,
        observer: &mut dyn TurnObserver,
    ) -> Result<TurnTranscript, TurnError> {
        let utterance = history.last_user().unwrap_or_default();
        let mut state = TurnState::open(utterance)?;
        let clock: Arc<dyn Clock> = Arc::new(TurnClock::start(self.clock.clone()));
        let queue = Arc::new(KnowledgeQueue::new());
        let sink = KnowledgeSink::new(queue.clone(), clock.clone());

        if let Err(error) = self.backend.start_turn(history, sink) {
            return Err(TurnError::Backend {
                error,
                partial: Box::new(state.close()?),
            });
        }

        let mut last_event_time = Duration::ZERO;
        let mut consecutive_silence = 0;
        loop {
            let next = next_event(
                &queue,
                clock.as_ref(),
                &self.policy,
                last_event_time,
                consecutive_silence,
            );
            let seq = match next {
                NextEvent::Chunk { text, at } => {
                    consecutive_silence = 0;
                    state.append_event(EventKind::Chunk, Some(&text), at)?
                }
                NextEvent::Silence { at } => {
                    consecutive_silence += 1;
                    state.append_event(EventKind::Silence, None, at)?
                }
                NextEvent::TurnEnd {
                    at,
                    outcome: StreamEnd::Complete,
                } => {
                    if !state.events().is_empty() {
                        break;
                    }
                    // never leave the user without a response
                    consecutive_silence += 1;
                    state.append_event(EventKind::Silence, None, at)?
                }
                NextEvent::TurnEnd {
                    outcome: StreamEnd::Failed(error),
                    ..
                } => {
                    return Err(TurnError::Backend {
                        error,
                        partial: Box::new(state.close()?),
                    });
                }
            };
            let event = state.events()[seq].clone();
            observer.on_event(&event);

            let context = render_context(&state).expect("state has a pending event");
            let generated = self
                .infill
                .generate(&context, clock.as_ref())
                .and_then(|g| validate_phrase(&g.text).map(|text| (text, g.first_output)));
            let (text, first_output) = match generated {
                Ok(v) => v,
                Err(error) => {
                    return Err(TurnError::Infill {
                        error,
                        partial: Box::new(state.balanced_prefix()),
                    })
                }
            };
            let pseq = state.append_phrase(&text, first_output.max(event.timestamp))?;
            observer.on_phrase(&state.phrases()[pseq]);
            last_event_time = event.timestamp;
        }
        Ok(state.close()?)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("turn {turn_index}: {source}")]
pub struct ConversationError {
    pub turn_index: usize,
    #[source]
    pub source: TurnError,
}

/// Conversation-level dialogue manager: owns the backend history and the
/// closed turns.
#[derive(Clone)]
pub struct Dialogue {
    engine: TurnEngine,
    history: DialogueHistory,
    conversation: Conversation,
}

impl Dialogue {
    pub fn new(engine: TurnEngine, conversation: Conversation) -> Self {
        Self {
            engine,
            history: DialogueHistory::new(),
            conversation,
        }
    }

    pub fn engine(&self) -> &TurnEngine {
        &self.engine
    }

    pub fn history(&self) -> &DialogueHistory {
        &self.history
    }

    pub fn conversation(&self) -> &Conversation {
        &self.conversation
    }

    pub fn into_conversation(self) -> Conversation {
        self.conversation
    }

    /// Runs the next turn. On success the user utterance and the joined
    /// phrase text are appended to the backend history; on failure the
    /// history is left as it was.
    pub fn run_turn(
        &mut self,
        utterance: &str,
        observer: &mut dyn TurnObserver,
    ) -> Result<&TurnTranscript, ConversationError> {
        let turn_index = self.conversation.turns().len();
        let err = |source| ConversationError { turn_index, source };
        let trimmed = utterance.trim();
        if trimmed.is_empty() {
            return Err(err(ProtocolError::EmptyUtterance.into()));
        }
        self.history
            .push_user(trimmed)
            .expect("history ends with an assistant turn between turns");
        match self.engine.run_turn(&self.history, observer) {
            Ok(transcript) => {
                self.history
                    .push_assistant(transcript.response_text())
                    .expect("user message was just pushed");
                let idx = self.conversation.push_turn(transcript);
                Ok(&self.conversation.turns()[idx])
            }
            Err(e) => {
                self.history.pop_pending_user();
                Err(err(e))
            }
        }
    }

    pub fn run_conversation<I, S>(&mut self, utterances: I) -> Result<&Conversation, ConversationError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        for u in utterances {
            self.run_turn(u.as_ref(), &mut ())?;
        }
        Ok(&self.conversation)
    }
}

/// Convenience wrapper: one turn with a fresh history.
pub fn run_turn(
    user_utterance: &str,
    engine: &TurnEngine,
    observer: &mut dyn TurnObserver,
) -> Result<TurnTranscript, TurnError> {
    let mut history = DialogueHistory::new();
    let u = user_utterance.trim();
    if u.is_empty() {
        return Err(ProtocolError::EmptyUtterance.into());
    }
    history.push_user(u).expect("fresh history");
    engine.run_turn(&history, observer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapters::{ScriptedBackend, ScriptedInfill, ScriptedSchedule};
    use crate::time::VirtualClock;

    fn engine(schedule: ScriptedSchedule, latency: f64, policy: SilencePolicy) -> TurnEngine {
        TurnEngine::new(
            Arc::new(ScriptedBackend::fixed(schedule)),
            Arc::new(ScriptedInfill::echo(secs(latency))),
            Arc::new(VirtualClock::new()),
            policy,
        )
    }

    fn kinds(t: &TurnTranscript) -> Vec<(EventKind, Duration)> {
        t.events().iter().map(|e| (e.kind, e.timestamp)).collect()
    }

    #[test]
    fn policy_validation() {
        assert!(SilencePolicy::new(-1.0, 3).is_err());
        assert!(SilencePolicy::new(f64::INFINITY, 3).is_err());
        assert_eq!(SilencePolicy::new(1.0, 0), Err(PolicyError::Budget));
        let p = SilencePolicy::default();
        assert_eq!(p.period(), secs(1.0));
        assert_eq!(p.max_consecutive(), 3);
    }

    #[test]
    fn next_event_silence_on_empty_queue() {
        let q = KnowledgeQueue::new();
        let clock = VirtualClock::new();
        let ev = next_event(&q, &clock, &SilencePolicy::default(), Duration::ZERO, 0);
        assert_eq!(ev, NextEvent::Silence { at: secs(1.0) });
    }

    #[test]
    fn next_event_pending_chunk_is_immediate() {
        let q = KnowledgeQueue::new();
        q.enqueue_at("A.", secs(0.4)).unwrap();
        let clock = VirtualClock::starting_at(secs(0.5));
        let ev = next_event(&q, &clock, &SilencePolicy::default(), Duration::ZERO, 0);
        assert_eq!(ev, NextEvent::Chunk { text: "A.".into(), at: secs(0.4) });
        assert_eq!(clock.now(), secs(0.5));
    }

    #[test]
    fn next_event_budget_exhausted_waits_for_chunk() {
        let q = KnowledgeQueue::new();
        q.enqueue_at("A.", secs(7.0)).unwrap();
        let clock = VirtualClock::new();
        let ev = next_event(&q, &clock, &SilencePolicy::default(), secs(3.0), 3);
        assert_eq!(ev, NextEvent::Chunk { text: "A.".into(), at: secs(7.0) });
    }

    #[test]
    fn everest_turn() {
        let e = engine(
            ScriptedSchedule::new([(3.0, "The answer is Everest.")], 0.0),
            0.15,
            SilencePolicy::default(),
        );
        let t = run_turn("What is the tallest mountain?", &e, &mut ()).unwrap();
        assert_eq!(
            kinds(&t),
            vec![
                (EventKind::Silence, secs(1.0)),
                (EventKind::Silence, secs(2.0)),
                (EventKind::Chunk, secs(3.0)),
            ]
        );
        assert_eq!(t.n(), 3);
        assert_eq!(t.ttft(), Some(secs(1.15)));
        assert_eq!(t.phrases()[2].text, "The answer is Everest.");
    }

    #[test]
    fn fast_backend_suppresses_filler() {
        let e = engine(
            ScriptedSchedule::new([(0.2, "Quick.")], 0.0),
            0.15,
            SilencePolicy::default(),
        );
        let t = run_turn("q", &e, &mut ()).unwrap();
        assert_eq!(kinds(&t), vec![(EventKind::Chunk, secs(0.2))]);
        assert_eq!(t.ttft(), Some(secs(0.35)));
    }

    #[test]
    fn empty_backend_forces_one_silence() {
        let e = engine(
            ScriptedSchedule::new(Vec::<(f64, String)>::new(), 0.1),
            0.15,
            SilencePolicy::default(),
        );
        let t = run_turn("q", &e, &mut ()).unwrap();
        assert_eq!(kinds(&t), vec![(EventKind::Silence, secs(0.1))]);
        assert_eq!(t.phrases()[0].text, "One moment.");
    }

    #[test]
    fn silence_budget_caps_filler() {
        let e = engine(
            ScriptedSchedule::new([(10.0, "Late.")], 0.0),
            0.1,
            SilencePolicy::default(),
        );
        let t = run_turn("q", &e, &mut ()).unwrap();
        assert_eq!(
            kinds(&t),
            vec![
                (EventKind::Silence, secs(1.0)),
                (EventKind::Silence, secs(2.0)),
                (EventKind::Silence, secs(3.0)),
                (EventKind::Chunk, secs(10.0)),
            ]
        );
    }

    #[test]
    fn instant_mode_first_silence_at_zero() {
        let e = engine(
            ScriptedSchedule::new([(2.0, "A.")], 0.0),
            0.16,
            SilencePolicy::instant(1).unwrap(),
        );
        let t = run_turn("q", &e, &mut ()).unwrap();
        assert_eq!(t.events()[0].timestamp, Duration::ZERO);
        assert_eq!(t.ttft(), Some(secs(0.16)));
    }

    #[test]
    fn slow_infill_queues_arrivals() {
        // chunk lands while the first filler is still being generated
        let e = engine(
            ScriptedSchedule::new([(1.2, "A."), (0.1, "B.")], 0.0),
            0.5,
            SilencePolicy::default(),
        );
        let t = run_turn("q", &e, &mut ()).unwrap();
        assert_eq!(
            kinds(&t),
            vec![
                (EventKind::Silence, secs(1.0)),
                (EventKind::Chunk, secs(1.2)),
                (EventKind::Chunk, secs(1.3)),
            ]
        );
        let starts: Vec<_> = t.phrases().iter().map(|p| p.start_timestamp).collect();
        assert_eq!(starts, vec![secs(1.5), secs(2.0), secs(2.5)]);
    }

    struct Failing;
    impl Infill for Failing {
        fn label(&self) -> &str {
            "failing"
        }
        fn generate(&self, _: &str, _: &dyn Clock) -> Result<crate::adapters::Generation, InfillError> {
            Err(InfillError::Network("down".into()))
        }
    }

    #[test]
    fn infill_failure_is_fatal() {
        let e = TurnEngine::new(
            Arc::new(ScriptedBackend::fixed(ScriptedSchedule::new([(0.5, "A.")], 0.0))),
            Arc::new(Failing),
            Arc::new(VirtualClock::new()),
            SilencePolicy::default(),
        );
        let err = run_turn("q", &e, &mut ()).unwrap_err();
        assert!(matches!(err, TurnError::Infill { ref partial, .. } if partial.n() == 0));
    }

    #[test]
    fn empty_phrase_is_infill_failure() {
        let e = TurnEngine::new(
            Arc::new(ScriptedBackend::fixed(ScriptedSchedule::new([(0.5, "A.")], 0.0))),
            Arc::new(ScriptedInfill::constant(secs(0.1), "   ")),
            Arc::new(VirtualClock::new()),
            SilencePolicy::default(),
        );
        assert!(matches!(
            run_turn("q", &e, &mut ()),
            Err(TurnError::Infill { error: InfillError::Empty, .. })
        ));
    }

    struct Aborting;
    impl Backend for Aborting {
        fn label(&self) -> &str {
            "aborting"
        }
        fn start_turn(&self, _: &DialogueHistory, sink: KnowledgeSink) -> Result<(), BackendError> {
            sink.push_chunk_at("First.", secs(0.5)).unwrap();
            sink.push_chunk_at("Second.", secs(2.5)).unwrap();
            // abort lands with the second chunk: only the first gets answered
            sink.fail(BackendError::Network("reset".into()));
            Ok(())
        }
    }

    #[test]
    fn backend_failure_keeps_balanced_prefix() {
        let e = TurnEngine::new(
            Arc::new(Aborting),
            Arc::new(ScriptedInfill::echo(secs(0.1))),
            Arc::new(VirtualClock::new()),
            SilencePolicy::default(),
        );
        let err = run_turn("q", &e, &mut ()).unwrap_err();
        let TurnError::Backend { partial, error } = err else { panic!() };
        assert_eq!(error, BackendError::Network("reset".into()));
        assert_eq!(partial.n(), 2);
        assert_eq!(partial.events()[0].text.as_deref(), Some("First."));
        assert!(partial.events()[1].is_silence());
    }

    #[test]
    fn conversation_accumulates_history() {
        let backend = Arc::new(ScriptedBackend::fixed(ScriptedSchedule::new([(0.3, "Fact.")], 0.0)));
        let e = TurnEngine::new(
            backend.clone(),
            Arc::new(ScriptedInfill::echo(secs(0.1))),
            Arc::new(VirtualClock::new()),
            SilencePolicy::default(),
        );
        let mut d = Dialogue::new(e, Conversation::new("c", "assistant"));
        let conv = d.run_conversation(["first?", "second?", "third?"]).unwrap().clone();
        assert_eq!(conv.turns().len(), 3);
        let reqs = backend.requests();
        for (k, h) in reqs.iter().enumerate() {
            assert_eq!(h.len(), 2 * k + 1);
            assert!(h.is_alternating());
        }
        assert_eq!(reqs[1].messages()[1].text, "Fact.");
        assert_eq!(d.history().len(), 6);
    }

    #[test]
    fn single_turn_conversation_matches_run_turn() {
        let mk = || {
            TurnEngine::new(
                Arc::new(ScriptedBackend::fixed(ScriptedSchedule::new([(2.5, "X.")], 0.0))),
                Arc::new(ScriptedInfill::echo(secs(0.15))),
                Arc::new(VirtualClock::new()),
                SilencePolicy::default(),
            )
        };
        let direct = run_turn("q", &mk(), &mut ()).unwrap();
        let mut d = Dialogue::new(mk(), Conversation::new("c", ""));
        let conv = d.run_conversation(["q"]).unwrap();
        assert_eq!(conv.turns(), &[direct]);
    }

    #[test]
    fn failed_turn_rolls_back_history() {
        let e = TurnEngine::new(
            Arc::new(Aborting),
            Arc::new(ScriptedInfill::echo(secs(0.1))),
            Arc::new(VirtualClock::new()),
            SilencePolicy::default(),
        );
        let mut d = Dialogue::new(e, Conversation::new("c", ""));
        let err = d.run_turn("q", &mut ()).unwrap_err();
        assert_eq!(err.turn_index, 0);
        assert!(d.history().is_empty());
        assert!(d.conversation().turns().is_empty());
    }
}
