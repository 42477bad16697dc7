//! The streamed knowledge queue shared by the backend reader and the infill
//! loop.
//!
//! Producers stamp every chunk with its arrival time. A chunk is visible to
//! the consumer once the clock reaches its arrival, which lets scripted
//! backends pre-load a whole schedule while live backends push as text comes
//! in. The consumer dequeues with a deadline: it gets the oldest visible
//! chunk, the end of the stream, or the deadline, whichever comes first.

use std::collections::VecDeque;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use thiserror::Error;

use crate::adapters::BackendError;
use crate::prompt::SILENCE_TOKEN;
use crate::segment::StreamSegmenter;
use crate::time::Clock;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum QueueError {
    #[error("queue is closed")]
    Closed,
    #[error("chunk is empty")]
    EmptyChunk,
    #[error("arrival {got:?} precedes previous arrival {floor:?}")]
    OutOfOrder { got: Duration, floor: Duration },
}

/// How a backend stream finished.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StreamEnd {
    Complete,
    Failed(BackendError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Dequeued {
    Chunk { text: String, arrival: Duration },
    Deadline(Duration),
    End { at: Duration, outcome: StreamEnd },
}

#[derive(Debug, Default)]
struct QueueState {
    pending: VecDeque<(String, Duration)>,
    last_arrival: Duration,
    end: Option<(Duration, StreamEnd)>,
    first_activity: Option<Duration>,
}

#[derive(Debug, Default)]
pub struct KnowledgeQueue {
    state: Mutex<QueueState>,
    cv: Condvar,
}

impl KnowledgeQueue {
    pub fn new() -> Self {
        Self::default()
    }

    /// Enqueues a chunk that becomes visible at `arrival`.
    pub fn enqueue_at(&self, text: &str, arrival: Duration) -> Result<(), QueueError> {
        let text = text.trim();
        if text.is_empty() {
            return Err(QueueError::EmptyChunk);
        }
        let mut st = self.state.lock().unwrap();
        if st.end.is_some() {
            return Err(QueueError::Closed);
        }
        if arrival < st.last_arrival {
            return Err(QueueError::OutOfOrder {
                got: arrival,
                floor: st.last_arrival,
            });
        }
        st.last_arrival = arrival;
        st.first_activity.get_or_insert(arrival);
        st.pending.push_back((text.to_string(), arrival));
        drop(st);
        self.cv.notify_all();
        Ok(())
    }

    /// Marks the stream finished at `at` (never earlier than the last
    /// arrival). Later calls are ignored.
    pub fn finish_at(&self, at: Duration, outcome: StreamEnd) {
        let mut st = self.state.lock().unwrap();
        if st.end.is_none() {
            let at = at.max(st.last_arrival);
            st.end = Some((at, outcome));
        }
        drop(st);
        self.cv.notify_all();
    }

    pub fn note_activity(&self, at: Duration) {
        self.state.lock().unwrap().first_activity.get_or_insert(at);
    }

    /// Time the backend first produced any text.
    pub fn first_activity(&self) -> Option<Duration> {
        self.state.lock().unwrap().first_activity
    }

    pub fn is_closed(&self) -> bool {
        self.state.lock().unwrap().end.is_some()
    }

    /// Waits for the next chunk, the end of the stream, or `deadline`.
    ///
    /// Ties go to the chunk, then to the end of the stream. A failed stream
    /// ends immediately even if scheduled chunks remain. Under a virtual
    /// clock, waiting advances time; if there is nothing left to wait for the
    /// stream is reported as stalled.
    pub fn dequeue(&self, clock: &dyn Clock, deadline: Option<Duration>) -> Dequeued {
        let mut st = self.state.lock().unwrap();
        loop {
            let now = clock.now();
            let failed = matches!(st.end, Some((at, StreamEnd::Failed(_))) if at <= now);
            if !failed && st.pending.front().is_some_and(|(_, a)| *a <= now) {
                let (text, arrival) = st.pending.pop_front().unwrap();
                return Dequeued::Chunk { text, arrival };
            }
            if let Some((at, outcome)) = &st.end {
                if *at <= now && (st.pending.is_empty() || matches!(outcome, StreamEnd::Failed(_))) {
                    return Dequeued::End {
                        at: *at,
                        outcome: outcome.clone(),
                    };
                }
            }
            if let Some(d) = deadline {
                if d <= now {
                    return Dequeued::Deadline(d);
                }
            }
            let wake = [
                st.pending.front().map(|(_, a)| *a),
                st.end.as_ref().map(|(at, _)| *at),
                deadline,
            ]
            .into_iter()
            .flatten()
            .min();
            if clock.is_virtual() {
                match wake {
                    Some(w) => clock.sleep_until(w),
                    None => {
                        return Dequeued::End {
                            at: now,
                            outcome: StreamEnd::Failed(BackendError::Stalled),
                        }
                    }
                }
            } else {
                st = match wake {
                    Some(w) => self.cv.wait_timeout(st, w.saturating_sub(now)).unwrap().0,
                    None => self.cv.wait(st).unwrap(),
                };
            }
        }
    }
}

/// Producer handle given to a backend for one turn.
#[derive(Clone)]
pub struct KnowledgeSink {
    queue: Arc<KnowledgeQueue>,
    clock: Arc<dyn Clock>,
    segmenter: Arc<Mutex<StreamSegmenter>>,
}

fn strip_silence(text: &str) -> std::borrow::Cow<'_, str> {
    if text.contains(SILENCE_TOKEN) {
        tracing::warn!("backend emitted the silence literal; dropping it");
        text.replace(SILENCE_TOKEN, "").into()
    } else {
        text.into()
    }
}

impl KnowledgeSink {
    pub fn new(queue: Arc<KnowledgeQueue>, clock: Arc<dyn Clock>) -> Self {
        Self {
            queue,
            clock,
            segmenter: Arc::new(Mutex::new(StreamSegmenter::new())),
        }
    }

    pub fn now(&self) -> Duration {
        self.clock.now()
    }

    /// Feeds raw incremental text; complete sentences are enqueued now.
    pub fn push_text(&self, delta: &str) -> Result<(), QueueError> {
        let now = self.clock.now();
        if !delta.trim().is_empty() {
            self.queue.note_activity(now);
        }
        let chunks = self.segmenter.lock().unwrap().push(&strip_silence(delta));
        for c in chunks {
            self.queue.enqueue_at(&c, now)?;
        }
        Ok(())
    }

    /// Enqueues one chunk that becomes visible at `arrival`.
    pub fn push_chunk_at(&self, text: &str, arrival: Duration) -> Result<(), QueueError> {
        self.queue.enqueue_at(&strip_silence(text), arrival)
    }

    /// Flushes any partial sentence and closes the stream now.
    pub fn finish(&self) {
        let now = self.clock.now();
        if let Some(rest) = self.segmenter.lock().unwrap().finish() {
            let _ = self.queue.enqueue_at(&rest, now);
        }
        self.queue.finish_at(now, StreamEnd::Complete);
    }

    pub fn close_at(&self, at: Duration) {
        self.queue.finish_at(at, StreamEnd::Complete);
    }

    pub fn fail(&self, error: BackendError) {
        self.queue.finish_at(self.clock.now(), StreamEnd::Failed(error));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::{secs, SystemClock, VirtualClock};

    #[test]
    fn visible_only_after_arrival() {
        let clock = VirtualClock::new();
        let q = KnowledgeQueue::new();
        q.enqueue_at("A.", secs(2.5)).unwrap();
        assert_eq!(q.dequeue(&clock, Some(secs(1.0))), Dequeued::Deadline(secs(1.0)));
        assert_eq!(clock.now(), secs(1.0));
        assert_eq!(
            q.dequeue(&clock, Some(secs(3.0))),
            Dequeued::Chunk { text: "A.".into(), arrival: secs(2.5) }
        );
    }

    #[test]
    fn chunk_wins_ties() {
        let clock = VirtualClock::new();
        let q = KnowledgeQueue::new();
        q.enqueue_at("A.", secs(1.0)).unwrap();
        q.finish_at(secs(1.0), StreamEnd::Complete);
        assert!(matches!(q.dequeue(&clock, Some(secs(1.0))), Dequeued::Chunk { .. }));
        assert!(matches!(
            q.dequeue(&clock, Some(secs(1.0))),
            Dequeued::End { outcome: StreamEnd::Complete, .. }
        ));
    }

    #[test]
    fn rejects_after_close_and_out_of_order() {
        let q = KnowledgeQueue::new();
        q.enqueue_at("B.", secs(2.0)).unwrap();
        assert!(matches!(q.enqueue_at("A.", secs(1.0)), Err(QueueError::OutOfOrder { .. })));
        assert_eq!(q.enqueue_at("  ", secs(3.0)), Err(QueueError::EmptyChunk));
        q.finish_at(secs(1.0), StreamEnd::Complete);
        assert_eq!(q.enqueue_at("C.", secs(3.0)), Err(QueueError::Closed));
    }

    #[test]
    fn close_not_before_last_arrival() {
        let clock = VirtualClock::new();
        let q = KnowledgeQueue::new();
        q.enqueue_at("A.", secs(2.0)).unwrap();
        q.finish_at(secs(0.5), StreamEnd::Complete);
        assert!(matches!(q.dequeue(&clock, None), Dequeued::Chunk { .. }));
        assert_eq!(
            q.dequeue(&clock, None),
            Dequeued::End { at: secs(2.0), outcome: StreamEnd::Complete }
        );
    }

    #[test]
    fn failure_preempts_scheduled_chunks() {
        let clock = VirtualClock::new();
        let q = KnowledgeQueue::new();
        q.enqueue_at("late.", secs(5.0)).unwrap();
        q.finish_at(secs(5.0), StreamEnd::Failed(BackendError::Network("reset".into())));
        // failure time is clamped to the last arrival, so it surfaces at 5.0
        assert!(matches!(
            q.dequeue(&clock, None),
            Dequeued::End { outcome: StreamEnd::Failed(BackendError::Network(_)), .. }
        ));
    }

    #[test]
    fn virtual_stall_is_reported() {
        let clock = VirtualClock::new();
        let q = KnowledgeQueue::new();
        assert!(matches!(
            q.dequeue(&clock, None),
            Dequeued::End { outcome: StreamEnd::Failed(BackendError::Stalled), .. }
        ));
    }

    #[test]
    fn sink_segments_and_strips_marker() {
        let clock: Arc<dyn Clock> = Arc::new(VirtualClock::new());
        let q = Arc::new(KnowledgeQueue::new());
        let sink = KnowledgeSink::new(q.clone(), clock.clone());
        sink.push_text("X. Y").unwrap();
        sink.push_text(" <|sil|>Z.").unwrap();
        sink.finish();
        let mut got = Vec::new();
        while let Dequeued::Chunk { text, .. } = q.dequeue(clock.as_ref(), None) {
            got.push(text);
        }
        assert_eq!(got, vec!["X.", "Y Z."]);
    }

    #[test]
    fn wall_clock_consumer_wakes_on_push() {
        let clock: Arc<dyn Clock> = Arc::new(SystemClock::new());
        let q = Arc::new(KnowledgeQueue::new());
        let producer = {
            let q = q.clone();
            let clock = clock.clone();
            std::thread::spawn(move || {
                std::thread::sleep(Duration::from_millis(30));
                q.enqueue_at("hello.", clock.now()).unwrap();
            })
        };
        let got = q.dequeue(clock.as_ref(), Some(clock.now() + Duration::from_secs(5)));
        producer.join().unwrap();
        assert!(matches!(got, Dequeued::Chunk { ref text, .. } if text == "hello."));
        assert!(clock.now() < Duration::from_secs(2));
    }
}
