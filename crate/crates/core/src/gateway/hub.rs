use std::collections::VecDeque;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use super::{FrameKind, StreamEvent};

struct Inbox {
    queue: VecDeque<StreamEvent>,
    closed: bool,
}

struct Shared {
    inbox: Mutex<Inbox>,
    ready: Condvar,
}

impl Shared {
    fn close(&self) {
        self.inbox.lock().unwrap().closed = true;
        self.ready.notify_all();
    }
}

/// Receiving end of a session feed. Yields the replayed frames first, then
/// live ones; returns `None` once disconnected and drained.
pub struct Subscription {
    shared: Arc<Shared>,
}

impl Subscription {
    pub fn recv(&self) -> Option<StreamEvent> {
        let mut inbox = self.shared.inbox.lock().unwrap();
        loop {
            if let Some(f) = inbox.queue.pop_front() {
                return Some(f);
            }
            if inbox.closed {
                return None;
            }
            inbox = self.shared.ready.wait(inbox).unwrap();
        }
    }

    /// `Ok(None)` means disconnected; `Err(())` means nothing arrived in time.
    #[allow(clippy::result_unit_err)]
    pub fn recv_timeout(&self, timeout: Duration) -> Result<Option<StreamEvent>, ()> {
        let until = Instant::now() + timeout;
        let mut inbox = self.shared.inbox.lock().unwrap();
        loop {
            if let Some(f) = inbox.queue.pop_front() {
                return Ok(Some(f));
            }
            if inbox.closed {
                return Ok(None);
            }
            let now = Instant::now();
            if now >= until {
                return Err(());
            }
            inbox = self.shared.ready.wait_timeout(inbox, until - now).unwrap().0;
        }
    }

    pub fn try_recv(&self) -> Option<StreamEvent> {
        self.shared.inbox.lock().unwrap().queue.pop_front()
    }

    /// Frames currently buffered.
    pub fn pending(&self) -> usize {
        self.shared.inbox.lock().unwrap().queue.len()
    }
}

impl Drop for Subscription {
    fn drop(&mut self) {
        self.shared.close();
    }
}

struct HubState {
    turn_index: usize,
    next_seq: u64,
    log: Vec<StreamEvent>,
    subscribers: Vec<Arc<Shared>>,
}

/// Per-session fan-out with replay of the current turn.
pub struct EventHub {
    session_id: String,
    capacity: usize,
    state: Mutex<HubState>,
}

impl EventHub {
    /// `capacity` bounds each subscriber's backlog of live frames.
    pub fn new(session_id: impl Into<String>, capacity: usize) -> Self {
        Self {
            session_id: session_id.into(),
            capacity: capacity.max(1),
            state: Mutex::new(HubState {
                turn_index: 0,
                next_seq: 0,
                log: Vec::new(),
                subscribers: Vec::new(),
            }),
        }
    }

    pub fn begin_turn(&self, turn_index: usize) {
        let mut st = self.state.lock().unwrap();
        st.turn_index = turn_index;
        st.next_seq = 0;
        st.log.clear();
    }

    /// Stamps `frame` with session, turn and the next seq, then delivers it.
    /// Subscribers whose backlog is full get an error frame and are dropped.
    pub fn publish(&self, mut frame: StreamEvent) -> StreamEvent {
        let mut st = self.state.lock().unwrap();
        frame.session_id.clone_from(&self.session_id);
        frame.turn_index = st.turn_index;
        frame.seq = st.next_seq;
        st.next_seq += 1;
        let cap = self.capacity;
        st.subscribers.retain(|sub| {
            let mut inbox = sub.inbox.lock().unwrap();
            if inbox.closed {
                return false;
            }
            if inbox.queue.len() >= cap {
                let mut err = frame.clone();
                err.kind = FrameKind::Error;
                err.text = Some("subscriber fell behind and was disconnected".into());
                inbox.queue.push_back(err);
                inbox.closed = true;
                drop(inbox);
                sub.ready.notify_all();
                tracing::warn!(session = %frame.session_id, "dropping slow subscriber");
                return false;
            }
            inbox.queue.push_back(frame.clone());
            drop(inbox);
            sub.ready.notify_all();
            true
        });
        if frame.kind == FrameKind::TurnDone {
            st.log.clear();
        } else {
            st.log.push(frame.clone());
        }
        frame
    }

    /// A feed starting with the current turn's frames so far.
    pub fn subscribe(&self) -> Subscription {
        let mut st = self.state.lock().unwrap();
        let shared = Arc::new(Shared {
            inbox: Mutex::new(Inbox {
                queue: st.log.iter().cloned().collect(),
                closed: false,
            }),
            ready: Condvar::new(),
        });
        st.subscribers.push(shared.clone());
        Subscription { shared }
    }

    pub fn subscriber_count(&self) -> usize {
        let mut st = self.state.lock().unwrap();
        st.subscribers.retain(|s| !s.inbox.lock().unwrap().closed);
        st.subscribers.len()
    }

    /// Frames of the turn in progress.
    pub fn replay_log(&self) -> Vec<StreamEvent> {
        self.state.lock().unwrap().log.clone()
    }

    /// Disconnects every subscriber.
    pub fn close_all(&self) {
        let mut st = self.state.lock().unwrap();
        for s in st.subscribers.drain(..) {
            s.close();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tick() -> StreamEvent {
        StreamEvent::new(FrameKind::SilenceTick)
    }

    #[test]
    fn replay_then_live() {
        let hub = EventHub::new("s", 16);
        hub.begin_turn(0);
        for _ in 0..3 {
            hub.publish(tick());
        }
        let sub = hub.subscribe();
        hub.publish(tick());
        let seqs: Vec<u64> = (0..4).map(|_| sub.recv().unwrap().seq).collect();
        assert_eq!(seqs, vec![0, 1, 2, 3]);
        assert!(sub.try_recv().is_none());
    }

    #[test]
    fn turn_done_clears_replay() {
        let hub = EventHub::new("s", 16);
        hub.begin_turn(0);
        hub.publish(tick());
        hub.publish(StreamEvent::new(FrameKind::TurnDone));
        assert!(hub.replay_log().is_empty());
        let sub = hub.subscribe();
        assert_eq!(sub.recv_timeout(Duration::from_millis(10)), Err(()));
    }

    #[test]
    fn slow_subscriber_is_cut_off() {
        let hub = EventHub::new("s", 2);
        hub.begin_turn(0);
        let slow = hub.subscribe();
        let fast = hub.subscribe();
        for _ in 0..5 {
            hub.publish(tick());
            while fast.try_recv().is_some() {}
        }
        let kinds: Vec<FrameKind> = std::iter::from_fn(|| slow.recv()).map(|f| f.kind).collect();
        assert_eq!(kinds, vec![FrameKind::SilenceTick, FrameKind::SilenceTick, FrameKind::Error]);
        assert_eq!(hub.subscriber_count(), 1);
    }

    #[test]
    fn dropped_subscription_is_pruned() {
        let hub = EventHub::new("s", 4);
        let sub = hub.subscribe();
        assert_eq!(hub.subscriber_count(), 1);
        drop(sub);
        assert_eq!(hub.subscriber_count(), 0);
    }
}
