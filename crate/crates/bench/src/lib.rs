//! Fixtures shared by the criterion benchmarks under `benches/`.

use std::sync::Arc;

use convfill::adapters::{ScriptedBackend, ScriptedInfill, ScriptedSchedule};
use convfill::{secs, SilencePolicy, TurnEngine, TurnState, VirtualClock};

/// An open turn with `n` events, every third one a silence, the last
/// one unanswered.
pub fn open_turn(n: usize) -> TurnState {
    let mut s = TurnState::open("What should I pack for a week in Lisbon?").unwrap();
    for i in 0..n {
        let t = secs(i as f64);
        if i % 3 == 0 {
            s.push_silence(t).unwrap();
        } else {
            s.push_chunk(&format!("Pack light layers because day {i} can turn windy by the river."), t)
                .unwrap();
        }
        if i + 1 < n {
            s.append_phrase(&format!("Bring a light jacket for day {i}."), t).unwrap();
        }
    }
    s
}

/// A streamed backend reply: `sentences` sentences split across small deltas.
pub fn streamed_reply(sentences: usize) -> Vec<String> {
    let text: String = (0..sentences)
        .map(|i| format!("Sentence {i} mentions 3.5 km, Dr. Rossi and the 9 am ferry. "))
        .collect();
    text.as_bytes()
        .chunks(7)
        .map(|c| String::from_utf8_lossy(c).into_owned())
        .collect()
}

/// A virtual-clock engine whose backend sends `chunks` chunks 0.7 s apart.
pub fn virtual_engine(chunks: usize) -> TurnEngine {
    let schedule = ScriptedSchedule::new(
        (0..chunks).map(|i| (0.7, format!("Fact {i} about the ferry timetable."))),
        0.1,
    );
    TurnEngine::new(
        Arc::new(ScriptedBackend::fixed(schedule)),
        Arc::new(ScriptedInfill::echo(secs(0.16))),
        Arc::new(VirtualClock::new()),
        SilencePolicy::new(0.5, 3).unwrap(),
    )
}
