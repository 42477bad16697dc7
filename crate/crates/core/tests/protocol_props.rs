use std::time::Duration;

use proptest::prelude::*;

use convfill::prompt::{parse_context, render_context, TurnRecord};
use convfill::{EventKind, ProtocolError, TurnState, TurnTranscript};

#[derive(Debug, Clone)]
enum Op {
    Chunk(String, u64),
    Silence(u64),
    Phrase(String, u64),
    Close,
}

fn text() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9 ,.'?!\n]{0,24}"
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        (text(), 0u64..5_000).prop_map(|(t, ms)| Op::Chunk(t, ms)),
        (0u64..5_000).prop_map(Op::Silence),
        (text(), 0u64..5_000).prop_map(|(t, ms)| Op::Phrase(t, ms)),
        Just(Op::Close),
    ]
}

fn ms(v: u64) -> Duration {
    Duration::from_millis(v)
}

proptest! {
    #[test]
    fn state_machine_never_breaks_its_invariants(ops in proptest::collection::vec(op(), 0..40)) {
        let mut s = TurnState::open("How do I get there?").unwrap();
        let mut closed: Option<TurnTranscript> = None;
        for op in ops {
            let before = s.clone();
            let r = match &op {
                Op::Chunk(t, v) => s.push_chunk(t, ms(*v)).map(|_| ()),
                Op::Silence(v) => s.push_silence(ms(*v)).map(|_| ()),
                Op::Phrase(t, v) => s.append_phrase(t, ms(*v)).map(|_| ()),
                Op::Close => s.close().map(|t| closed = Some(t)),
            };
            if r.is_err() {
                prop_assert_eq!(&s, &before, "a rejected operation mutated the turn");
            }
            if closed.is_some() {
                prop_assert!(matches!(s.push_silence(ms(9_999)), Err(ProtocolError::ClosedTurn)));
                break;
            }
            let (e, p) = (s.events().len(), s.phrases().len());
            prop_assert!(e == p || e == p + 1);
            for w in s.events().windows(2) {
                prop_assert!(w[0].timestamp <= w[1].timestamp);
            }
            for (i, ph) in s.phrases().iter().enumerate() {
                prop_assert!(ph.start_timestamp >= s.events()[i].timestamp);
            }
        }
        if let Some(t) = closed {
            prop_assert_eq!(t.events().len(), t.phrases().len());
            prop_assert_eq!(t.silence_count() + t.chunk_count(), t.n());
            prop_assert_eq!(TurnTranscript::from_json(&t.to_json()).unwrap(), t);
        }
    }

    #[test]
    fn every_context_parses_back(
        user in "[a-zA-Z ?]{1,20}",
        slots in proptest::collection::vec((any::<bool>(), text(), text()), 1..8),
    ) {
        prop_assume!(!user.trim().is_empty());
        let mut s = TurnState::open(&user).unwrap();
        let mut t = 0;
        for (silent, chunk, phrase) in slots {
            t += 10;
            let pushed = if silent || chunk.trim().is_empty() {
                s.push_silence(ms(t))
            } else {
                s.push_chunk(&chunk, ms(t))
            };
            pushed.unwrap();
            let rendered = render_context(&s).unwrap();
            let rec = parse_context(&rendered).unwrap();
            prop_assert_eq!(&rec, &TurnRecord::of_state(&s));
            prop_assert_eq!(rec.render_context().unwrap(), rendered);
            let last = s.events().last().unwrap();
            let slot = rec.events.last().unwrap();
            prop_assert_eq!(slot.kind(), last.kind);
            prop_assert_eq!(slot.kind() == EventKind::Silence, last.is_silence());
            let p = if phrase.trim().is_empty() { "Okay." } else { phrase.as_str() };
            s.append_phrase(p, ms(t + 1)).unwrap();
        }
    }
}
