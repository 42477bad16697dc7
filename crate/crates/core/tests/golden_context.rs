use convfill::prompt::{parse_context, render_context, KnowledgeSlot};
use convfill::{secs, TurnState};

const GOLDEN: &str = include_str!("fixtures/museum_context.txt");

fn museum_turn() -> TurnState {
    let mut s = TurnState::open("When is the museum open?").unwrap();
    s.push_silence(secs(1.0)).unwrap();
    s.append_phrase("Let me check the hours for you.", secs(1.16)).unwrap();
    s.push_chunk("The museum opens at 9 am on weekdays.", secs(1.4)).unwrap();
    s.append_phrase("It opens at 9 am on weekdays.", secs(1.56)).unwrap();
    s.push_silence(secs(2.4)).unwrap();
    s.append_phrase("One more thing.", secs(2.56)).unwrap();
    s.push_chunk("It is closed on Mondays.", secs(2.9)).unwrap();
    s
}

#[test]
fn rendering_matches_the_golden_file() {
    assert_eq!(render_context(&museum_turn()).unwrap(), GOLDEN);
}

#[test]
fn golden_file_parses_to_the_turn() {
    let rec = parse_context(GOLDEN).unwrap();
    assert_eq!(rec.user, "When is the museum open?");
    assert_eq!(
        rec.events,
        vec![
            KnowledgeSlot::Silence,
            KnowledgeSlot::Chunk("The museum opens at 9 am on weekdays.".into()),
            KnowledgeSlot::Silence,
            KnowledgeSlot::Chunk("It is closed on Mondays.".into()),
        ]
    );
    assert_eq!(
        rec.phrases,
        ["Let me check the hours for you.", "It opens at 9 am on weekdays.", "One more thing."]
    );
}
