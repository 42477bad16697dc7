use std::sync::Arc;

use convfill::engine::{Dialogue, TurnObserver};
use convfill::{as_secs, Conversation, ConversationalPhrase, EventKind, KnowledgeEvent};

use crate::args::TurnArgs;
use crate::load_config;

struct Timeline;

impl TurnObserver for Timeline {
    fn on_event(&mut self, e: &KnowledgeEvent) {
        match e.kind {
            EventKind::Silence => println!("{:>8.3}s  knowledge  <silence>", as_secs(e.timestamp)),
            EventKind::Chunk => println!("{:>8.3}s  knowledge  {}", as_secs(e.timestamp), e.text.as_deref().unwrap_or("")),
        }
    }

    fn on_phrase(&mut self, p: &ConversationalPhrase) {
        println!("{:>8.3}s  assistant  {}", as_secs(p.start_timestamp), p.text);
    }
}

pub fn run(a: TurnArgs) -> anyhow::Result<()> {
    let cfg = load_config(a.config.as_deref(), &a.sets)?;
    let clock = cfg.build_clock();
    let engine = cfg.build_engine(Arc::clone(&clock))?;
    let mut dialogue = Dialogue::new(engine, Conversation::new("cli", "cli"));
    for u in &a.utterances {
        if a.json {
            dialogue.run_turn(u, &mut ())?;
        } else {
            println!("user: {u}");
            let t = dialogue.run_turn(u, &mut Timeline)?;
            let ttft = t.ttft().map_or("-".to_string(), |d| format!("{:.3}s", as_secs(d)));
            println!("ttft {ttft}, {} phrases ({} chunks, {} silences)\n", t.n(), t.chunk_count(), t.silence_count());
        }
    }
    if a.json {
        println!("{}", serde_json::to_string_pretty(dialogue.conversation())?);
    }
    Ok(())
}
