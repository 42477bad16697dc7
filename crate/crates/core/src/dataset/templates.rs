//! Deterministic template generator. Every chunk-conditioned phrase is the
//! chunk itself behind an optional stopword lead-in, so the chunk contains
//! all of the phrase's content words.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{parse_domain, ConversationDocument, DatasetError, DocTurn, MAX_TURNS, MIN_TURNS};
use crate::prompt::SILENCE_TOKEN;
use crate::protocol::Domain;

struct Bank {
    subjects: &'static [&'static str],
    facts: &'static [&'static str],
}

const MEDICAL: Bank = Bank {
    subjects: &["the fever", "the rash", "the cough", "the pain", "the medication", "the clinic visit", "the test results", "the recovery"],
    facts: &[
        "For {s}, most people feel better within {n} days.",
        "The usual dose for {s} is taken every {n} hours.",
        "The walk-in clinic sees patients about {s} from {t} on {d}.",
        "Drinking water and resting for {n} days helps with {s}.",
        "A doctor should look at {s} if it lasts past {n} days.",
        "Pharmacists answer questions about {s} until {t}.",
    ],
};

const CUSTOMER_SERVICE: Bank = Bank {
    subjects: &["the order", "the refund", "the invoice", "the replacement", "the account", "the delivery", "the warranty", "the subscription"],
    facts: &[
        "Requests about {s} are handled within {n} business days.",
        "The support line for {s} opens at {t} on {d}.",
        "You can track {s} online with the reference number.",
        "A replacement for {s} ships within {n} days.",
        "Credits for {s} appear on the next statement.",
        "The team reviews {s} every {d} morning.",
    ],
};

const EDUCATION: Bank = Bank {
    subjects: &["the chapter", "the homework", "the exam", "the essay", "the lab report", "the reading list", "the study plan", "the lecture notes"],
    facts: &[
        "Students usually spend {n} hours on {s}.",
        "Office hours for {s} start at {t} on {d}.",
        "Breaking {s} into {n} short sessions improves recall.",
        "The library keeps extra copies of {s} at the front desk.",
        "Practice questions for {s} are posted every {d}.",
        "Summaries of {s} fit on {n} pages.",
    ],
};

const ADVICE: Bank = Bank {
    subjects: &["the budget", "the first step", "the schedule", "the conversation", "the checklist", "the savings goal", "the routine", "the decision"],
    facts: &[
        "Setting aside {n} minutes a day makes {s} manageable.",
        "Writing down {s} on {d} keeps the week on track.",
        "Most people revisit {s} after {n} weeks.",
        "Starting {s} at {t} leaves room for surprises.",
        "A friend can review {s} in about {n} minutes.",
        "Keeping {s} simple works best for beginners.",
    ],
};

const ASSISTANT: Bank = Bank {
    subjects: &["the appointment", "the email draft", "the calendar invite", "the reminder", "the spreadsheet", "the itinerary", "the shopping list", "the meeting notes"],
    facts: &[
        "I can set {s} for {t} on {d}.",
        "The draft of {s} is {n} sentences long.",
        "A copy of {s} goes to your inbox.",
        "Sharing {s} with {n} people takes one click.",
        "The next free slot for {s} is {d} at {t}.",
        "Reminders for {s} repeat every {n} days.",
    ],
};

const PLANNING: Bank = Bank {
    subjects: &["the venue", "the budget", "the guest list", "the menu", "the travel plan", "the timeline", "the packing list", "the booking"],
    facts: &[
        "Most groups confirm {s} about {n} weeks ahead.",
        "The best time to finalize {s} is {d} at {t}.",
        "Keeping {s} to {n} items makes the day easier.",
        "Prices for {s} drop on {d}.",
        "A shared document keeps {s} visible to everyone.",
        "Setting {s} by {t} leaves {n} hours for setup.",
    ],
};

const FOLLOW_UPS: &[&str] = &[
    "What about {s}?",
    "How should I handle {s}?",
    "Is there anything I should know about {s}?",
    "Can you tell me more about {s}?",
    "Thanks. And {s}?",
    "When do I need to deal with {s}?",
    "Okay, what's next for {s}?",
];

const LEAD_INS: &[&str] = &["", "So,", "And", "Also,", "Then,"];

const FILLERS: &[&str] = &[
    "Let me check on that.",
    "Good question.",
    "Hmm, one moment.",
    "Sure, let me think.",
    "Okay, give me a second.",
    "Right, bear with me.",
];

const DAYS: &[&str] = &["Monday", "Tuesday", "Wednesday", "Thursday", "Friday", "Saturday", "Sunday"];
const TIMES: &[&str] = &["8 am", "9 am", "10 am", "noon", "2 pm", "4 pm", "6 pm"];

fn bank(domain: Domain) -> &'static Bank {
    match domain {
        Domain::Medical => &MEDICAL,
        Domain::CustomerService => &CUSTOMER_SERVICE,
        Domain::Education => &EDUCATION,
        Domain::Advice => &ADVICE,
        Domain::Assistant => &ASSISTANT,
        Domain::Planning => &PLANNING,
    }
}

fn fnv1a(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for p in parts {
        for b in *p {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        h ^= 0xff;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn pick<'a>(rng: &mut ChaCha8Rng, xs: &'a [&'a str]) -> &'a str {
    xs.choose(rng).copied().expect("template lists are non-empty")
}

fn fill(template: &str, subject: &str, rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(2..=12).to_string();
    template
        .replace("{s}", subject)
        .replace("{n}", &n)
        .replace("{d}", pick(rng, DAYS))
        .replace("{t}", pick(rng, TIMES))
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn lead_in(lead: &str, chunk: &str) -> String {
    if lead.is_empty() {
        return chunk.to_string();
    }
    let mut it = chunk.splitn(2, ' ');
    let first = it.next().unwrap_or_default();
    let rest = it.next().unwrap_or_default();
    let first = if first == "I" { first.to_string() } else { first.to_lowercase() };
    format!("{lead} {first} {rest}")
}

fn opening(domain: Domain, seed: &str) -> String {
    if domain.uses_personas() {
        format!("Hi, I am {seed}. Where should I start?")
    } else {
        format!("Can you help me with {seed}?")
    }
}

fn gen_turn(rng: &mut ChaCha8Rng, b: &Bank, user: String, subject: &str) -> DocTurn {
    let mut turn = DocTurn {
        user,
        responder: Vec::new(),
        responder_thoughts: Vec::new(),
    };
    let silence = |turn: &mut DocTurn, rng: &mut ChaCha8Rng| {
        turn.responder_thoughts.push(SILENCE_TOKEN.to_string());
        turn.responder.push(pick(rng, FILLERS).to_string());
    };
    if rng.random_bool(0.5) {
        silence(&mut turn, rng);
    }
    let chunks = rng.random_range(1..=3);
    for i in 0..chunks {
        if i > 0 && rng.random_bool(0.15) {
            silence(&mut turn, rng);
        }
        let chunk = fill(pick(rng, b.facts), subject, rng);
        let chunk = capitalize(&chunk);
        let lead = if i == 0 { "" } else { pick(rng, LEAD_INS) };
        turn.responder.push(lead_in(lead, &chunk));
        turn.responder_thoughts.push(chunk);
    }
    turn
}

/// Builds a schema-valid 8-12 turn document. The output depends only on the
/// arguments.
pub fn template_generate(domain: &str, seed: &str, rng_seed: u64) -> Result<ConversationDocument, DatasetError> {
    let d = parse_domain(domain)?;
    let seed = seed.trim();
    let h = fnv1a(&[d.as_str().as_bytes(), seed.as_bytes()]);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed ^ h);
    let b = bank(d);
    let n_turns = rng.random_range(MIN_TURNS..=MAX_TURNS);
    let mut turns = Vec::with_capacity(n_turns);
    for i in 0..n_turns {
        let subject = pick(&mut rng, b.subjects);
        let user = if i == 0 {
            opening(d, seed)
        } else {
            pick(&mut rng, FOLLOW_UPS).replace("{s}", subject)
        };
        turns.push(gen_turn(&mut rng, b, user, subject));
    }
    Ok(ConversationDocument {
        id: format!("{}-{:016x}", d.as_str(), fnv1a(&[&h.to_le_bytes(), &rng_seed.to_le_bytes()])),
        domain: d.as_str().to_string(),
        seed: seed.to_string(),
        turns,
    })
}
