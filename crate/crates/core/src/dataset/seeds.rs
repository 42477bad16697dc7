use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::protocol::Domain;

pub const TARGET_PER_DOMAIN: usize = 1000;

/// Persona or subtopic seeds per domain. Seeds are one-clause descriptions,
/// e.g. "a parent asking about a child's fever".
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedBank {
    seeds: BTreeMap<Domain, Vec<String>>,
}

// Each builtin bank is the product of three ten-entry lists.
type Parts = (&'static [&'static str; 10], &'static [&'static str; 10], &'static [&'static str; 10]);

const MEDICAL: Parts = (
    &[
        "a parent", "a college student", "a retiree", "a new runner", "a night-shift nurse",
        "a pregnant teacher", "an office worker", "a diabetic cyclist", "a family caregiver",
        "a teenage swimmer",
    ],
    &[
        "asking about a fever", "asking about knee pain", "asking about a persistent cough",
        "asking about poor sleep", "asking about a skin rash", "asking about seasonal allergies",
        "asking about frequent headaches", "asking about a sprained ankle",
        "asking about low energy", "asking about a sore throat",
    ],
    &[
        "after a long weekend", "before a work trip", "during exam season", "in the winter",
        "after starting a new medication", "while training for a race", "after moving house",
        "during a heat wave", "after a minor fall", "late at night",
    ],
);

const CUSTOMER_SERVICE: Parts = (
    &[
        "a frustrated customer", "a first-time buyer", "a small business owner", "a loyal subscriber",
        "a traveling salesperson", "a student on a budget", "a new tenant", "an elderly shopper",
        "a busy parent", "a freelance designer",
    ],
    &[
        "asking about a late delivery", "asking about a double charge", "asking about a broken blender",
        "asking about a cancelled flight", "asking about a password reset",
        "asking about a missing refund", "asking about a wrong size order",
        "asking about an internet outage", "asking about a warranty claim",
        "asking about a subscription upgrade",
    ],
    &[
        "on a holiday weekend", "after a store move", "during a sale", "for the second time",
        "from abroad", "before a deadline", "after a price change", "on a mobile phone",
        "late in the evening", "at the end of the month",
    ],
);

const EDUCATION: Parts = (
    &[
        "a high school junior", "an adult learner", "a nursing student", "a history teacher",
        "a homeschooling parent", "a graduate student", "a returning veteran",
        "a first-year engineer", "a language exchange student", "a retired accountant",
    ],
    &[
        "asking about photosynthesis", "asking about the French Revolution", "asking about fractions",
        "asking about plate tectonics", "asking about essay structure", "asking about basic statistics",
        "asking about the water cycle", "asking about Spanish verb tenses",
        "asking about supply and demand", "asking about cell division",
    ],
    &[
        "before a final exam", "for a class project", "after a confusing lecture",
        "while tutoring a sibling", "for a placement test", "during a study group",
        "for a science fair", "after failing a quiz", "over the summer break",
        "for a job interview",
    ],
);

const ADVICE: Parts = (
    &[
        "choosing a first apartment", "negotiating a salary raise", "starting a vegetable garden",
        "saving for retirement", "learning to cook at home", "handling a noisy neighbor",
        "buying a used car", "adopting a rescue dog", "starting a running habit",
        "asking for a reference letter",
    ],
    &[
        "on a tight budget", "with little free time", "as a complete beginner", "in a small city",
        "with two young kids", "after a career change", "with a long commute",
        "while living with roommates", "with a bad back", "in a rainy climate",
    ],
    &[
        "this month", "before next year", "for the first time", "after a bad experience",
        "without outside help", "with a partner", "on weekends only", "during the holidays",
        "at short notice", "for the long term",
    ],
);

const ASSISTANT: Parts = (
    &[
        "booking a dentist appointment", "drafting a thank-you email", "converting a recipe to metric",
        "sorting a messy inbox", "comparing phone plans", "setting up a shared calendar",
        "writing a short speech", "tracking monthly expenses", "renaming a folder of photos",
        "finding a bus route",
    ],
    &[
        "for a busy manager", "for an elderly neighbor", "for a team of five", "for a wedding guest",
        "for a new employee", "for a student club", "for a family reunion", "for a remote worker",
        "for a book club", "for a local charity",
    ],
    &[
        "by tomorrow morning", "during a lunch break", "before a meeting", "on a weekend",
        "with a strict word limit", "from a phone", "in under an hour", "for next week",
        "with a shared spreadsheet", "before the end of the day",
    ],
);

const PLANNING: Parts = (
    &[
        "a weekend trip", "a birthday party", "a home renovation", "a wedding reception",
        "a study schedule", "a team offsite", "a camping trip", "a charity run",
        "a kitchen move", "a garden makeover",
    ],
    &[
        "for two friends", "for a family of four", "for twenty guests", "for a small team",
        "for a retired couple", "for a school class", "for a sports club", "for new neighbors",
        "for a solo traveler", "for a youth group",
    ],
    &[
        "in early spring", "on a fixed budget", "over a long weekend", "in a rural area",
        "during the rainy season", "with two weeks notice", "near the coast", "in a big city",
        "with a vegetarian menu", "without a car",
    ],
);

fn parts(domain: Domain) -> Parts {
    match domain {
        Domain::Medical => MEDICAL,
        Domain::CustomerService => CUSTOMER_SERVICE,
        Domain::Education => EDUCATION,
        Domain::Advice => ADVICE,
        Domain::Assistant => ASSISTANT,
        Domain::Planning => PLANNING,
    }
}

fn builtin_for(domain: Domain) -> Vec<String> {
    let (a, b, c) = parts(domain);
    let mut out = Vec::with_capacity(TARGET_PER_DOMAIN);
    for x in a {
        for y in b {
            for z in c {
                out.push(format!("{x} {y} {z}"));
            }
        }
    }
    out
}

impl SeedBank {
    /// Combinatorial bank of [`TARGET_PER_DOMAIN`] seeds for every domain.
    pub fn builtin() -> Self {
        Self {
            seeds: Domain::ALL.into_iter().map(|d| (d, builtin_for(d))).collect(),
        }
    }

    /// Adds seeds for a domain, trimming and dropping blanks and duplicates.
    /// Returns how many were added.
    pub fn extend(&mut self, domain: Domain, seeds: impl IntoIterator<Item = String>) -> usize {
        let list = self.seeds.entry(domain).or_default();
        let mut seen: HashSet<String> = list.iter().cloned().collect();
        let before = list.len();
        for s in seeds {
            let s = s.trim().to_string();
            if !s.is_empty() && seen.insert(s.clone()) {
                list.push(s);
            }
        }
        list.len() - before
    }

    pub fn seeds(&self, domain: Domain) -> &[String] {
        self.seeds.get(&domain).map(Vec::as_slice).unwrap_or(&[])
    }

    /// The `i`-th seed, wrapping around the bank.
    pub fn pick(&self, domain: Domain, i: usize) -> Option<&str> {
        let s = self.seeds(domain);
        (!s.is_empty()).then(|| s[i % s.len()].as_str())
    }
}
