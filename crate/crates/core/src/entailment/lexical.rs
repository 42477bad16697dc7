//! Deterministic lexical stand-in for an NLI classifier.
//!
//! Not a claim of NLI fidelity: it exists so that offline tests and desk-scale
//! dataset filtering have a stable, explainable judge.
//!
//! Normalization lowercases, drops apostrophes, and turns every other
//! non-alphanumeric character into a space. Content words are tokens not in
//! [`STOPWORDS`] or [`NEGATIONS`]. Then:
//!
//! 1. Contradiction: some hypothesis sentence that does not appear verbatim
//!    in the premise is aligned with a premise sentence (at least `threshold`
//!    of its content words match, antonyms counting as matches) and the two
//!    disagree, either in the parity of their [`NEGATIONS`] or through an
//!    [`ANTONYMS`] pair.
//! 2. Entailment: at least `threshold` of the hypothesis content words occur
//!    in the premise.
//! 3. Neutral otherwise.
//!
//! The score is always the overlap fraction from step 2.

use std::collections::HashSet;

use super::{EntailmentVerdict, Label, NliClassifier};
use crate::entailment::ClassifierError;

pub const DEFAULT_THRESHOLD: f64 = 0.7;

pub const STOPWORDS: &[&str] = &[
    "a", "about", "after", "again", "all", "also", "am", "an", "and", "any", "are", "as", "at",
    "be", "because", "been", "before", "being", "both", "but", "by", "can", "could", "did", "do",
    "does", "each", "for", "from", "further", "had", "has", "have", "he", "her", "here", "hers",
    "him", "his", "how", "i", "if", "in", "into", "is", "it", "its", "just", "me", "more", "most",
    "my", "of", "off", "on", "once", "only", "or", "other", "our", "ours", "out", "over", "own",
    "same", "she", "should", "so", "some", "such", "than", "that", "the", "their", "theirs",
    "them", "then", "there", "these", "they", "this", "those", "through", "to", "too", "under",
    "until", "up", "us", "very", "was", "we", "were", "what", "when", "where", "which", "while",
    "who", "whom", "why", "will", "with", "would", "you", "your", "yours",
];

pub const NEGATIONS: &[&str] = &[
    "not", "no", "never", "none", "nobody", "nothing", "neither", "nor", "nowhere", "cannot",
    "cant", "dont", "doesnt", "didnt", "isnt", "arent", "wasnt", "werent", "wont", "wouldnt",
    "shouldnt", "couldnt", "hasnt", "havent", "hadnt", "without",
];

pub const ANTONYMS: &[(&str, &str)] = &[
    ("true", "false"),
    ("correct", "incorrect"),
    ("open", "closed"),
    ("alive", "dead"),
    ("always", "never"),
    ("increase", "decrease"),
    ("higher", "lower"),
    ("more", "less"),
    ("before", "after"),
    ("safe", "unsafe"),
    ("possible", "impossible"),
    ("available", "unavailable"),
    ("allowed", "forbidden"),
    ("yes", "no"),
    ("win", "lose"),
    ("won", "lost"),
];

fn antonym(word: &str) -> Option<&'static str> {
    ANTONYMS.iter().find_map(|&(a, b)| {
        if a == word {
            Some(b)
        } else if b == word {
            Some(a)
        } else {
            None
        }
    })
}

pub fn tokens(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .filter(|c| *c != '\'' && *c != '\u{2019}')
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    cleaned.to_lowercase().split_whitespace().map(str::to_string).collect()
}

fn is_negation(t: &str) -> bool {
    NEGATIONS.contains(&t)
}

fn is_content(t: &str) -> bool {
    !STOPWORDS.contains(&t) && !is_negation(t)
}

fn content_words(toks: &[String]) -> HashSet<&str> {
    toks.iter().map(String::as_str).filter(|t| is_content(t)).collect()
}

fn negation_parity(toks: &[String]) -> bool {
    toks.iter().filter(|t| is_negation(t)).count() % 2 == 1
}

fn sentences(text: &str) -> Vec<Vec<String>> {
    text.split(['.', '!', '?', ';', '\n'])
        .map(tokens)
        .filter(|t| !t.is_empty())
        .collect()
}

fn contains_run(hay: &[String], needle: &[String]) -> bool {
    needle.is_empty() || hay.windows(needle.len()).any(|w| w == needle)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LexicalOracle {
    threshold: f64,
}

impl Default for LexicalOracle {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

impl LexicalOracle {
    pub fn new(threshold: f64) -> Self {
        Self {
            threshold: threshold.clamp(0.0, 1.0),
        }
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Fraction of hypothesis content words found in the premise. Falls back
    /// to all tokens when the hypothesis has no content words, and to 1.0
    /// when it has no tokens at all.
    pub fn overlap(&self, premise: &str, hypothesis: &str) -> f64 {
        let p = tokens(premise);
        let h = tokens(hypothesis);
        let p_set: HashSet<&str> = p.iter().map(String::as_str).collect();
        let mut h_set = content_words(&h);
        if h_set.is_empty() {
            h_set = h.iter().map(String::as_str).collect();
        }
        if h_set.is_empty() {
            return 1.0;
        }
        let hit = h_set.iter().filter(|w| p_set.contains(*w)).count();
        hit as f64 / h_set.len() as f64
    }

    fn conflicts(&self, premise: &str, hypothesis: &str) -> bool {
        let p_all = tokens(premise);
        let p_sents = sentences(premise);
        for h in sentences(hypothesis) {
            if contains_run(&p_all, &h) {
                continue;
            }
            let h_content = content_words(&h);
            if h_content.is_empty() {
                continue;
            }
            for p in &p_sents {
                let p_content = content_words(p);
                let aligned = h_content
                    .iter()
                    .filter(|w| p_content.contains(*w) || antonym(w).is_some_and(|a| p_content.contains(a)))
                    .count() as f64
                    / h_content.len() as f64;
                if aligned < self.threshold {
                    continue;
                }
                let p_words: HashSet<&str> = p.iter().map(String::as_str).collect();
                let antonym_clash = h.iter().any(|w| {
                    !p_words.contains(w.as_str())
                        && antonym(w).is_some_and(|a| p_words.contains(a))
                });
                if antonym_clash || negation_parity(&h) != negation_parity(p) {
                    return true;
                }
            }
        }
        false
    }

    pub fn judge(&self, premise: &str, hypothesis: &str) -> EntailmentVerdict {
        let score = self.overlap(premise, hypothesis);
        let label = if self.conflicts(premise, hypothesis) {
            Label::Contradiction
        } else if score >= self.threshold {
            Label::Entailment
        } else {
            Label::Neutral
        };
        EntailmentVerdict { label, score }
    }
}

impl NliClassifier for LexicalOracle {
    fn name(&self) -> &str {
        "lexical-oracle"
    }

    fn classify(&self, premise: &str, hypothesis: &str) -> Result<EntailmentVerdict, ClassifierError> {
        Ok(self.judge(premise, hypothesis))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn label(p: &str, h: &str) -> Label {
        LexicalOracle::default().judge(p, h).label
    }

    #[test]
    fn paraphrase_is_entailed() {
        let v = LexicalOracle::default().judge("the capital of France is Paris", "Paris is the capital of France");
        assert_eq!(v.label, Label::Entailment);
        assert_eq!(v.score, 1.0);
    }

    #[test]
    fn negation_contradicts() {
        assert_eq!(label("it is raining", "it is not raining"), Label::Contradiction);
        assert_eq!(label("The store isn't open today.", "The store is open today."), Label::Contradiction);
    }

    #[test]
    fn antonym_contradicts() {
        assert_eq!(label("X is true", "X is false"), Label::Contradiction);
    }

    #[test]
    fn unrelated_is_neutral() {
        let v = LexicalOracle::default().judge("Everest is tallest", "the lake is deep");
        assert_eq!(v.label, Label::Neutral);
        assert_eq!(v.score, 0.0);
    }

    #[test]
    fn embellishment_is_neutral() {
        // content words: string amazing wins 1963 1986 impressive -> 3/6 found
        let v = LexicalOracle::default().judge(
            "wins were between 1963 and 1986",
            "a string of amazing wins, from 1963 to 1986, which are impressive",
        );
        assert_eq!(v.label, Label::Neutral);
        assert!((v.score - 0.5).abs() < 1e-12);
    }

    #[test]
    fn unrelated_negation_is_not_contradiction() {
        assert_eq!(label("Everest is the tallest mountain.", "The lake is not deep."), Label::Neutral);
    }

    #[test]
    fn quoted_sentence_in_premise_is_supported() {
        let p = "It is sunny today. It is not raining today.";
        assert_eq!(label(p, "It is sunny today."), Label::Entailment);
        assert_eq!(label(p, p), Label::Entailment);
    }

    #[test]
    fn stopword_only_hypothesis() {
        assert_eq!(label("it is what it is", "it is"), Label::Entailment);
        assert_eq!(LexicalOracle::default().overlap("x", "..."), 1.0);
    }

    proptest! {
        #[test]
        fn reflexive(x in "[A-Za-z' ,.!?]{1,60}") {
            prop_assume!(!x.trim().is_empty());
            prop_assert_eq!(label(&x, &x), Label::Entailment);
        }

        #[test]
        fn deterministic(p in "[a-z .]{1,40}", h in "[a-z .]{1,40}") {
            let o = LexicalOracle::default();
            prop_assert_eq!(o.judge(&p, &h), o.judge(&p, &h));
        }

        #[test]
        fn premise_growth_keeps_entailment(
            p in "[a-z ]{1,40}",
            h in "[a-z ]{1,40}",
            extra in "[a-z .]{0,40}",
        ) {
            let o = LexicalOracle::default();
            let grown = format!("{p} {extra}");
            prop_assert!(o.overlap(&grown, &h) >= o.overlap(&p, &h));
            if o.judge(&p, &h).label == Label::Entailment {
                prop_assert_ne!(o.judge(&grown, &h).label, Label::Neutral);
            }
        }
    }
}
