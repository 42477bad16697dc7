//! Entailment gating for dataset filtering and turn-level evaluation.

mod http;
pub mod lexical;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{HttpClassifier, HttpClassifierConfig};
pub use lexical::LexicalOracle;

use crate::prompt::KnowledgeSlot;
use crate::protocol::{EventKind, TurnTranscript};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Entailment,
    Neutral,
    Contradiction,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Entailment, Label::Neutral, Label::Contradiction];

    pub fn index(self) -> usize {
        match self {
            Label::Entailment => 0,
            Label::Neutral => 1,
            Label::Contradiction => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntailmentVerdict {
    pub label: Label,
    /// Confidence for `label`, in `[0, 1]`.
    pub score: f64,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ClassifierError {
    #[error("classifier unavailable: {0}")]
    Unavailable(String),
    #[error("premise and hypothesis must be non-empty")]
    EmptyInput,
    #[error("{responder} phrases but {thoughts} knowledge entries")]
    Alignment { responder: usize, thoughts: usize },
}

pub trait NliClassifier: Send + Sync {
    fn name(&self) -> &str;

    fn classify(&self, premise: &str, hypothesis: &str) -> Result<EntailmentVerdict, ClassifierError>;
}

/// Classifies one pair after checking both sides are non-empty.
pub fn classify(
    premise: &str,
    hypothesis: &str,
    classifier: &dyn NliClassifier,
) -> Result<EntailmentVerdict, ClassifierError> {
    if premise.trim().is_empty() || hypothesis.trim().is_empty() {
        return Err(ClassifierError::EmptyInput);
    }
    let v = classifier.classify(premise, hypothesis)?;
    Ok(EntailmentVerdict {
        label: v.label,
        score: v.score.clamp(0.0, 1.0),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgedPair {
    pub phrase_seq: usize,
    pub premise: String,
    pub hypothesis: String,
    pub verdict: EntailmentVerdict,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub entailment: usize,
    pub neutral: usize,
    pub contradiction: usize,
}

impl LabelCounts {
    pub fn add(&mut self, label: Label) {
        match label {
            Label::Entailment => self.entailment += 1,
            Label::Neutral => self.neutral += 1,
            Label::Contradiction => self.contradiction += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.entailment + self.neutral + self.contradiction
    }

    pub fn merge(&mut self, other: &LabelCounts) {
        self.entailment += other.entailment;
        self.neutral += other.neutral;
        self.contradiction += other.contradiction;
    }

    /// Percentages; all zero when nothing was judged.
    pub fn percentages(&self) -> LabelPercentages {
        let n = self.total();
        let pct = |c: usize| if n == 0 { 0.0 } else { 100.0 * c as f64 / n as f64 };
        LabelPercentages {
            entailment: pct(self.entailment),
            neutral: pct(self.neutral),
            contradiction: pct(self.contradiction),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelPercentages {
    pub entailment: f64,
    pub neutral: f64,
    pub contradiction: f64,
}

impl LabelPercentages {
    pub fn sum(&self) -> f64 {
        self.entailment + self.neutral + self.contradiction
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TurnEntailmentReport {
    pub pairs: Vec<JudgedPair>,
    pub counts: LabelCounts,
    pub percentages: LabelPercentages,
    /// Silence-conditioned phrases, counted but not judged.
    pub skipped: usize,
}

impl TurnEntailmentReport {
    pub fn judged(&self) -> usize {
        self.counts.total()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{error} (after {} judged pairs)", partial.judged())]
pub struct VerifyError {
    pub error: ClassifierError,
    pub partial: TurnEntailmentReport,
}

/// Judges every chunk-conditioned phrase of a turn. The premise is the chunk
/// followed by all earlier phrases of the turn, space-joined; the hypothesis
/// is the phrase itself.
pub fn verify_turn(
    transcript: &TurnTranscript,
    classifier: &dyn NliClassifier,
) -> Result<TurnEntailmentReport, VerifyError> {
    let mut report = TurnEntailmentReport::default();
    for (i, (event, phrase)) in transcript.events().iter().zip(transcript.phrases()).enumerate() {
        if event.kind == EventKind::Silence {
            report.skipped += 1;
            continue;
        }
        let mut premise = event.text.clone().unwrap_or_default();
        for p in &transcript.phrases()[..i] {
            premise.push(' ');
            premise.push_str(&p.text);
        }
        match classify(&premise, &phrase.text, classifier) {
            Ok(verdict) => {
                report.counts.add(verdict.label);
                report.pairs.push(JudgedPair {
                    phrase_seq: i,
                    premise,
                    hypothesis: phrase.text.clone(),
                    verdict,
                });
            }
            Err(error) => {
                report.percentages = report.counts.percentages();
                return Err(VerifyError {
                    error,
                    partial: report,
                });
            }
        }
    }
    report.percentages = report.counts.percentages();
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "decision")]
pub enum PairDecision {
    /// Silence pair: the phrase needs no external support.
    Exempt,
    Accepted { verdict: EntailmentVerdict },
    Rejected { verdict: EntailmentVerdict },
}

impl PairDecision {
    pub fn accepted(&self) -> bool {
        !matches!(self, PairDecision::Rejected { .. })
    }
}

/// Dataset-time check: each chunk must entail its own phrase.
pub fn verify_pair(
    knowledge: &KnowledgeSlot,
    phrase: &str,
    classifier: &dyn NliClassifier,
) -> Result<PairDecision, ClassifierError> {
    match knowledge {
        KnowledgeSlot::Silence => Ok(PairDecision::Exempt),
        KnowledgeSlot::Chunk(chunk) => {
            let verdict = classify(chunk, phrase, classifier)?;
            Ok(if verdict.label == Label::Entailment {
                PairDecision::Accepted { verdict }
            } else {
                PairDecision::Rejected { verdict }
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetTurnVerdict {
    pub pairs: Vec<PairDecision>,
    pub accepted: bool,
}

/// Verifies a dataset turn pair by pair; the turn passes iff every
/// non-silence pair does. `_user` is accepted for interface symmetry with
/// the dataset schema; the premise is the chunk alone.
pub fn verify_dataset_turn(
    _user: &str,
    knowledge: &[KnowledgeSlot],
    phrases: &[String],
    classifier: &dyn NliClassifier,
) -> Result<DatasetTurnVerdict, ClassifierError> {
    if knowledge.len() != phrases.len() {
        return Err(ClassifierError::Alignment {
            responder: phrases.len(),
            thoughts: knowledge.len(),
        });
    }
    let pairs = knowledge
        .iter()
        .zip(phrases)
        .map(|(k, p)| verify_pair(k, p, classifier))
        .collect::<Result<Vec<_>, _>>()?;
    let accepted = pairs.iter().all(PairDecision::accepted);
    Ok(DatasetTurnVerdict { pairs, accepted })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::TurnState;
    use crate::time::secs;

    fn oracle() -> LexicalOracle {
        LexicalOracle::default()
    }

    #[test]
    fn classify_rejects_empty() {
        assert_eq!(classify("", "x", &oracle()), Err(ClassifierError::EmptyInput));
        assert_eq!(classify("x", "x", &oracle()).unwrap().label, Label::Entailment);
    }

    #[test]
    fn silence_phrases_are_skipped() {
        let mut s = TurnState::open("q").unwrap();
        s.push_silence(secs(1.0)).unwrap();
        s.append_phrase("One moment.", secs(1.1)).unwrap();
        s.push_chunk("It is Everest.", secs(2.0)).unwrap();
        s.append_phrase("It is Everest.", secs(2.1)).unwrap();
        let r = verify_turn(&s.close().unwrap(), &oracle()).unwrap();
        assert_eq!(r.judged(), 1);
        assert_eq!(r.skipped, 1);
        assert_eq!(r.pairs[0].premise, "It is Everest. One moment.");
        assert_eq!(r.percentages.entailment, 100.0);
    }

    #[test]
    fn all_silence_report_is_zeroed() {
        let mut s = TurnState::open("q").unwrap();
        s.push_silence(secs(1.0)).unwrap();
        s.append_phrase("Hmm.", secs(1.1)).unwrap();
        let r = verify_turn(&s.close().unwrap(), &oracle()).unwrap();
        assert_eq!(r.judged(), 0);
        assert_eq!(r.skipped, 1);
        assert_eq!(r.percentages, LabelPercentages::default());
    }

    #[test]
    fn dataset_turn_decisions() {
        let k = vec![
            KnowledgeSlot::Silence,
            KnowledgeSlot::Chunk("The pharmacy is open until nine.".into()),
        ];
        let ok = verify_dataset_turn(
            "u",
            &k,
            &["Let me look.".into(), "The pharmacy is open until nine.".into()],
            &oracle(),
        )
        .unwrap();
        assert!(ok.accepted);
        assert_eq!(ok.pairs[0], PairDecision::Exempt);

        let bad = verify_dataset_turn(
            "u",
            &k,
            &["Let me look.".into(), "The pharmacy is not open until nine.".into()],
            &oracle(),
        )
        .unwrap();
        assert!(!bad.accepted);
        assert!(matches!(bad.pairs[1], PairDecision::Rejected { verdict } if verdict.label == Label::Contradiction));

        assert!(matches!(
            verify_dataset_turn("u", &k, &["x".into()], &oracle()),
            Err(ClassifierError::Alignment { .. })
        ));
    }

    #[test]
    fn fully_entailed_three_pairs() {
        let k: Vec<_> = [
            "Flights to Lisbon leave at 8 am.",
            "The return flight lands at 6 pm.",
            "Checked bags cost 30 euros.",
        ]
        .iter()
        .map(|c| KnowledgeSlot::Chunk(c.to_string()))
        .collect();
        let phrases: Vec<String> = vec![
            "So flights to Lisbon leave at 8 am.".into(),
            "And the return flight lands at 6 pm.".into(),
            "Checked bags cost 30 euros.".into(),
        ];
        assert!(verify_dataset_turn("u", &k, &phrases, &oracle()).unwrap().accepted);
    }

    struct Down;
    impl NliClassifier for Down {
        fn name(&self) -> &str {
            "down"
        }
        fn classify(&self, _: &str, _: &str) -> Result<EntailmentVerdict, ClassifierError> {
            Err(ClassifierError::Unavailable("offline".into()))
        }
    }

    #[test]
    fn unavailable_classifier_propagates() {
        let mut s = TurnState::open("q").unwrap();
        s.push_chunk("A.", secs(1.0)).unwrap();
        s.append_phrase("A.", secs(1.1)).unwrap();
        let err = verify_turn(&s.close().unwrap(), &Down).unwrap_err();
        assert!(matches!(err.error, ClassifierError::Unavailable(_)));
        assert_eq!(err.partial.judged(), 0);
    }
}
