//! QA evaluation: time to first token, answer accuracy and turn-level
//! entailment over a system under test.
//!
//! Accuracy is normalized containment: an answer counts as correct when some
//! gold alias, normalized, occurs as a whole-token run in the normalized
//! response. Errored items count against accuracy. TTFT spread is the
//! population standard deviation. Both conventions are written into every
//! report header.

mod systems;

use std::collections::BTreeSet;
use std::fmt;
use std::io::BufRead;
use std::sync::Arc;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use systems::{
    measure_ttft, run_one, BackendOnly, EvalSystem, FullRuntime, InfillOnly, SystemResponse,
    DEFAULT_TTFT_CEILING,
};

use crate::entailment::{verify_turn, LabelCounts, LabelPercentages, NliClassifier};
use crate::time::as_secs;

pub const ANSWER_METRIC: &str = "normalized_token_containment";
pub const STD_CONVENTION: &str = "population";
pub const TTFT_BOUNDARY: &str = "first_output_character";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid item {id:?}: {reason}")]
    InvalidItem { id: String, reason: String },
    #[error("no items to evaluate")]
    NoItems,
    #[error("no first output within {0:?}")]
    Timeout(Duration),
    #[error("{0}")]
    Item(String),
    #[error("every item failed; first error: {0}")]
    AllFailed(String),
    #[error("reports cover different items ({only_a} only in the first, {only_b} only in the second)")]
    ItemSetMismatch { only_a: usize, only_b: usize },
    #[error("io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAItem {
    pub id: String,
    pub question: String,
    pub answers: Vec<String>,
}

impl QAItem {
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |reason: &str| EvalError::InvalidItem {
            id: self.id.clone(),
            reason: reason.into(),
        };
        if self.id.trim().is_empty() {
            return Err(bad("empty id"));
        }
        if self.question.trim().is_empty() {
            return Err(bad("empty question"));
        }
        if self.answers.is_empty() || self.answers.iter().any(|a| a.trim().is_empty()) {
            return Err(bad("gold answers must be non-empty"));
        }
        Ok(())
    }
}

/// Reads `{id, question, answers}` records, one per line.
pub fn read_items(reader: impl BufRead) -> Result<Vec<QAItem>, EvalError> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| EvalError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let item: QAItem = serde_json::from_str(&line).map_err(|e| EvalError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        item.validate()?;
        if !seen.insert(item.id.clone()) {
            return Err(EvalError::InvalidItem {
                id: item.id,
                reason: "duplicate id".into(),
            });
        }
        out.push(item);
    }
    Ok(out)
}

const BUNDLED_QA: &str = include_str!("../../fixtures/qa_20.jsonl");

/// The 20-item QA fixture shipped with the crate.
pub fn bundled_items() -> Vec<QAItem> {
    read_items(BUNDLED_QA.as_bytes()).expect("bundled fixture is valid")
}

/// Lowercase, drop punctuation, drop the articles a/an/the, collapse spaces.
pub fn normalize_answer(text: &str) -> String {
    let stripped: String = text
        .to_lowercase()
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    stripped
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn score_answer(response: &str, gold_answers: &[String]) -> bool {
    let resp = format!(" {} ", normalize_answer(response));
    gold_answers.iter().any(|g| {
        let g = normalize_answer(g);
        !g.is_empty() && resp.contains(&format!(" {g} "))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntailmentSummary {
    pub counts: LabelCounts,
    pub percentages: LabelPercentages,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ttft: Option<f64>,
    pub full_response: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correct: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub entailment: Option<EntailmentSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportHeader {
    pub system: String,
    pub answer_metric: String,
    pub std: String,
    pub ttft_boundary: String,
    pub ttft_ceiling_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sample: Option<Sample>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classifier: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub size: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub header: ReportHeader,
    pub n: usize,
    pub correct: usize,
    pub incorrect: usize,
    pub errors: usize,
    pub accuracy: f64,
    pub ttft_mean: f64,
    pub ttft_std: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub entailment: Option<EntailmentSummary>,
    pub records: Vec<EvalRecord>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn from_json(s: &str) -> Result<Self, EvalError> {
        serde_json::from_str(s).map_err(|e| EvalError::Parse {
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn item_ids(&self) -> BTreeSet<&str> {
        self.records.iter().map(|r| r.id.as_str()).collect()
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "system     {}", self.header.system)?;
        writeln!(f, "items      {} ({} correct, {} incorrect, {} errors)", self.n, self.correct, self.incorrect, self.errors)?;
        writeln!(f, "accuracy   {:.4}", self.accuracy)?;
        writeln!(f, "ttft       {:.3} ± {:.3} s", self.ttft_mean, self.ttft_std)?;
        if let Some(e) = &self.entailment {
            writeln!(
                f,
                "entailment E {:.1}% / N {:.1}% / C {:.1}% ({} judged, {} silence)",
                e.percentages.entailment,
                e.percentages.neutral,
                e.percentages.contradiction,
                e.counts.total(),
                e.skipped
            )?;
        }
        Ok(())
    }
}

/// Mean and population standard deviation; zeros for an empty slice.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Clone)]
pub struct EvalOptions {
    pub ceiling: Duration,
    pub sample: Option<Sample>,
    pub classifier: Option<Arc<dyn NliClassifier>>,
    /// Worker threads for wall-clock systems when TTFT contention does not
    /// matter. Virtual-clock systems always run sequentially.
    pub parallelism: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            ceiling: DEFAULT_TTFT_CEILING,
            sample: None,
            classifier: None,
            parallelism: 1,
        }
    }
}

/// Picks `sample.size` items with a seeded generator, keeping file order.
pub fn sample_items(items: &[QAItem], sample: Sample) -> Vec<QAItem> {
    if sample.size >= items.len() {
        return items.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(sample.seed);
    let mut idx = rand::seq::index::sample(&mut rng, items.len(), sample.size).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| items[i].clone()).collect()
}

fn eval_item(system: &Arc<dyn EvalSystem>, item: &QAItem, opts: &EvalOptions) -> EvalRecord {
    let failed = |e: String, resp: String| EvalRecord {
        id: item.id.clone(),
        ttft: None,
        full_response: resp,
        correct: None,
        entailment: None,
        error: Some(e),
    };
    let resp = match run_one(system, &item.question, opts.ceiling) {
        Ok(r) => r,
        Err(e) => return failed(e.to_string(), String::new()),
    };
    let mut entailment = None;
    if let (Some(c), Some(t)) = (&opts.classifier, &resp.transcript) {
        match verify_turn(t, c.as_ref()) {
            Ok(r) => {
                entailment = Some(EntailmentSummary {
                    counts: r.counts,
                    percentages: r.percentages,
                    skipped: r.skipped,
                })
            }
            Err(e) => return failed(format!("entailment: {e}"), resp.full_response),
        }
    }
    EvalRecord {
        id: item.id.clone(),
        ttft: Some(as_secs(resp.ttft)),
        correct: Some(score_answer(&resp.full_response, &item.answers)),
        full_response: resp.full_response,
        entailment,
        error: None,
    }
}

/// Runs every item as a single-turn conversation. Item errors are recorded;
/// the run fails only when all of them error.
pub fn run_eval(system: &Arc<dyn EvalSystem>, items: &[QAItem], opts: &EvalOptions) -> Result<EvalReport, EvalError> {
    let items = match opts.sample {
        Some(s) => sample_items(items, s),
        None => items.to_vec(),
    };
    if items.is_empty() {
        return Err(EvalError::NoItems);
    }
    let workers = if system.clock().is_virtual() { 1 } else { opts.parallelism.max(1) };
    let records: Vec<EvalRecord> = if workers == 1 {
        items.iter().map(|it| eval_item(system, it, opts)).collect()
    } else {
        let per = items.len().div_ceil(workers);
        std::thread::scope(|s| {
            let handles: Vec<_> = items
                .chunks(per)
                .map(|chunk| s.spawn(move || chunk.iter().map(|it| eval_item(system, it, opts)).collect::<Vec<_>>()))
                .collect();
            handles.into_iter().flat_map(|h| h.join().expect("eval worker panicked")).collect()
        })
    };
    if let Some(first) = records.iter().find_map(|r| r.error.clone()) {
        if records.iter().all(|r| r.error.is_some()) {
            return Err(EvalError::AllFailed(first));
        }
    }
    Ok(aggregate(system.name(), opts, records))
}

fn aggregate(system: &str, opts: &EvalOptions, records: Vec<EvalRecord>) -> EvalReport {
    let n = records.len();
    let correct = records.iter().filter(|r| r.correct == Some(true)).count();
    let incorrect = records.iter().filter(|r| r.correct == Some(false)).count();
    let ttfts: Vec<f64> = records.iter().filter_map(|r| r.ttft).collect();
    let (ttft_mean, ttft_std) = mean_std(&ttfts);
    let entailment = opts.classifier.as_ref().map(|_| {
        let mut counts = LabelCounts::default();
        let mut skipped = 0;
        for e in records.iter().filter_map(|r| r.entailment.as_ref()) {
            counts.merge(&e.counts);
            skipped += e.skipped;
        }
        EntailmentSummary {
            counts,
            percentages: counts.percentages(),
            skipped,
        }
    });
    EvalReport {
        header: ReportHeader {
            system: system.to_string(),
            answer_metric: ANSWER_METRIC.into(),
            std: STD_CONVENTION.into(),
            ttft_boundary: TTFT_BOUNDARY.into(),
            ttft_ceiling_seconds: as_secs(opts.ceiling),
            sample: opts.sample,
            classifier: opts.classifier.as_ref().map(|c| c.name().to_string()),
        },
        n,
        correct,
        incorrect,
        errors: n - correct - incorrect,
        accuracy: if n == 0 { 0.0 } else { correct as f64 / n as f64 },
        ttft_mean,
        ttft_std,
        entailment,
        records,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDelta {
    pub metric: String,
    pub a: f64,
    pub b: f64,
    pub delta: f64,
}

/// Per-metric `b - a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDelta {
    pub a: String,
    pub b: String,
    pub metrics: Vec<MetricDelta>,
}

impl ReportDelta {
    pub fn get(&self, metric: &str) -> Option<f64> {
        self.metrics.iter().find(|m| m.metric == metric).map(|m| m.delta)
    }
}

impl fmt::Display for ReportDelta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<16} {:>10} {:>10} {:>10}", "metric", "a", "b", "delta")?;
        for m in &self.metrics {
            writeln!(f, "{:<16} {:>10.4} {:>10.4} {:>+10.4}", m.metric, m.a, m.b, m.delta)?;
        }
        Ok(())
    }
}

pub fn compare_report(a: &EvalReport, b: &EvalReport) -> Result<ReportDelta, EvalError> {
    let (ia, ib) = (a.item_ids(), b.item_ids());
    if ia != ib {
        return Err(EvalError::ItemSetMismatch {
            only_a: ia.difference(&ib).count(),
            only_b: ib.difference(&ia).count(),
        });
    }
    let mut metrics = Vec::new();
    let mut push = |name: &str, x: f64, y: f64| {
        metrics.push(MetricDelta {
            metric: name.into(),
            a: x,
            b: y,
            delta: y - x,
        })
    };
    push("accuracy", a.accuracy, b.accuracy);
    push("ttft_mean", a.ttft_mean, b.ttft_mean);
    push("ttft_std", a.ttft_std, b.ttft_std);
    push("errors", a.errors as f64, b.errors as f64);
    if let (Some(x), Some(y)) = (&a.entailment, &b.entailment) {
        push("entailment_pct", x.percentages.entailment, y.percentages.entailment);
        push("neutral_pct", x.percentages.neutral, y.percentages.neutral);
        push("contradiction_pct", x.percentages.contradiction, y.percentages.contradiction);
    }
    Ok(ReportDelta {
        a: a.header.system.clone(),
        b: b.header.system.clone(),
        metrics,
    })
}
