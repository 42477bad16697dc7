use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{ClassifierError, EntailmentVerdict, Label, NliClassifier};

fn default_max_in_flight() -> usize {
    4
}

fn default_timeout() -> f64 {
    30.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpClassifierConfig {
    pub url: String,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_timeout")]
    pub timeout_seconds: f64,
}

impl HttpClassifierConfig {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            max_in_flight: default_max_in_flight(),
            timeout_seconds: default_timeout(),
        }
    }
}

#[derive(Deserialize)]
struct ClassifierResponse {
    label: Label,
    scores: [f64; 3],
}

/// Client for an NLI endpoint: `{premise, hypothesis}` in,
/// `{label, scores: [entailment, neutral, contradiction]}` out.
pub struct HttpClassifier {
    config: HttpClassifierConfig,
    in_flight: Mutex<usize>,
    slot_free: Condvar,
}

impl HttpClassifier {
    pub fn new(config: HttpClassifierConfig) -> Self {
        Self {
            config,
            in_flight: Mutex::new(0),
            slot_free: Condvar::new(),
        }
    }

    fn acquire(&self) {
        let limit = self.config.max_in_flight.max(1);
        let mut n = self.in_flight.lock().unwrap();
        while *n >= limit {
            n = self.slot_free.wait(n).unwrap();
        }
        *n += 1;
    }

    fn release(&self) {
        *self.in_flight.lock().unwrap() -= 1;
        self.slot_free.notify_one();
    }

    fn request(&self, premise: &str, hypothesis: &str) -> Result<EntailmentVerdict, ClassifierError> {
        let unavailable = |e: String| ClassifierError::Unavailable(e);
        let client = reqwest::blocking::Client::builder()
            .connect_timeout(Duration::from_secs(10))
            .timeout(crate::time::secs(self.config.timeout_seconds))
            .build()
            .map_err(|e| unavailable(e.to_string()))?;
        let resp = client
            .post(&self.config.url)
            .json(&json!({"premise": premise, "hypothesis": hypothesis}))
            .send()
            .map_err(|e| unavailable(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(unavailable(format!("HTTP {}", resp.status())));
        }
        let body: ClassifierResponse = resp.json().map_err(|e| unavailable(e.to_string()))?;
        parse_scores(body.label, body.scores)
    }
}

fn parse_scores(label: Label, scores: [f64; 3]) -> Result<EntailmentVerdict, ClassifierError> {
    let sum: f64 = scores.iter().sum();
    if scores.iter().any(|s| !(0.0..=1.0).contains(s)) || (sum - 1.0).abs() > 1e-6 {
        return Err(ClassifierError::Unavailable(format!(
            "scores must be probabilities summing to 1, got {scores:?}"
        )));
    }
    Ok(EntailmentVerdict {
        label,
        score: scores[label.index()],
    })
}

impl NliClassifier for HttpClassifier {
    fn name(&self) -> &str {
        &self.config.url
    }

    fn classify(&self, premise: &str, hypothesis: &str) -> Result<EntailmentVerdict, ClassifierError> {
        self.acquire();
        let out = self.request(premise, hypothesis);
        self.release();
        out
    }
}
