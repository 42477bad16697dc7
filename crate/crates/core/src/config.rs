//! Runtime configuration: TOML file, dotted-key overrides, adapter wiring.
//!
//! ```toml
//! clock = "system"            # or "virtual"
//!
//! [silence]
//! period_seconds = 1.0
//! max_consecutive = 3
//!
//! [backend]
//! kind = "scripted"           # or "http"
//! [backend.scripted]
//! close_delay = 0.5
//! chunks = [{ delay = 2.5, text = "Mount Everest is the tallest mountain." }]
//!
//! [infill]
//! kind = "scripted"           # or "http"
//! [infill.scripted]
//! latency_seconds = 0.16
//! mode = "echo"               # or "constant" with `phrase`
//!
//! [classifier]
//! kind = "lexical"            # "none", "lexical" or "http"
//! ```
//!
//! Overrides use dotted keys (`silence.period_seconds=0.5`); environment
//! variables `CONVFILL_SILENCE__PERIOD_SECONDS=0.5` map the same way.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapters::{
    Backend, HttpBackend, HttpBackendConfig, HttpInfill, HttpInfillConfig, Infill, PhraseMode,
    ScriptedBackend, ScriptedChunk, ScriptedInfill, ScriptedSchedule, TextGenerator,
};
use crate::engine::{SilencePolicy, TurnEngine};
use crate::entailment::{HttpClassifier, HttpClassifierConfig, LexicalOracle, NliClassifier};
use crate::time::{secs, Clock, SystemClock, VirtualClock};

pub const ENV_PREFIX: &str = "CONVFILL_";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

fn invalid(e: impl ToString) -> ConfigError {
    ConfigError::InvalidConfig(e.to_string())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClockKind {
    #[default]
    System,
    Virtual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SilenceSection {
    #[serde(default = "default_period")]
    pub period_seconds: f64,
    #[serde(default = "default_max_consecutive")]
    pub max_consecutive: u32,
}

fn default_period() -> f64 {
    1.0
}

fn default_max_consecutive() -> u32 {
    3
}

impl Default for SilenceSection {
    fn default() -> Self {
        Self {
            period_seconds: default_period(),
            max_consecutive: default_max_consecutive(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdapterKind {
    #[default]
    Scripted,
    Http,
}

/// Scripted backend: a default schedule plus optional per-utterance ones,
/// keyed by the exact (trimmed) user utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedBackendSection {
    #[serde(default)]
    pub chunks: Vec<ScriptedChunk>,
    #[serde(default)]
    pub close_delay: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub by_utterance: BTreeMap<String, ScriptedSchedule>,
}

impl Default for ScriptedBackendSection {
    fn default() -> Self {
        let demo = ScriptedSchedule::new(
            [
                (2.5, "This answer comes from the scripted knowledge source."),
                (0.5, "Configure an HTTP backend for real answers."),
            ],
            0.2,
        );
        Self {
            chunks: demo.chunks,
            close_delay: demo.close_delay,
            by_utterance: BTreeMap::new(),
        }
    }
}

impl ScriptedBackendSection {
    pub fn schedule(&self) -> ScriptedSchedule {
        ScriptedSchedule {
            chunks: self.chunks.clone(),
            close_delay: self.close_delay,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSection {
    #[serde(default)]
    pub kind: AdapterKind,
    #[serde(default)]
    pub scripted: ScriptedBackendSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub http: Option<HttpBackendConfig>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InfillMode {
    #[default]
    Echo,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedInfillSection {
    #[serde(default = "default_latency")]
    pub latency_seconds: f64,
    #[serde(default)]
    pub mode: InfillMode,
    #[serde(default = "default_silence_phrase")]
    pub silence_phrase: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phrase: Option<String>,
}

fn default_latency() -> f64 {
    0.16
}

fn default_silence_phrase() -> String {
    "One moment.".into()
}

impl Default for ScriptedInfillSection {
    fn default() -> Self {
        Self {
            latency_seconds: default_latency(),
            mode: InfillMode::Echo,
            silence_phrase: default_silence_phrase(),
            phrase: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InfillSection {
    #[serde(default)]
    pub kind: AdapterKind,
    #[serde(default)]
    pub scripted: ScriptedInfillSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub http: Option<HttpInfillConfig>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierKind {
    None,
    #[default]
    Lexical,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierSection {
    #[serde(default)]
    pub kind: ClassifierKind,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub http: Option<HttpClassifierConfig>,
}

fn default_threshold() -> f64 {
    crate::entailment::lexical::DEFAULT_THRESHOLD
}

impl Default for ClassifierSection {
    fn default() -> Self {
        Self {
            kind: ClassifierKind::default(),
            threshold: default_threshold(),
            http: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuntimeConfig {
    #[serde(default)]
    pub clock: ClockKind,
    #[serde(default)]
    pub silence: SilenceSection,
    #[serde(default)]
    pub backend: BackendSection,
    #[serde(default)]
    pub infill: InfillSection,
    #[serde(default)]
    pub classifier: ClassifierSection,
}

/// Parses an override value as a TOML literal, falling back to a bare string.
pub fn parse_override_value(raw: &str) -> toml::Value {
    let raw = raw.trim();
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Splits `a.b.c=value`.
pub fn parse_override(assignment: &str) -> Result<(String, toml::Value), ConfigError> {
    let (k, v) = assignment
        .split_once('=')
        .ok_or_else(|| invalid(format!("override {assignment:?} is not key=value")))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(invalid(format!("override {assignment:?} has an empty key")));
    }
    Ok((k.to_string(), parse_override_value(v)))
}

const SECTIONS: [&str; 5] = ["clock", "silence", "backend", "infill", "classifier"];

/// Overrides from `CONVFILL_SECTION__KEY=value` variables. Variables whose
/// first segment is not a config section are left alone.
pub fn env_overrides(vars: impl IntoIterator<Item = (String, String)>) -> Vec<(String, toml::Value)> {
    let mut out: Vec<_> = vars
        .into_iter()
        .filter_map(|(k, v)| {
            let rest = k.strip_prefix(ENV_PREFIX)?;
            let key = rest.to_ascii_lowercase().replace("__", ".");
            let section = key.split('.').next().unwrap_or_default();
            SECTIONS.contains(&section).then(|| (key, parse_override_value(&v)))
        })
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

fn set_path(root: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), ConfigError> {
    let parts: Vec<&str> = key.split('.').collect();
    let (last, dirs) = parts.split_last().expect("split yields at least one part");
    let mut table = root;
    for p in dirs {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| invalid(format!("{key}: {p} is not a table")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

impl RuntimeConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let c: Self = toml::from_str(s).map_err(invalid)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// A copy with dotted-key overrides applied and re-validated.
    pub fn with_overrides<'a>(
        &self,
        overrides: impl IntoIterator<Item = &'a (String, toml::Value)>,
    ) -> Result<Self, ConfigError> {
        let mut root = toml::Table::try_from(self).map_err(invalid)?;
        for (k, v) in overrides {
            set_path(&mut root, k, v.clone())?;
        }
        let c: Self = root.try_into().map_err(invalid)?;
        c.validate()?;
        Ok(c)
    }

    /// Overrides given as a JSON object of dotted keys, as sent by clients.
    pub fn with_json_overrides(&self, overrides: &serde_json::Map<String, serde_json::Value>) -> Result<Self, ConfigError> {
        let list = overrides
            .iter()
            .map(|(k, v)| Ok((k.clone(), toml::Value::try_from(v).map_err(invalid)?)))
            .collect::<Result<Vec<_>, ConfigError>>()?;
        self.with_overrides(&list)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.policy()?;
        if self.backend.kind == AdapterKind::Http && self.backend.http.is_none() {
            return Err(invalid("backend.kind = \"http\" needs a [backend.http] section"));
        }
        if self.infill.kind == AdapterKind::Http && self.infill.http.is_none() {
            return Err(invalid("infill.kind = \"http\" needs an [infill.http] section"));
        }
        if self.classifier.kind == ClassifierKind::Http && self.classifier.http.is_none() {
            return Err(invalid("classifier.kind = \"http\" needs a [classifier.http] section"));
        }
        if !(0.0..=1.0).contains(&self.classifier.threshold) {
            return Err(invalid("classifier.threshold must be in [0, 1]"));
        }
        let s = &self.backend.scripted;
        s.schedule().validate().map_err(invalid)?;
        for sched in s.by_utterance.values() {
            sched.validate().map_err(invalid)?;
        }
        let i = &self.infill.scripted;
        if !i.latency_seconds.is_finite() || i.latency_seconds < 0.0 {
            return Err(invalid("infill.scripted.latency_seconds must be >= 0"));
        }
        if i.mode == InfillMode::Constant && i.phrase.as_deref().map_or(true, |p| p.trim().is_empty()) {
            return Err(invalid("infill.scripted.mode = \"constant\" needs a phrase"));
        }
        Ok(())
    }

    pub fn policy(&self) -> Result<SilencePolicy, ConfigError> {
        SilencePolicy::new(self.silence.period_seconds, self.silence.max_consecutive).map_err(invalid)
    }

    pub fn build_clock(&self) -> Arc<dyn Clock> {
        match self.clock {
            ClockKind::System => Arc::new(SystemClock::new()),
            ClockKind::Virtual => Arc::new(VirtualClock::new()),
        }
    }

    pub fn build_backend(&self) -> Result<Arc<dyn Backend>, ConfigError> {
        Ok(match self.backend.kind {
            AdapterKind::Scripted => {
                let default = self.backend.scripted.schedule();
                let by_utterance = self.backend.scripted.by_utterance.clone();
                Arc::new(ScriptedBackend::from_fn("scripted", move |h| {
                    h.last_user()
                        .and_then(|u| by_utterance.get(u.trim()))
                        .unwrap_or(&default)
                        .clone()
                }))
            }
            AdapterKind::Http => Arc::new(HttpBackend::new(self.http_backend()?.clone())),
        })
    }

    fn http_backend(&self) -> Result<&HttpBackendConfig, ConfigError> {
        self.backend
            .http
            .as_ref()
            .ok_or_else(|| invalid("missing [backend.http] section"))
    }

    /// Non-streaming generator for dataset generation; HTTP backends only.
    pub fn build_text_generator(&self) -> Result<Arc<dyn TextGenerator>, ConfigError> {
        Ok(Arc::new(HttpBackend::new(self.http_backend()?.clone())))
    }

    pub fn build_infill(&self) -> Result<Arc<dyn Infill>, ConfigError> {
        Ok(match self.infill.kind {
            AdapterKind::Scripted => {
                let s = &self.infill.scripted;
                let mode = match s.mode {
                    InfillMode::Echo => PhraseMode::Echo {
                        silence_phrase: s.silence_phrase.clone(),
                    },
                    InfillMode::Constant => PhraseMode::Constant {
                        phrase: s.phrase.clone().unwrap_or_default(),
                    },
                };
                Arc::new(ScriptedInfill::new(secs(s.latency_seconds), mode))
            }
            AdapterKind::Http => Arc::new(HttpInfill::new(
                self.infill
                    .http
                    .clone()
                    .ok_or_else(|| invalid("missing [infill.http] section"))?,
            )),
        })
    }

    pub fn build_classifier(&self) -> Result<Option<Arc<dyn NliClassifier>>, ConfigError> {
        Ok(match self.classifier.kind {
            ClassifierKind::None => None,
            ClassifierKind::Lexical => Some(Arc::new(LexicalOracle::new(self.classifier.threshold))),
            ClassifierKind::Http => Some(Arc::new(HttpClassifier::new(
                self.classifier
                    .http
                    .clone()
                    .ok_or_else(|| invalid("missing [classifier.http] section"))?,
            ))),
        })
    }

    pub fn build_engine(&self, clock: Arc<dyn Clock>) -> Result<TurnEngine, ConfigError> {
        Ok(TurnEngine::new(self.build_backend()?, self.build_infill()?, clock, self.policy()?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::run_turn;
    use crate::protocol::EventKind;

    #[test]
    fn defaults_roundtrip() {
        let c = RuntimeConfig::default();
        c.validate().unwrap();
        assert_eq!(RuntimeConfig::from_toml_str(&c.to_toml()).unwrap(), c);
        assert_eq!(RuntimeConfig::from_toml_str("").unwrap(), c);
    }

    #[test]
    fn overrides() {
        let c = RuntimeConfig::default();
        let o = vec![parse_override("silence.period_seconds=0.5").unwrap()];
        assert_eq!(c.with_overrides(&o).unwrap().silence.period_seconds, 0.5);
        let o = vec![parse_override("backend.kind=grpc").unwrap()];
        assert!(matches!(c.with_overrides(&o), Err(ConfigError::InvalidConfig(_))));
        let o = vec![parse_override("backend.kind=http").unwrap()];
        assert!(c.with_overrides(&o).is_err());
        let o = vec![parse_override("silence.bogus=1").unwrap()];
        assert!(c.with_overrides(&o).is_err());
        let o = vec![parse_override("silence.period_seconds=-1").unwrap()];
        assert!(c.with_overrides(&o).is_err());
        let mut j = serde_json::Map::new();
        j.insert("infill.scripted.latency_seconds".into(), serde_json::json!(0.05));
        assert_eq!(c.with_json_overrides(&j).unwrap().infill.scripted.latency_seconds, 0.05);
    }

    #[test]
    fn env_mapping() {
        let o = env_overrides([
            ("CONVFILL_SILENCE__MAX_CONSECUTIVE".to_string(), "5".to_string()),
            ("PATH".to_string(), "/bin".to_string()),
            ("CONVFILL_TOKEN".to_string(), "secret".to_string()),
            ("CONVFILL_INFILL__SCRIPTED__SILENCE_PHRASE".to_string(), "Hold on.".to_string()),
        ]);
        assert_eq!(o.len(), 2);
        let c = RuntimeConfig::default().with_overrides(&o).unwrap();
        assert_eq!(c.silence.max_consecutive, 5);
        assert_eq!(c.infill.scripted.silence_phrase, "Hold on.");
    }

    #[test]
    fn scripted_engine_from_toml() {
        let c = RuntimeConfig::from_toml_str(
            r#"
clock = "virtual"
[backend.scripted]
chunks = [{ delay = 2.5, text = "Default." }]
[backend.scripted.by_utterance."Tallest mountain?"]
chunks = [{ delay = 0.5, text = "It is Everest." }]
[infill.scripted]
latency_seconds = 0.1
"#,
        )
        .unwrap();
        let engine = c.build_engine(c.build_clock()).unwrap();
        let t = run_turn("Tallest mountain?", &engine, &mut ()).unwrap();
        assert_eq!(t.events()[0].kind, EventKind::Chunk);
        assert_eq!(t.response_text(), "It is Everest.");
        let t = run_turn("Other?", &engine, &mut ()).unwrap();
        assert_eq!(t.silence_count(), 2);
        assert!(c.build_classifier().unwrap().is_some());
        assert!(c.build_text_generator().is_err());
    }
}
