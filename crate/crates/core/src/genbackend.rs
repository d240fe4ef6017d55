//! Text generators behind a common [`Generator`] trait.
//!
//! [`MockGenerator`] is a pure, seeded stand-in that draws utterances from
//! per-label templates and plants label noise at a configured rate.
//! [`HttpBackend`] forwards prompts to an external completion server:
//!
//! ```text
//! POST <endpoint>/complete
//! {"prompt": str, "mode": "top_p"|"beam", "top_p": num, "n": int,
//!  "max_new_tokens": int, "stop": [str], "seed": int}
//! -> {"completions": [str, ...]}
//! ```

use std::collections::BTreeMap;
use std::time::Duration;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{LabelId, Partition, Task};
use crate::prompt::{act_verb, RenderedPrompt};
use crate::corpus::ACT_LABELS;
use crate::seed;

pub const ENDPOINT_ENV: &str = "WEAKDAP_ENDPOINT";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GenError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },

    #[error("empty completion")]
    EmptyCompletion,

    #[error("protocol error: {0}")]
    Protocol(String),
}

impl GenError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, GenError::Transport { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GenMode {
    #[serde(rename = "top_p")]
    TopPSampling,
    #[serde(rename = "beam")]
    Beam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub mode: GenMode,
    pub top_p: f64,
    pub num_return: usize,
    pub max_new_tokens: usize,
    pub stop_markers: Vec<String>,
    pub seed: u64,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            mode: GenMode::TopPSampling,
            top_p: 0.92,
            num_return: 1,
            max_new_tokens: 48,
            stop_markers: Vec::new(),
            seed: 0,
        }
    }
}

impl GenParams {
    /// Beam search returning up to three sequences, as used for cross-lingual
    /// augmentation.
    pub fn beam(num_return: usize) -> Self {
        Self {
            mode: GenMode::Beam,
            num_return,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), crate::Error> {
        if self.mode == GenMode::TopPSampling && !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(crate::Error::InvalidArgument(format!(
                "top_p must be in (0, 1], got {}",
                self.top_p
            )));
        }
        if self.num_return == 0 || self.max_new_tokens == 0 {
            return Err(crate::Error::InvalidArgument(
                "num_return and max_new_tokens must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub raw: String,
    pub parsed: Option<String>,
    pub backend_id: String,
    /// Label of the template the mock generator actually used. Only the mock
    /// sets it; it lets a test harness count planted noise exactly.
    #[doc(hidden)]
    pub planted_label: Option<LabelId>,
}

pub trait Generator: Send + Sync {
    fn id(&self) -> &str;

    /// Returns between 1 and `params.num_return` completions.
    fn generate(&self, prompt: &RenderedPrompt, params: &GenParams) -> Result<Vec<Completion>, GenError>;

    /// Maximum number of in-flight requests the backend accepts.
    fn parallelism(&self) -> usize {
        1
    }
}

// ---- completion parsing -------------------------------------------------

/// Cue prefixes a generator might emit when it runs past the target turn.
pub fn speaker_markers(names: &(String, String)) -> Vec<String> {
    let mut out = Vec::new();
    for name in [&names.0, &names.1] {
        out.push(format!("{name} in a "));
        out.push(format!("{name}:"));
        for act in ACT_LABELS {
            out.push(format!("{name} {} ", act_verb(act).expect("static act")));
        }
    }
    out
}

/// Cuts `raw` at the first newline or stop marker and trims it.
pub fn cut_at_markers(raw: &str, markers: &[String]) -> Option<String> {
    let mut end = raw.find('\n').unwrap_or(raw.len());
    for m in markers.iter().filter(|m| !m.is_empty()) {
        if let Some(pos) = raw[..end].find(m.as_str()) {
            end = pos;
        }
    }
    let text = raw[..end].trim();
    (!text.is_empty()).then(|| text.to_string())
}

pub fn parse_completion(raw: &str, speaker_names: &(String, String), stop_markers: &[String]) -> Option<String> {
    let mut markers = stop_markers.to_vec();
    markers.extend(speaker_markers(speaker_names));
    cut_at_markers(raw, &markers)
}

// ---- mock ---------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockGenConfig {
    pub templates: BTreeMap<LabelId, Vec<String>>,
    pub noise_rate: f64,
    pub seed: u64,
}

impl MockGenConfig {
    pub fn new(
        templates: BTreeMap<LabelId, Vec<String>>,
        noise_rate: f64,
        seed: u64,
        num_labels: usize,
    ) -> Result<Self, crate::Error> {
        let cfg = Self {
            templates,
            noise_rate,
            seed,
        };
        cfg.validate(num_labels)?;
        Ok(cfg)
    }

    pub fn validate(&self, num_labels: usize) -> Result<(), crate::Error> {
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return Err(crate::Error::InvalidArgument(format!(
                "noise rate must be in [0, 1], got {}",
                self.noise_rate
            )));
        }
        for l in 0..num_labels {
            if self.templates.get(&LabelId(l)).is_none_or(|t| t.is_empty()) {
                return Err(crate::Error::InvalidArgument(format!(
                    "mock generator has no template for label #{l}"
                )));
            }
        }
        Ok(())
    }

    /// Uses the gold utterances of each label as that label's templates.
    pub fn from_partition(
        gold: &Partition,
        task: Task,
        num_labels: usize,
        noise_rate: f64,
        seed: u64,
    ) -> Result<Self, crate::Error> {
        let mut templates: BTreeMap<LabelId, Vec<String>> = BTreeMap::new();
        match gold {
            Partition::Dialogue(v) => {
                for t in v.iter().flat_map(|c| &c.turns) {
                    if let Some(l) = t.label(task) {
                        templates.entry(l).or_default().push(t.text.clone());
                    }
                }
            }
            Partition::Utterance(v) => {
                for u in v {
                    templates.entry(u.label).or_default().push(u.text.clone());
                }
            }
        }
        Self::new(templates, noise_rate, seed, num_labels)
    }
}

#[derive(Debug, Clone)]
pub struct MockGenerator {
    config: MockGenConfig,
    labels: Vec<LabelId>,
}

impl MockGenerator {
    pub fn new(config: MockGenConfig) -> Self {
        let labels = config.templates.keys().copied().collect();
        Self { config, labels }
    }

    pub fn config(&self) -> &MockGenConfig {
        &self.config
    }
}

impl Generator for MockGenerator {
    fn id(&self) -> &str {
        "mock"
    }

    fn generate(&self, prompt: &RenderedPrompt, params: &GenParams) -> Result<Vec<Completion>, GenError> {
        let prescribed = prompt.prescribed_label;
        let n = params.num_return.max(1);
        let mut out = Vec::with_capacity(n);
        for r in 0..n {
            let s = seed::derive_bytes(
                seed::derive(self.config.seed, &[params.seed]),
                prompt.text.as_bytes(),
                &[r as u64],
            );
            let mut rng = seed::rng(s);
            let noisy = rng.random::<f64>() < self.config.noise_rate;
            let label = if noisy {
                let others: Vec<LabelId> = self.labels.iter().copied().filter(|l| *l != prescribed).collect();
                others.choose(&mut rng).copied().unwrap_or(prescribed)
            } else if self.config.templates.contains_key(&prescribed) {
                prescribed
            } else {
                return Err(GenError::Protocol(format!(
                    "mock generator has no template for label #{}",
                    prescribed.0
                )));
            };
            let template = self.config.templates[&label]
                .choose(&mut rng)
                .expect("validated non-empty")
                .clone();
            // Trailing cue imitates a model running on past the target turn.
            let raw = format!("{template}\nAlice:");
            out.push(Completion {
                parsed: cut_at_markers(&raw, &params.stop_markers),
                raw,
                backend_id: self.id().to_string(),
                planted_label: Some(label),
            });
        }
        Ok(out)
    }

    fn parallelism(&self) -> usize {
        rayon::current_num_threads()
    }
}

// ---- HTTP ---------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (1-based): base, 2*base, 4*base, ...
    pub fn delay(&self, retry: u32) -> Duration {
        self.base_delay * 2u32.saturating_pow(retry.saturating_sub(1))
    }
}

#[derive(Debug, Serialize)]
pub(crate) struct CompleteRequest<'a> {
    pub prompt: &'a str,
    pub mode: GenMode,
    pub top_p: f64,
    pub n: usize,
    pub max_new_tokens: usize,
    pub stop: &'a [String],
    pub seed: u64,
}

#[derive(Debug, Deserialize)]
pub(crate) struct CompleteResponse {
    pub completions: Vec<String>,
}

/// Configured endpoint if any, otherwise the `WEAKDAP_ENDPOINT` value.
pub fn resolve_endpoint(configured: Option<&str>, env: Option<String>) -> Option<String> {
    configured.map(str::to_string).or(env).filter(|e| !e.trim().is_empty())
}

pub struct HttpBackend {
    endpoint: String,
    agent: ureq::Agent,
    retry: RetryPolicy,
    parallelism: usize,
}

impl HttpBackend {
    pub fn new(endpoint: impl Into<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .into();
        Self {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            agent,
            retry: RetryPolicy::default(),
            parallelism: 4,
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_parallelism(mut self, parallelism: usize) -> Self {
        self.parallelism = parallelism.max(1);
        self
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn request_once(&self, body: &CompleteRequest<'_>) -> Result<Vec<String>, AttemptError> {
        let url = format!("{}/complete", self.endpoint);
        let mut resp = self.agent.post(&url).send_json(body).map_err(|e| match e {
            ureq::Error::StatusCode(code) if code == 429 || code >= 500 => {
                AttemptError::Retryable(format!("HTTP {code}"))
            }
            ureq::Error::StatusCode(code) => AttemptError::Fatal(GenError::Protocol(format!("HTTP {code}"))),
            other => AttemptError::Retryable(other.to_string()),
        })?;
        let parsed: CompleteResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| AttemptError::Fatal(GenError::Protocol(e.to_string())))?;
        Ok(parsed.completions)
    }
}

enum AttemptError {
    Retryable(String),
    Fatal(GenError),
}

impl Generator for HttpBackend {
    fn id(&self) -> &str {
        &self.endpoint
    }

    fn generate(&self, prompt: &RenderedPrompt, params: &GenParams) -> Result<Vec<Completion>, GenError> {
        let body = CompleteRequest {
            prompt: &prompt.text,
            mode: params.mode,
            top_p: params.top_p,
            n: params.num_return,
            max_new_tokens: params.max_new_tokens,
            stop: &params.stop_markers,
            seed: params.seed,
        };
        let attempts = self.retry.attempts.max(1);
        let mut last = String::new();
        for attempt in 1..=attempts {
            if attempt > 1 {
                std::thread::sleep(self.retry.delay(attempt - 1));
            }
            match self.request_once(&body) {
                Ok(texts) => {
                    if texts.is_empty() {
                        return Err(GenError::EmptyCompletion);
                    }
                    return Ok(texts
                        .into_iter()
                        .take(params.num_return)
                        .map(|raw| Completion {
                            parsed: cut_at_markers(&raw, &params.stop_markers),
                            raw,
                            backend_id: self.endpoint.clone(),
                            planted_label: None,
                        })
                        .collect());
                }
                Err(AttemptError::Fatal(e)) => return Err(e),
                Err(AttemptError::Retryable(msg)) => last = msg,
            }
        }
        Err(GenError::Transport {
            attempts,
            message: last,
        })
    }

    fn parallelism(&self) -> usize {
        self.parallelism
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::LabelId;

    fn names() -> (String, String) {
        ("Alice".into(), "Bob".into())
    }

    fn prompt(label: usize, text: &str) -> RenderedPrompt {
        RenderedPrompt {
            text: text.into(),
            target_speaker: None,
            prescribed_label: LabelId(label),
            context_turn_count: 1,
        }
    }

    fn mock(q: f64) -> MockGenerator {
        let mut t = BTreeMap::new();
        for l in 0..4 {
            t.insert(LabelId(l), (0..3).map(|i| format!("label{l} template{i}")).collect());
        }
        MockGenerator::new(MockGenConfig::new(t, q, 11, 4).unwrap())
    }

    /// Character-by-character scan: earliest index where any marker begins.
    fn oracle_cut(raw: &str, markers: &[&str]) -> Option<String> {
        let chars: Vec<(usize, char)> = raw.char_indices().collect();
        let mut end = raw.len();
        'scan: for &(i, c) in &chars {
            if c == '\n' {
                end = i;
                break;
            }
            for m in markers {
                if !m.is_empty() && raw[i..].starts_with(m) {
                    end = i;
                    break 'scan;
                }
            }
        }
        let t = raw[..end].trim();
        (!t.is_empty()).then(|| t.to_string())
    }

    #[test]
    fn parse_newline_cut() {
        let raw = "That's great news!\nAlice in a sad mood: oh";
        assert_eq!(parse_completion(raw, &names(), &[]).as_deref(), Some("That's great news!"));
    }

    #[test]
    fn parse_marker_cut_matches_oracle() {
        let raw = "Sure. Bob asks Alice: why?";
        let got = parse_completion(raw, &names(), &["Bob ".to_string()]);
        assert_eq!(got.as_deref(), Some("Sure."));
        assert_eq!(got, oracle_cut(raw, &["Bob "]));
    }

    #[test]
    fn parse_blank_is_absent() {
        assert_eq!(parse_completion("   ", &names(), &[]), None);
        assert_eq!(parse_completion("\nhello", &names(), &[]), None);
    }

    #[test]
    fn mock_zero_noise_uses_prescribed_templates() {
        let g = mock(0.0);
        let p = prompt(2, "Alice in a happy mood: hi\nBob in a happy mood:");
        let params = GenParams::default();
        let a = g.generate(&p, &params).unwrap();
        let b = g.generate(&p, &params).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].planted_label, Some(LabelId(2)));
        assert!(a[0].parsed.as_deref().unwrap().starts_with("label2 "));
    }

    #[test]
    fn mock_full_noise_never_uses_prescribed() {
        let g = mock(1.0);
        for i in 0..200 {
            let p = prompt(1, &format!("prompt {i}"));
            let c = g.generate(&p, &GenParams::default()).unwrap();
            assert_ne!(c[0].planted_label, Some(LabelId(1)));
        }
    }

    #[test]
    fn mock_noise_rate_converges() {
        let q = 0.4;
        let g = mock(q);
        let n = 10_000;
        let noisy = (0..n)
            .filter(|i| {
                let p = prompt(i % 4, &format!("prompt number {i}"));
                let c = g.generate(&p, &GenParams::default()).unwrap();
                c[0].planted_label != Some(p.prescribed_label)
            })
            .count();
        let observed = noisy as f64 / n as f64;
        assert!((observed - q).abs() < 0.02, "observed {observed}");
    }

    #[test]
    fn mock_beam_returns_num_return() {
        let g = mock(0.0);
        let c = g.generate(&prompt(0, "x"), &GenParams::beam(3)).unwrap();
        assert_eq!(c.len(), 3);
    }

    #[test]
    fn mock_config_validation() {
        let mut t = BTreeMap::new();
        t.insert(LabelId(0), vec!["a".to_string()]);
        assert!(MockGenConfig::new(t.clone(), 0.5, 0, 2).is_err());
        assert!(MockGenConfig::new(t.clone(), 1.5, 0, 1).is_err());
        assert!(MockGenConfig::new(t, 0.5, 0, 1).is_ok());
    }

    #[test]
    fn retry_backoff_doubles() {
        let r = RetryPolicy::default();
        assert_eq!(r.delay(1), Duration::from_millis(500));
        assert_eq!(r.delay(2), Duration::from_millis(1000));
    }

    #[test]
    fn endpoint_resolution() {
        assert_eq!(resolve_endpoint(Some("http://a"), Some("http://b".into())).as_deref(), Some("http://a"));
        assert_eq!(resolve_endpoint(None, Some("http://b".into())).as_deref(), Some("http://b"));
        assert_eq!(resolve_endpoint(None, None), None);
    }

    #[test]
    fn gen_params_validation() {
        let mut p = GenParams::default();
        assert!(p.validate().is_ok());
        p.top_p = 0.0;
        assert!(p.validate().is_err());
        assert_eq!(GenParams::default().top_p, 0.92);
    }

    proptest::proptest! {
        #[test]
        fn parsed_never_contains_newline_or_marker(
            raw in "[a-zA-Z .:\n]{0,60}",
            marker in "[a-zA-Z ]{1,4}",
        ) {
            let markers = vec![marker.clone()];
            if let Some(p) = parse_completion(&raw, &names(), &markers) {
                proptest::prop_assert!(!p.contains('\n'));
                proptest::prop_assert!(!p.contains(marker.as_str()));
                for m in speaker_markers(&names()) {
                    proptest::prop_assert!(!p.contains(m.as_str()));
                }
                proptest::prop_assert!(!p.is_empty());
            }
        }
    }
}
