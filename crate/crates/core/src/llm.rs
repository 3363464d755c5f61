//! Completion providers: a chat-completions HTTP client and two deterministic
//! offline oracles that stand in for the language model.

use std::fmt;
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use log::{debug, warn};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::prompt::{format_actions, parse_response, PromptBundle};

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("transport error{}: {message}", status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
    Transport { status: Option<u16>, message: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("request timed out after {0:?}")]
    Timeout(Duration),
    #[error("oracle error: {0}")]
    Oracle(String),
    #[error("invalid request: {0}")]
    Request(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provider {
    Remote,
    MockNearest,
    MockCompositional,
}

impl Provider {
    pub fn as_str(self) -> &'static str {
        match self {
            Provider::Remote => "remote",
            Provider::MockNearest => "mock-nearest",
            Provider::MockCompositional => "mock-compositional",
        }
    }
}

impl fmt::Display for Provider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub system: String,
    pub user: String,
    pub model: String,
    pub max_tokens: u32,
    pub temperature: f64,
}

impl CompletionRequest {
    pub fn new(
        system: impl Into<String>,
        user: impl Into<String>,
        model: impl Into<String>,
        max_tokens: u32,
    ) -> Result<Self, LlmError> {
        Self::with_temperature(system, user, model, max_tokens, 0.0)
    }

    pub fn with_temperature(
        system: impl Into<String>,
        user: impl Into<String>,
        model: impl Into<String>,
        max_tokens: u32,
        temperature: f64,
    ) -> Result<Self, LlmError> {
        let req = Self {
            system: system.into(),
            user: user.into(),
            model: model.into(),
            max_tokens,
            temperature,
        };
        if req.system.is_empty() || req.user.is_empty() || req.model.is_empty() {
            return Err(LlmError::Request("system, user and model must be non-empty".into()));
        }
        if !(temperature.is_finite() && temperature >= 0.0) {
            return Err(LlmError::Request(format!("temperature {temperature} must be ≥ 0")));
        }
        Ok(req)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionResult {
    pub text: String,
    /// Wall-clock time of the call. Mock providers report zero so that
    /// reports stay byte-reproducible.
    pub latency_ms: u64,
    pub provider: Provider,
}

/// A demonstration as the offline oracles see it: concatenated observation
/// bins, the instruction, and the verbatim output string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockDemo {
    pub obs_bins: Vec<u16>,
    pub instruction: String,
    pub output: String,
}

/// Everything a provider may use to answer one test query. The remote client
/// reads only `prompt`; the oracles read only the structured fields.
#[derive(Debug, Clone, Copy)]
pub struct Query<'a> {
    pub prompt: &'a PromptBundle,
    pub demos: &'a [MockDemo],
    pub test_obs: &'a [u16],
    pub test_instruction: &'a str,
}

pub trait Completer: Send + Sync {
    fn provider(&self) -> Provider;
    fn complete(&self, query: &Query<'_>) -> Result<CompletionResult, LlmError>;
}

// ---------------------------------------------------------------------------
// Offline oracles

const COLOR_TOKENS: [&str; 4] = ["red", "yellow", "green", "blue"];

/// Separator between sub-instructions of a composed task.
pub const SEGMENT_SEPARATOR: &str = ", then ";

fn is_color(token: &str) -> bool {
    COLOR_TOKENS.contains(&token)
}

/// Number of color slots that differ between two instructions, or `None`
/// when they do not share a template once colors are wildcarded.
pub fn instruction_mismatch(a: &str, b: &str) -> Option<usize> {
    let ta: Vec<&str> = a.split_whitespace().collect();
    let tb: Vec<&str> = b.split_whitespace().collect();
    if ta.len() != tb.len() {
        return None;
    }
    let mut mismatches = 0;
    for (x, y) in ta.iter().zip(&tb) {
        match (is_color(x), is_color(y)) {
            (true, true) => mismatches += usize::from(x != y),
            (false, false) if x == y => {}
            _ => return None,
        }
    }
    Some(mismatches)
}

fn squared_distance(a: &[u16], b: &[u16]) -> u64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = i64::from(x) - i64::from(y);
            (d * d) as u64
        })
        .sum()
}

/// Index of the demo chosen by the nearest-neighbour oracle.
///
/// Candidates are demos whose instruction shares the test instruction's
/// template with colors wildcarded. Among them the oracle prefers the fewest
/// differing color slots (so a blue-on-yellow demo answers a blue-on-yellow
/// query), then the smallest squared bin distance, then the lowest index.
pub fn nearest_demo(
    demos: &[MockDemo],
    test_obs: &[u16],
    test_instruction: &str,
) -> Result<usize, LlmError> {
    if demos.is_empty() {
        return Err(LlmError::Oracle("no demonstrations".into()));
    }
    if let Some((i, d)) = demos
        .iter()
        .enumerate()
        .find(|(_, d)| d.obs_bins.len() != test_obs.len())
    {
        return Err(LlmError::Oracle(format!(
            "demo {i} has {} observation bins, test has {}",
            d.obs_bins.len(),
            test_obs.len()
        )));
    }
    demos
        .iter()
        .enumerate()
        .filter_map(|(i, d)| {
            instruction_mismatch(&d.instruction, test_instruction)
                .map(|m| ((m, squared_distance(&d.obs_bins, test_obs), i), i))
        })
        .min_by_key(|&(key, _)| key)
        .map(|(_, i)| i)
        .ok_or_else(|| {
            LlmError::Oracle(format!("no demo matches instruction {test_instruction:?}"))
        })
}

pub fn complete_mock_nearest(
    demos: &[MockDemo],
    test_obs: &[u16],
    test_instruction: &str,
) -> Result<CompletionResult, LlmError> {
    let i = nearest_demo(demos, test_obs, test_instruction)?;
    Ok(CompletionResult {
        text: demos[i].output.clone(),
        latency_ms: 0,
        provider: Provider::MockNearest,
    })
}

/// Splits the instruction on `", then "`, answers each segment with the
/// nearest-neighbour oracle, and concatenates the parsed actions.
pub fn complete_mock_compositional(
    demos: &[MockDemo],
    test_obs: &[u16],
    test_instruction: &str,
) -> Result<CompletionResult, LlmError> {
    let mut actions = Vec::new();
    for segment in test_instruction.split(SEGMENT_SEPARATOR) {
        let i = nearest_demo(demos, test_obs, segment)
            .map_err(|e| LlmError::Oracle(format!("segment {segment:?}: {e}")))?;
        let parsed = parse_response(&demos[i].output)
            .map_err(|e| LlmError::Oracle(format!("segment {segment:?}: demo {i}: {e}")))?;
        actions.extend(parsed);
    }
    Ok(CompletionResult {
        text: format_actions(&actions),
        latency_ms: 0,
        provider: Provider::MockCompositional,
    })
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MockNearest;

impl Completer for MockNearest {
    fn provider(&self) -> Provider {
        Provider::MockNearest
    }

    fn complete(&self, q: &Query<'_>) -> Result<CompletionResult, LlmError> {
        complete_mock_nearest(q.demos, q.test_obs, q.test_instruction)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MockCompositional;

impl Completer for MockCompositional {
    fn provider(&self) -> Provider {
        Provider::MockCompositional
    }

    fn complete(&self, q: &Query<'_>) -> Result<CompletionResult, LlmError> {
        complete_mock_compositional(q.demos, q.test_obs, q.test_instruction)
    }
}

// ---------------------------------------------------------------------------
// Remote chat-completions client

/// API key that never prints.
#[derive(Clone)]
pub struct Credential(String);

impl Credential {
    pub fn new(secret: impl Into<String>) -> Result<Self, LlmError> {
        let secret = secret.into();
        if secret.is_empty() {
            return Err(LlmError::Request("credential is empty".into()));
        }
        Ok(Self(secret))
    }

    pub fn from_env(var: &str) -> Result<Self, LlmError> {
        let value = std::env::var(var)
            .map_err(|_| LlmError::Request(format!("environment variable {var} is not set")))?;
        Self::new(value)
    }

    fn expose(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for Credential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Credential(<redacted>)")
    }
}

/// Token bucket with capacity one: at most `rate` acquisitions per second,
/// shared by all callers.
#[derive(Debug)]
pub struct RateLimiter {
    interval: Option<Duration>,
    next_slot: Mutex<Option<Instant>>,
}

impl RateLimiter {
    /// A non-positive or non-finite rate disables limiting.
    pub fn per_second(rate: f64) -> Self {
        let interval = (rate.is_finite() && rate > 0.0).then(|| Duration::from_secs_f64(1.0 / rate));
        Self {
            interval,
            next_slot: Mutex::new(None),
        }
    }

    pub fn acquire(&self) {
        let Some(interval) = self.interval else {
            return;
        };
        let wait = {
            let mut next = self.next_slot.lock().unwrap_or_else(|e| e.into_inner());
            let now = Instant::now();
            let slot = next.map_or(now, |n| n.max(now));
            *next = Some(slot + interval);
            slot - now
        };
        if !wait.is_zero() {
            thread::sleep(wait);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    /// Base URL; `/v1/chat/completions` is appended.
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub credential_env: String,
    pub max_tokens: u32,
    pub temperature: f64,
    pub timeout_secs: f64,
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub requests_per_second: f64,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com".into(),
            model: "gpt-4-turbo".into(),
            credential_env: "OPENAI_API_KEY".into(),
            max_tokens: 1024,
            temperature: 0.0,
            timeout_secs: 60.0,
            max_attempts: 3,
            initial_backoff_ms: 500,
            requests_per_second: 1.0,
        }
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: Option<String>,
}

enum Attempt {
    Done(String),
    Retry(LlmError),
    Fail(LlmError),
}

pub struct RemoteClient {
    http: reqwest::blocking::Client,
    url: String,
    config: RemoteConfig,
    credential: Credential,
    limiter: RateLimiter,
}

impl fmt::Debug for RemoteClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RemoteClient")
            .field("url", &self.url)
            .field("model", &self.config.model)
            .finish_non_exhaustive()
    }
}

impl RemoteClient {
    pub fn new(config: RemoteConfig, credential: Credential) -> Result<Self, LlmError> {
        if !(config.timeout_secs.is_finite() && config.timeout_secs > 0.0) {
            return Err(LlmError::Request("timeout must be positive".into()));
        }
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build()
            .map_err(|e| LlmError::Transport {
                status: None,
                message: e.to_string(),
            })?;
        let url = format!("{}/v1/chat/completions", config.endpoint.trim_end_matches('/'));
        Ok(Self {
            http,
            url,
            limiter: RateLimiter::per_second(config.requests_per_second),
            config,
            credential,
        })
    }

    /// Reads the credential from the environment variable named in `config`.
    pub fn from_env(config: RemoteConfig) -> Result<Self, LlmError> {
        let credential = Credential::from_env(&config.credential_env)?;
        Self::new(config, credential)
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    /// Sends one request, retrying 5xx, 429, timeouts and connection
    /// failures with exponential backoff up to `max_attempts` tries.
    pub fn send(&self, req: &CompletionRequest) -> Result<CompletionResult, LlmError> {
        let body = json!({
            "model": req.model,
            "messages": [
                {"role": "system", "content": req.system},
                {"role": "user", "content": req.user},
            ],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        debug!(
            "chat completion request: model={} prompt_chars={}",
            req.model,
            req.system.len() + req.user.len()
        );
        let attempts = self.config.max_attempts.max(1);
        let start = Instant::now();
        let mut last_err = None;
        for attempt in 1..=attempts {
            if attempt > 1 {
                let backoff = self.config.initial_backoff_ms.saturating_mul(1 << (attempt - 2).min(16));
                thread::sleep(Duration::from_millis(backoff));
            }
            self.limiter.acquire();
            match self.attempt(&body) {
                Attempt::Done(text) => {
                    return Ok(CompletionResult {
                        text,
                        latency_ms: start.elapsed().as_millis() as u64,
                        provider: Provider::Remote,
                    })
                }
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(e) => {
                    warn!("attempt {attempt}/{attempts} failed: {e}");
                    last_err = Some(e);
                }
            }
        }
        Err(last_err.expect("at least one attempt"))
    }

    fn attempt(&self, body: &serde_json::Value) -> Attempt {
        let response = self
            .http
            .post(&self.url)
            .bearer_auth(self.credential.expose())
            .json(body)
            .send();
        let response = match response {
            Ok(r) => r,
            Err(e) if e.is_timeout() => {
                return Attempt::Retry(LlmError::Timeout(Duration::from_secs_f64(
                    self.config.timeout_secs,
                )))
            }
            Err(e) => {
                return Attempt::Retry(LlmError::Transport {
                    status: None,
                    message: e.without_url().to_string(),
                })
            }
        };
        let status = response.status();
        if !status.is_success() {
            let err = LlmError::Transport {
                status: Some(status.as_u16()),
                message: status.canonical_reason().unwrap_or("request failed").to_string(),
            };
            return if status.is_server_error() || status.as_u16() == 429 {
                Attempt::Retry(err)
            } else {
                Attempt::Fail(err)
            };
        }
        let text = match response.text() {
            Ok(t) => t,
            Err(e) if e.is_timeout() => {
                return Attempt::Retry(LlmError::Timeout(Duration::from_secs_f64(
                    self.config.timeout_secs,
                )))
            }
            Err(e) => return Attempt::Fail(LlmError::Protocol(e.without_url().to_string())),
        };
        match extract_content(&text) {
            Ok(content) => Attempt::Done(content),
            Err(e) => Attempt::Fail(e),
        }
    }
}

/// First choice's message content from a chat-completions response body.
pub fn extract_content(body: &str) -> Result<String, LlmError> {
    let parsed: ChatResponse =
        serde_json::from_str(body).map_err(|e| LlmError::Protocol(format!("malformed body: {e}")))?;
    parsed
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| LlmError::Protocol("response has no choices".into()))?
        .message
        .content
        .ok_or_else(|| LlmError::Protocol("first choice has no content".into()))
}

impl Completer for RemoteClient {
    fn provider(&self) -> Provider {
        Provider::Remote
    }

    fn complete(&self, q: &Query<'_>) -> Result<CompletionResult, LlmError> {
        let req = CompletionRequest::with_temperature(
            q.prompt.system.clone(),
            q.prompt.body.clone(),
            self.config.model.clone(),
            self.config.max_tokens,
            self.config.temperature,
        )?;
        self.send(&req)
    }
}

/// One-off remote completion with default timeouts, retries and rate limit.
pub fn complete_remote(
    req: &CompletionRequest,
    endpoint: &str,
    credential: Credential,
) -> Result<CompletionResult, LlmError> {
    let config = RemoteConfig {
        endpoint: endpoint.to_string(),
        model: req.model.clone(),
        ..RemoteConfig::default()
    };
    RemoteClient::new(config, credential)?.send(req)
}
