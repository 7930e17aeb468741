use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::prompt::RenderedPrompt;

use super::{option_pair, OptionScores, ScoreError, Scorer};

pub const ENV_ENDPOINT: &str = "EVENTCAUSE_SCORER_ENDPOINT";
pub const ENV_TIMEOUT: &str = "EVENTCAUSE_SCORER_TIMEOUT";
pub const ENV_MAX_IN_FLIGHT: &str = "EVENTCAUSE_SCORER_MAX_IN_FLIGHT";

/// What the server's numbers mean. Both kinds are used as-is: the
/// normalised estimand is invariant to a common scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    #[default]
    Probability,
    ExpLogit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteScorerConfig {
    /// Base URL; requests go to `{endpoint}/score`.
    pub endpoint: String,
    pub model: String,
    pub timeout: Duration,
    pub max_in_flight: usize,
    pub max_retries: u32,
    pub backoff: Duration,
    pub score_kind: ScoreKind,
}

impl RemoteScorerConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            timeout: Duration::from_secs(60),
            max_in_flight: 8,
            max_retries: 4,
            backoff: Duration::from_millis(250),
            score_kind: ScoreKind::Probability,
        }
    }

    /// Applies `EVENTCAUSE_SCORER_*` overrides from the environment.
    pub fn with_env(mut self) -> Result<Self, ScoreError> {
        if let Ok(v) = std::env::var(ENV_ENDPOINT) {
            self.endpoint = v;
        }
        if let Ok(v) = std::env::var(ENV_TIMEOUT) {
            let secs: f64 = v
                .parse()
                .map_err(|_| ScoreError::Config(format!("{ENV_TIMEOUT}={v:?} is not a number of seconds")))?;
            if !(secs.is_finite() && secs > 0.0) {
                return Err(ScoreError::Config(format!("{ENV_TIMEOUT} must be positive")));
            }
            self.timeout = Duration::from_secs_f64(secs);
        }
        if let Ok(v) = std::env::var(ENV_MAX_IN_FLIGHT) {
            self.max_in_flight = v
                .parse()
                .map_err(|_| ScoreError::Config(format!("{ENV_MAX_IN_FLIGHT}={v:?} is not an integer")))?;
        }
        Ok(self)
    }

    fn validate(&self) -> Result<(), ScoreError> {
        if self.endpoint.trim().is_empty() {
            return Err(ScoreError::Config("endpoint is empty".into()));
        }
        if self.timeout.is_zero() {
            return Err(ScoreError::Config("timeout must be positive".into()));
        }
        if self.max_in_flight == 0 {
            return Err(ScoreError::Config("max_in_flight must be at least 1".into()));
        }
        Ok(())
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{path}", self.endpoint.trim_end_matches('/'))
    }
}

struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

struct SlotGuard<'a>(&'a Slots);

impl Slots {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        SlotGuard(self)
    }
}

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    options: &'a [String],
}

#[derive(Serialize)]
struct BatchItem<'a> {
    prompt: &'a str,
    options: &'a [String],
}

#[derive(Serialize)]
struct BatchRequest<'a> {
    model: &'a str,
    prompts: Vec<BatchItem<'a>>,
}

#[derive(Deserialize)]
struct ScoreResponse {
    scores: OptionScores,
}

#[derive(Deserialize)]
struct BatchResponse {
    results: Vec<ScoreResponse>,
}

/// Blocking HTTP scorer. Safe to share across threads; concurrent requests
/// are capped at `max_in_flight`.
pub struct RemoteScorer {
    config: RemoteScorerConfig,
    client: reqwest::blocking::Client,
    slots: Slots,
    retries: AtomicU64,
    requests: AtomicU64,
}

impl std::fmt::Debug for RemoteScorer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteScorer").field("config", &self.config).finish()
    }
}

impl RemoteScorer {
    pub fn new(config: RemoteScorerConfig) -> Result<Self, ScoreError> {
        config.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| ScoreError::Config(e.to_string()))?;
        Ok(Self {
            slots: Slots::new(config.max_in_flight),
            config,
            client,
            retries: AtomicU64::new(0),
            requests: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &RemoteScorerConfig {
        &self.config
    }

    /// Retried attempts so far.
    pub fn retries(&self) -> u64 {
        self.retries.load(Ordering::Relaxed)
    }

    /// HTTP attempts so far, including retries.
    pub fn requests(&self) -> u64 {
        self.requests.load(Ordering::Relaxed)
    }

    fn post(&self, path: &str, body: Vec<u8>) -> Result<Vec<u8>, ScoreError> {
        let url = self.config.url(path);
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            let outcome = {
                let _slot = self.slots.acquire();
                self.requests.fetch_add(1, Ordering::Relaxed);
                self.client
                    .post(&url)
                    .header(reqwest::header::CONTENT_TYPE, "application/json")
                    .body(body.clone())
                    .send()
                    .and_then(|r| {
                        let status = r.status();
                        r.bytes().map(|b| (status, b))
                    })
            };
            let retryable = match outcome {
                Ok((status, bytes)) if status.is_success() => return Ok(bytes.to_vec()),
                Ok((status, bytes)) if status.is_server_error() || status.as_u16() == 429 => {
                    format!("HTTP {status}: {}", String::from_utf8_lossy(&bytes).trim())
                }
                Ok((status, bytes)) => {
                    return Err(ScoreError::Protocol(format!(
                        "HTTP {status}: {}",
                        String::from_utf8_lossy(&bytes).trim()
                    )))
                }
                Err(e) => e.to_string(),
            };
            if attempt > self.config.max_retries {
                return Err(ScoreError::Transport {
                    message: retryable,
                    attempts: attempt,
                });
            }
            self.retries.fetch_add(1, Ordering::Relaxed);
            log::debug!("retrying {url} after attempt {attempt}: {retryable}");
            std::thread::sleep(self.config.backoff.saturating_mul(1 << (attempt - 1).min(16)));
        }
    }
}

fn decode<T: for<'de> Deserialize<'de>>(bytes: &[u8]) -> Result<T, ScoreError> {
    serde_json::from_slice(bytes).map_err(|e| ScoreError::Protocol(format!("malformed response: {e}")))
}

impl Scorer for RemoteScorer {
    fn score(&self, prompt: &RenderedPrompt) -> Result<OptionScores, ScoreError> {
        let body = serde_json::to_vec(&ScoreRequest {
            model: &self.config.model,
            prompt: &prompt.text,
            options: &prompt.option_tokens,
        })
        .map_err(|e| ScoreError::Protocol(e.to_string()))?;
        let resp: ScoreResponse = decode(&self.post("score", body)?)?;
        option_pair(prompt, &resp.scores)?;
        Ok(resp.scores)
    }

    fn score_batch(&self, prompts: &[RenderedPrompt]) -> Result<Vec<OptionScores>, ScoreError> {
        if prompts.is_empty() {
            return Ok(Vec::new());
        }
        let body = serde_json::to_vec(&BatchRequest {
            model: &self.config.model,
            prompts: prompts
                .iter()
                .map(|p| BatchItem {
                    prompt: &p.text,
                    options: &p.option_tokens,
                })
                .collect(),
        })
        .map_err(|e| ScoreError::Protocol(e.to_string()))?;
        let resp: BatchResponse = decode(&self.post("score_batch", body)?)?;
        if resp.results.len() != prompts.len() {
            return Err(ScoreError::Protocol(format!(
                "batch returned {} results for {} prompts",
                resp.results.len(),
                prompts.len()
            )));
        }
        resp.results
            .into_iter()
            .zip(prompts)
            .map(|(r, p)| option_pair(p, &r.scores).map(|_| r.scores))
            .collect()
    }

    fn name(&self) -> String {
        format!("remote({})", self.config.model)
    }
}
