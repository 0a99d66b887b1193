//! Paced HTTP client with capped exponential backoff.

use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use reqwest::blocking::Client;
use reqwest::header::{HeaderMap, RETRY_AFTER};
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

#[derive(Debug, thiserror::Error)]
pub enum HttpError {
    #[error("a descriptive user agent is required for remote requests")]
    MissingUserAgent,
    #[error("cannot build HTTP client: {0}")]
    Build(String),
    #[error("{url} returned HTTP {status}")]
    Status { url: String, status: u16 },
    #[error("request to {url} failed after {attempts} attempts: {last}")]
    Exhausted { url: String, attempts: u32, last: String },
    #[error("network access disabled (offline mode) for {0}")]
    Offline(String),
}

impl HttpError {
    pub fn is_not_found(&self) -> bool {
        matches!(self, HttpError::Status { status: 404, .. })
    }
}

/// Retry schedule: `base · 2^attempt`, capped at `cap`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    #[serde(with = "millis")]
    pub base: Duration,
    #[serde(with = "millis")]
    pub cap: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 5,
            base: Duration::from_millis(500),
            cap: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    /// Wait before retry number `attempt` (0-based).
    pub fn delay(&self, attempt: u32) -> Duration {
        let factor = 1u32.checked_shl(attempt).unwrap_or(u32::MAX);
        self.base.checked_mul(factor).unwrap_or(self.cap).min(self.cap)
    }
}

mod millis {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

/// Anything that can GET a URL as text. Remote clients in this crate take
/// this trait so tests can substitute canned responses.
pub trait Fetch: Send + Sync {
    fn get_text(&self, url: &str) -> Result<String, HttpError>;
}

#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub user_agent: String,
    pub max_requests_per_second: f64,
    pub retry: RetryPolicy,
    pub timeout: Duration,
}

impl HttpConfig {
    pub fn new(user_agent: impl Into<String>) -> Self {
        HttpConfig {
            user_agent: user_agent.into(),
            max_requests_per_second: 1.0,
            retry: RetryPolicy::default(),
            timeout: Duration::from_secs(60),
        }
    }
}

/// Blocking client that spaces requests at least `1 / rate` apart across
/// all threads sharing it.
pub struct HttpClient {
    client: Client,
    config: HttpConfig,
    next_slot: Mutex<Instant>,
}

impl HttpClient {
    pub fn new(config: HttpConfig) -> Result<Self, HttpError> {
        if config.user_agent.trim().is_empty() {
            return Err(HttpError::MissingUserAgent);
        }
        let client = Client::builder()
            .user_agent(config.user_agent.clone())
            .timeout(config.timeout)
            .build()
            .map_err(|e| HttpError::Build(e.to_string()))?;
        Ok(HttpClient {
            client,
            config,
            next_slot: Mutex::new(Instant::now()),
        })
    }

    fn pace(&self) {
        if self.config.max_requests_per_second <= 0.0 {
            return;
        }
        let interval = Duration::from_secs_f64(1.0 / self.config.max_requests_per_second);
        let wait = {
            let mut slot = self.next_slot.lock().expect("pacing lock");
            let now = Instant::now();
            let start = (*slot).max(now);
            *slot = start + interval;
            start - now
        };
        if !wait.is_zero() {
            thread::sleep(wait);
        }
    }
}

fn retry_after(headers: &HeaderMap) -> Option<Duration> {
    headers
        .get(RETRY_AFTER)?
        .to_str()
        .ok()?
        .trim()
        .parse::<u64>()
        .ok()
        .map(Duration::from_secs)
}

impl Fetch for HttpClient {
    fn get_text(&self, url: &str) -> Result<String, HttpError> {
        let policy = self.config.retry;
        let mut last = String::new();
        for attempt in 0..=policy.max_retries {
            self.pace();
            debug!(url, attempt, "GET");
            let mut wait = policy.delay(attempt);
            match self.client.get(url).send() {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        match resp.text() {
                            Ok(body) => return Ok(body),
                            Err(e) => last = e.to_string(),
                        }
                    } else if status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error() {
                        if let Some(after) = retry_after(resp.headers()) {
                            wait = after.min(policy.cap);
                        }
                        last = format!("HTTP {}", status.as_u16());
                    } else {
                        return Err(HttpError::Status {
                            url: url.to_string(),
                            status: status.as_u16(),
                        });
                    }
                }
                Err(e) => last = e.to_string(),
            }
            if attempt < policy.max_retries {
                warn!(url, attempt, error = %last, "retrying");
                thread::sleep(wait);
            }
        }
        Err(HttpError::Exhausted {
            url: url.to_string(),
            attempts: policy.max_retries + 1,
            last,
        })
    }
}

/// Stand-in used when the pipeline runs cache-only.
pub struct OfflineFetch;

impl Fetch for OfflineFetch {
    fn get_text(&self, url: &str) -> Result<String, HttpError> {
        Err(HttpError::Offline(url.to_string()))
    }
}
