//! Blocking JSON-over-HTTP client shared by the embedding and chat services.

use std::time::Duration;

use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            base_delay: Duration::from_millis(250),
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (1-based): base, 2*base, 4*base, ...
    pub fn delay(&self, retry: u32) -> Duration {
        self.base_delay * 2u32.saturating_pow(retry.saturating_sub(1))
    }
}

#[derive(Debug, Clone)]
pub struct JsonClient {
    endpoint: String,
    api_key: Option<String>,
    retry: RetryPolicy,
    client: reqwest::blocking::Client,
}

enum Failure {
    Transient(String),
    Fatal(String),
}

impl JsonClient {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        Ok(JsonClient {
            endpoint: endpoint.into(),
            api_key,
            retry: RetryPolicy::default(),
            client,
        })
    }

    /// Reads the key from `var`; an unset variable means no auth header.
    pub fn from_env(endpoint: impl Into<String>, var: &str) -> Result<Self> {
        Self::new(endpoint, std::env::var(var).ok().filter(|k| !k.is_empty()))
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    /// POSTs `body`, retrying connection errors, timeouts, 429 and 5xx with
    /// exponential backoff. Other 4xx responses fail immediately.
    pub fn post(&self, body: &Value) -> Result<Value> {
        let attempts = self.retry.attempts.max(1);
        let mut last = String::new();
        for attempt in 1..=attempts {
            if attempt > 1 {
                std::thread::sleep(self.retry.delay(attempt - 1));
            }
            match self.post_once(body) {
                Ok(v) => return Ok(v),
                Err(Failure::Transient(msg)) => last = msg,
                Err(Failure::Fatal(msg)) => {
                    return Err(Error::Transport {
                        endpoint: self.endpoint.clone(),
                        attempts: attempt,
                        reason: msg,
                    })
                }
            }
        }
        Err(Error::Transport {
            endpoint: self.endpoint.clone(),
            attempts,
            reason: last,
        })
    }

    fn post_once(&self, body: &Value) -> std::result::Result<Value, Failure> {
        let mut req = self.client.post(&self.endpoint).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| Failure::Transient(e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(Failure::Transient(format!("HTTP {status}")));
        }
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(Failure::Fatal(format!("HTTP {status}: {text}")));
        }
        resp.json::<Value>()
            .map_err(|e| Failure::Fatal(format!("invalid JSON body: {e}")))
    }
}
