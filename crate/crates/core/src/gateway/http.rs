//! Blocking JSON/HTTP client for remote backends.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{
    Backend, ConsistRequest, ConsistResponse, ErrorResponse, GatewayError, GenerateRequest,
    GenerateResponse, Result, ScoreTagsRequest, ScoreTagsResponse,
};

#[derive(Debug, Clone, PartialEq)]
pub struct HttpConfig {
    pub timeout: Duration,
    pub retries: u32,
    /// First retry delay; doubled on every further attempt.
    pub backoff: Duration,
    pub max_in_flight: usize,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(30),
            retries: 2,
            backoff: Duration::from_millis(200),
            max_in_flight: 8,
        }
    }
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
struct Limiter {
    available: Mutex<usize>,
    released: Condvar,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn new(n: usize) -> Self {
        Self {
            available: Mutex::new(n.max(1)),
            released: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock().expect("limiter poisoned");
        while *n == 0 {
            n = self.released.wait(n).expect("limiter poisoned");
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.available.lock().expect("limiter poisoned") += 1;
        self.0.released.notify_one();
    }
}

#[derive(Debug)]
pub struct HttpBackend {
    base_url: String,
    client: reqwest::blocking::Client,
    config: HttpConfig,
    limiter: Limiter,
}

impl HttpBackend {
    pub fn new(base_url: &str, config: HttpConfig) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| GatewayError::Unreachable(e.to_string()))?;
        Ok(Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            client,
            limiter: Limiter::new(config.max_in_flight),
            config,
        })
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    fn post<Req: Serialize, Resp: DeserializeOwned>(&self, path: &str, body: &Req) -> Result<Resp> {
        let _permit = self.limiter.acquire();
        let url = format!("{}{path}", self.base_url);
        let mut last_error = String::new();
        for attempt in 0..=self.config.retries {
            if attempt > 0 {
                std::thread::sleep(self.config.backoff * 2u32.pow(attempt - 1));
            }
            let response = match self.client.post(&url).json(body).send() {
                Ok(r) => r,
                Err(e) => {
                    last_error = format!("{url}: {e}");
                    log::warn!("request attempt {} failed: {last_error}", attempt + 1);
                    continue;
                }
            };
            let status = response.status();
            let bytes = response
                .bytes()
                .map_err(|e| GatewayError::Protocol(format!("{url}: reading body: {e}")))?;
            if status.is_success() {
                return serde_json::from_slice(&bytes)
                    .map_err(|e| GatewayError::Protocol(format!("{url}: {e}")));
            }
            let message = serde_json::from_slice::<ErrorResponse>(&bytes)
                .map(|e| e.error)
                .unwrap_or_else(|_| String::from_utf8_lossy(&bytes).into_owned());
            if status.is_server_error() {
                last_error = format!("{url}: {status}: {message}");
                log::warn!("request attempt {} failed: {last_error}", attempt + 1);
                continue;
            }
            return Err(GatewayError::Rejected {
                status: status.as_u16(),
                message,
            });
        }
        Err(GatewayError::Unreachable(last_error))
    }
}

impl Backend for HttpBackend {
    fn score_tags(&self, request: &ScoreTagsRequest) -> Result<ScoreTagsResponse> {
        self.post("/v1/score_tags", request)
    }

    fn generate(&self, request: &GenerateRequest) -> Result<GenerateResponse> {
        self.post("/v1/generate", request)
    }

    fn consist(&self, request: &ConsistRequest) -> Result<ConsistResponse> {
        self.post("/v1/consist", request)
    }
}
