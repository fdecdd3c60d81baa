//! Live completion client and the mock/live switch.
//!
//! The live endpoint takes `{prompt, max_length, temperature, model}` as JSON
//! and answers `{text, usage}`. Failed attempts are retried with exponential
//! backoff until the attempt cap or the request's time budget runs out.

use std::time::{Duration, Instant};

use humaine_core::gateway::{Completion, CompletionRequest, Usage};
use serde::{Deserialize, Serialize};

pub const ENV_MODE: &str = "HUMAINE_LLM_MODE";
pub const ENV_URL: &str = "HUMAINE_LLM_URL";
pub const ENV_KEY: &str = "HUMAINE_LLM_KEY";

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("completion timed out after {attempts} attempt(s) in {elapsed_ms} ms")]
    Timeout { attempts: u32, elapsed_ms: u64 },
    #[error("provider answered status {status} after {attempts} attempt(s)")]
    Provider { status: u16, attempts: u32 },
    #[error("malformed provider payload: {0}")]
    Protocol(String),
    #[error("gateway configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LlmMode {
    #[default]
    Mock,
    Live,
}

impl LlmMode {
    pub fn as_str(self) -> &'static str {
        match self {
            LlmMode::Mock => "mock",
            LlmMode::Live => "live",
        }
    }
}

#[derive(Debug, Clone)]
pub struct LlmSettings {
    pub mode: LlmMode,
    pub url: Option<String>,
    pub key: Option<String>,
    pub model: String,
    pub max_attempts: u32,
    pub backoff_ms: u64,
    pub timeout_ms: u64,
    pub max_length: u32,
    pub temperature: f64,
}

impl Default for LlmSettings {
    fn default() -> Self {
        LlmSettings {
            mode: LlmMode::Mock,
            url: None,
            key: None,
            model: "default".to_string(),
            max_attempts: 3,
            backoff_ms: 200,
            timeout_ms: 30_000,
            max_length: 512,
            temperature: 0.7,
        }
    }
}

impl LlmSettings {
    /// Mode, endpoint and key from the environment. Live mode needs a URL.
    pub fn from_env() -> Result<Self, GatewayError> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Result<Self, GatewayError> {
        let mode = match get(ENV_MODE).as_deref().map(str::trim) {
            None | Some("") | Some("mock") => LlmMode::Mock,
            Some("live") => LlmMode::Live,
            Some(other) => return Err(GatewayError::Config(format!("{ENV_MODE} must be mock or live, got `{other}`"))),
        };
        let url = get(ENV_URL).filter(|u| !u.trim().is_empty());
        if mode == LlmMode::Live && url.is_none() {
            return Err(GatewayError::Config(format!("{ENV_URL} is required in live mode")));
        }
        Ok(LlmSettings { mode, url, key: get(ENV_KEY).filter(|k| !k.is_empty()), ..Self::default() })
    }

    pub fn request(&self, prompt: impl Into<String>) -> Result<CompletionRequest, GatewayError> {
        CompletionRequest::new(prompt, self.max_length, self.temperature, self.model.clone(), self.timeout_ms)
            .map_err(|e| GatewayError::Config(e.to_string()))
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    prompt: &'a str,
    max_length: u32,
    temperature: f64,
    model: &'a str,
}

#[derive(Deserialize)]
struct WireResponse {
    text: String,
    #[serde(default)]
    usage: Usage,
}

enum Attempt {
    Done(WireResponse),
    Retry(GatewayError),
    Fatal(GatewayError),
}

/// HTTP client for the live endpoint. One instance may serve concurrent
/// callers; every request carries its own deadline.
#[derive(Debug, Clone)]
pub struct LiveClient {
    http: reqwest::Client,
    url: String,
    key: Option<String>,
    max_attempts: u32,
    backoff: Duration,
}

impl LiveClient {
    pub fn new(settings: &LlmSettings) -> Result<Self, GatewayError> {
        let url = settings.url.clone().ok_or_else(|| GatewayError::Config("no endpoint URL".to_string()))?;
        if settings.max_attempts == 0 {
            return Err(GatewayError::Config("attempt cap must be positive".to_string()));
        }
        let http = reqwest::Client::builder().build().map_err(|e| GatewayError::Config(e.to_string()))?;
        Ok(LiveClient {
            http,
            url,
            key: settings.key.clone(),
            max_attempts: settings.max_attempts,
            backoff: Duration::from_millis(settings.backoff_ms),
        })
    }

    /// [`LiveClient::complete_async`] on a private runtime. Must not be
    /// called from async code.
    pub fn complete(&self, req: &CompletionRequest) -> Result<Completion, GatewayError> {
        let rt = tokio::runtime::Builder::new_current_thread()
            .enable_all()
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        rt.block_on(self.complete_async(req))
    }

    pub async fn complete_async(&self, req: &CompletionRequest) -> Result<Completion, GatewayError> {
        req.validate().map_err(|e| GatewayError::Config(e.to_string()))?;
        let started = Instant::now();
        let budget = Duration::from_millis(req.timeout_ms);
        let body = WireRequest { prompt: &req.prompt, max_length: req.max_length, temperature: req.temperature, model: &req.model };
        let mut delay = self.backoff;
        let mut attempts = 0;
        loop {
            let Some(remaining) = budget.checked_sub(started.elapsed()).filter(|d| !d.is_zero()) else {
                return Err(GatewayError::Timeout { attempts, elapsed_ms: started.elapsed().as_millis() as u64 });
            };
            attempts += 1;
            let err = match self.attempt(&body, remaining, attempts).await {
                Attempt::Done(r) => return Ok(Completion { text: r.text, usage: r.usage, attempts }),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(e) => e,
            };
            let left = budget.saturating_sub(started.elapsed());
            if attempts >= self.max_attempts || left <= delay {
                return Err(match err {
                    GatewayError::Timeout { .. } => {
                        GatewayError::Timeout { attempts, elapsed_ms: started.elapsed().as_millis() as u64 }
                    }
                    other => other,
                });
            }
            tokio::time::sleep(delay).await;
            delay = delay.saturating_mul(2);
        }
    }

    async fn attempt(&self, body: &WireRequest<'_>, timeout: Duration, attempts: u32) -> Attempt {
        let mut call = self.http.post(&self.url).timeout(timeout).json(body);
        if let Some(key) = &self.key {
            call = call.bearer_auth(key);
        }
        let resp = match call.send().await {
            Ok(r) => r,
            // Unreachable endpoints are reported as timeouts once retries are spent.
            Err(e) if e.is_timeout() || e.is_connect() || e.is_request() => {
                return Attempt::Retry(GatewayError::Timeout { attempts, elapsed_ms: 0 })
            }
            Err(e) => return Attempt::Fatal(GatewayError::Protocol(e.to_string())),
        };
        let status = resp.status();
        if !status.is_success() {
            let err = GatewayError::Provider { status: status.as_u16(), attempts };
            return if status.is_server_error() || status.as_u16() == 429 { Attempt::Retry(err) } else { Attempt::Fatal(err) };
        }
        match resp.json::<WireResponse>().await {
            Ok(r) => Attempt::Done(r),
            Err(e) if e.is_timeout() => Attempt::Retry(GatewayError::Timeout { attempts, elapsed_ms: 0 }),
            Err(e) => Attempt::Fatal(GatewayError::Protocol(e.to_string())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_from_environment() {
        let s = LlmSettings::from_lookup(|_| None).unwrap();
        assert_eq!(s.mode, LlmMode::Mock);
        let s = LlmSettings::from_lookup(|k| match k {
            ENV_MODE => Some("live".into()),
            ENV_URL => Some("http://127.0.0.1:9/v1".into()),
            _ => None,
        })
        .unwrap();
        assert_eq!(s.mode, LlmMode::Live);
        assert!(LlmSettings::from_lookup(|k| (k == ENV_MODE).then(|| "live".into())).is_err());
        assert!(LlmSettings::from_lookup(|k| (k == ENV_MODE).then(|| "remote".into())).is_err());
    }
}
