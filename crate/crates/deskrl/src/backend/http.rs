//! JSON-over-HTTP backend for chat-completion inference servers.
//!
//! Speaks the de-facto chat-completion shape: POST a JSON body with a
//! `messages` array (system + user roles) and the sampling fields `n`,
//! `max_tokens`, `temperature`, and optional `seed`; read back
//! `choices[i].message.content` and `choices[i].finish_reason`. Prompt text
//! passes through byte-identically (JSON string escaping is lossless).
//!
//! Every failure mode (transport error, non-2xx status, malformed payload,
//! wrong choice count) retries with exponential backoff until the attempt
//! budget is spent, then surfaces as a backend-unavailable error.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Backend, FinishReason, GenRequest, GenResponse};

/// Connection and retry settings. `api_key_env` names an environment
/// variable read once at construction; when set and non-empty its value is
/// sent as a bearer token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpBackendConfig {
    pub base_url: String,
    /// Request path appended to `base_url`.
    pub path: String,
    /// Model name forwarded in the request body.
    pub model: String,
    pub api_key_env: String,
    pub timeout_secs: u64,
    /// Retries after the first attempt.
    pub max_retries: u32,
    /// First backoff delay; doubles per retry.
    pub retry_base_delay_ms: u64,
    /// Concurrency hint surfaced through [`Backend::max_in_flight`].
    pub max_in_flight: usize,
}

pub const DEFAULT_API_KEY_ENV: &str = "DESKRL_API_KEY";

impl HttpBackendConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        HttpBackendConfig {
            base_url: base_url.into(),
            path: "/v1/chat/completions".to_string(),
            model: model.into(),
            api_key_env: DEFAULT_API_KEY_ENV.to_string(),
            timeout_secs: 60,
            max_retries: 3,
            retry_base_delay_ms: 250,
            max_in_flight: 8,
        }
    }

    fn endpoint(&self) -> String {
        let base = self.base_url.trim_end_matches('/');
        let path = if self.path.starts_with('/') { self.path.clone() } else { format!("/{}", self.path) };
        format!("{base}{path}")
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: [WireMessage<'a>; 2],
    n: usize,
    max_tokens: usize,
    temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireChoiceMessage,
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct WireChoiceMessage {
    content: String,
}

/// Blocking HTTP client for a chat-completion endpoint. Stateless per
/// request apart from the retry budget, so it is safe to share across
/// curation workers.
pub struct HttpBackend {
    config: HttpBackendConfig,
    endpoint: String,
    client: reqwest::blocking::Client,
    bearer_token: Option<String>,
    name: String,
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Result<Self> {
        if config.base_url.is_empty() {
            return Err(Error::Config("http backend needs a base_url".to_string()));
        }
        if config.max_in_flight == 0 {
            return Err(Error::Config("max_in_flight must be at least 1".to_string()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| Error::Config(format!("failed to build http client: {e}")))?;
        let bearer_token = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        let endpoint = config.endpoint();
        let name = format!("http:{}:{}", endpoint, config.model);
        Ok(HttpBackend { config, endpoint, client, bearer_token, name })
    }

    pub fn config(&self) -> &HttpBackendConfig {
        &self.config
    }

    /// One attempt: send, check status, parse, check cardinality.
    fn attempt(&self, request: &GenRequest) -> std::result::Result<GenResponse, String> {
        let body = WireRequest {
            model: &self.config.model,
            messages: [
                WireMessage { role: "system", content: &request.system_prompt },
                WireMessage { role: "user", content: &request.user_prompt },
            ],
            n: request.n,
            max_tokens: request.max_tokens,
            temperature: request.temperature,
            seed: request.seed,
        };
        let mut http = self.client.post(&self.endpoint).json(&body);
        if let Some(token) = &self.bearer_token {
            http = http.bearer_auth(token);
        }
        let response = http.send().map_err(|e| format!("transport error: {e}"))?;
        let status = response.status();
        let text = response.text().map_err(|e| format!("failed reading response body: {e}"))?;
        if !status.is_success() {
            return Err(format!("status {status}: {}", truncate(&text, 200)));
        }
        let parsed: WireResponse =
            serde_json::from_str(&text).map_err(|e| format!("malformed payload: {e}: {}", truncate(&text, 200)))?;
        if parsed.choices.len() != request.n {
            return Err(format!("expected {} choices, got {}", request.n, parsed.choices.len()));
        }
        let mut texts = Vec::with_capacity(request.n);
        let mut finish_reasons = Vec::with_capacity(request.n);
        for choice in parsed.choices {
            finish_reasons.push(match choice.finish_reason.as_deref() {
                Some("length") => FinishReason::Length,
                _ => FinishReason::Stop,
            });
            texts.push(choice.message.content);
        }
        Ok(GenResponse { texts, finish_reasons })
    }
}

impl Backend for HttpBackend {
    fn generate(&self, request: &GenRequest) -> Result<GenResponse> {
        request.validate()?;
        let mut last_error = String::new();
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                let delay = self.config.retry_base_delay_ms.saturating_mul(1 << (attempt - 1));
                std::thread::sleep(Duration::from_millis(delay));
            }
            match self.attempt(request) {
                Ok(response) => {
                    response.validate_against(request)?;
                    return Ok(response);
                }
                Err(e) => {
                    log::warn!("generation attempt {} against {} failed: {e}", attempt + 1, self.endpoint);
                    last_error = e;
                }
            }
        }
        Err(Error::BackendUnavailable(format!(
            "{} attempts against {} all failed; last error: {last_error}",
            self.config.max_retries + 1,
            self.endpoint
        )))
    }

    fn name(&self) -> &str {
        &self.name
    }

    fn max_in_flight(&self) -> usize {
        self.config.max_in_flight
    }
}

fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoint_joins_base_and_path() {
        let mut c = HttpBackendConfig::new("http://host:1234/", "m");
        assert_eq!(c.endpoint(), "http://host:1234/v1/chat/completions");
        c.path = "custom/route".to_string();
        assert_eq!(c.endpoint(), "http://host:1234/custom/route");
    }

    #[test]
    fn wire_request_serializes_expected_fields() {
        let body = WireRequest {
            model: "m",
            messages: [
                WireMessage { role: "system", content: "s" },
                WireMessage { role: "user", content: "u" },
            ],
            n: 2,
            max_tokens: 7,
            temperature: 0.5,
            seed: None,
        };
        let v: serde_json::Value = serde_json::from_str(&serde_json::to_string(&body).unwrap()).unwrap();
        assert_eq!(v["model"], "m");
        assert_eq!(v["messages"][0]["role"], "system");
        assert_eq!(v["messages"][1]["content"], "u");
        assert_eq!(v["n"], 2);
        assert_eq!(v["max_tokens"], 7);
        assert_eq!(v["temperature"], 0.5);
        assert!(v.get("seed").is_none(), "absent seed must be omitted");
    }

    #[test]
    fn rejects_empty_base_url_and_zero_in_flight() {
        assert!(HttpBackend::new(HttpBackendConfig::new("", "m")).is_err());
        let mut c = HttpBackendConfig::new("http://h", "m");
        c.max_in_flight = 0;
        assert!(HttpBackend::new(c).is_err());
    }
}
