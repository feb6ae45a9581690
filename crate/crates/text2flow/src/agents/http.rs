//! Chat-completion HTTP backend.
//!
//! Speaks the common `{"model", "messages", "temperature", "max_tokens"}`
//! JSON protocol against a configurable endpoint, with the API key read
//! from an environment variable and capped exponential-backoff retries on
//! transport errors, 429s, and 5xx responses.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{AgentBackend, AgentError, AgentRequest, AgentResponse};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HttpBackendConfig {
    /// Full chat-completions URL, e.g. `https://api.openai.com/v1/chat/completions`.
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key. Set it empty
    /// to send no Authorization header (local servers).
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
}

impl Default for HttpBackendConfig {
    fn default() -> Self {
        HttpBackendConfig {
            endpoint: "https://api.openai.com/v1/chat/completions".to_string(),
            model: "gpt-4o".to_string(),
            api_key_env: "TEXT2FLOW_API_KEY".to_string(),
            timeout_secs: 120,
            max_retries: 3,
            initial_backoff_ms: 500,
        }
    }
}

pub struct HttpBackend {
    config: HttpBackendConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Result<Self, AgentError> {
        if config.endpoint.trim().is_empty() {
            return Err(AgentError::InvalidConfig("endpoint is empty".to_string()));
        }
        let api_key = if config.api_key_env.is_empty() {
            None
        } else {
            match std::env::var(&config.api_key_env) {
                Ok(key) if !key.is_empty() => Some(key),
                _ => return Err(AgentError::MissingApiKey(config.api_key_env.clone())),
            }
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| AgentError::InvalidConfig(e.to_string()))?;
        Ok(HttpBackend {
            config,
            api_key,
            client,
        })
    }

    fn attempt(&self, request: &AgentRequest) -> Result<AgentResponse, (bool, String)> {
        let body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        });
        let started = Instant::now();
        let mut call = self.client.post(&self.config.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            call = call.bearer_auth(key);
        }
        let response = call.send().map_err(|e| (true, e.to_string()))?;
        let status = response.status();
        let retryable = status.as_u16() == 429 || status.is_server_error();
        let text = response.text().map_err(|e| (true, e.to_string()))?;
        if !status.is_success() {
            return Err((retryable, format!("HTTP {status}: {}", truncate(&text))));
        }
        let parsed: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| (false, format!("bad JSON: {e}")))?;
        let content = parsed["choices"][0]["message"]["content"]
            .as_str()
            .unwrap_or_default()
            .to_string();
        Ok(AgentResponse {
            prompt_tokens: parsed["usage"]["prompt_tokens"].as_u64().unwrap_or(0),
            completion_tokens: parsed["usage"]["completion_tokens"].as_u64().unwrap_or(0),
            latency_ms: started.elapsed().as_millis() as u64,
            text: content,
        })
    }
}

fn truncate(text: &str) -> String {
    let mut s: String = text.chars().take(200).collect();
    if text.chars().count() > 200 {
        s.push('…');
    }
    s
}

impl AgentBackend for HttpBackend {
    fn complete(&self, request: &AgentRequest) -> Result<AgentResponse, AgentError> {
        let mut backoff = Duration::from_millis(self.config.initial_backoff_ms);
        let attempts = self.config.max_retries.max(1);
        let mut last_error = String::new();
        for attempt in 1..=attempts {
            match self.attempt(request) {
                Ok(response) => {
                    if response.text.trim().is_empty() {
                        return Err(AgentError::EmptyResponse);
                    }
                    return Ok(response);
                }
                Err((retryable, message)) => {
                    log::warn!(
                        "{} attempt {attempt}/{attempts} failed: {message}",
                        request.role
                    );
                    last_error = message;
                    if !retryable {
                        return Err(AgentError::Transport {
                            attempts: attempt,
                            message: last_error,
                        });
                    }
                    if attempt < attempts {
                        std::thread::sleep(backoff);
                        backoff *= 2;
                    }
                }
            }
        }
        Err(AgentError::Transport {
            attempts,
            message: last_error,
        })
    }

    fn name(&self) -> &str {
        "http"
    }
}
