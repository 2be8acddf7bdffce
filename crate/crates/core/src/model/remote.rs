//! HTTP client for hosted language models.
//!
//! Two wire formats are supported:
//!
//! - [`Protocol::Native`]: `POST {model_id, prompt, candidates}` answered by
//!   `{probabilities, token_counts}`, one entry per candidate.
//! - [`Protocol::Completions`]: the common completions format with echoed
//!   per-token log-probabilities. Each candidate is appended to the prompt,
//!   echoed back with `max_tokens = 0`, and the tokens starting at or after
//!   the prompt boundary are the label's tokens.
//!
//! The endpoint URL and bearer token come from the caller; nothing is
//! hard-coded.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{LabelScorer, ScoreError};

/// Environment variable holding the bearer token.
pub const TOKEN_ENV: &str = "AIT_API_TOKEN";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Native,
    Completions,
}

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub model_id: String,
    pub protocol: Protocol,
    pub auth_token: Option<String>,
    /// Extra attempts after a retryable failure.
    pub retries: u32,
    pub retry_backoff: Duration,
    pub timeout: Duration,
    /// Prompts longer than this many chars are rejected before sending.
    pub max_prompt_chars: Option<usize>,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>, model_id: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model_id: model_id.into(),
            protocol: Protocol::Native,
            auth_token: None,
            retries: 3,
            retry_backoff: Duration::from_millis(250),
            timeout: Duration::from_secs(60),
            max_prompt_chars: None,
        }
    }
}

#[derive(Debug, Serialize)]
struct NativeRequest<'a> {
    model_id: &'a str,
    prompt: &'a str,
    candidates: &'a [String],
}

#[derive(Debug, Deserialize)]
struct NativeResponse {
    probabilities: Vec<f64>,
    token_counts: Vec<u64>,
}

pub struct RemoteClient {
    config: RemoteConfig,
    agent: ureq::Agent,
}

impl RemoteClient {
    pub fn new(config: RemoteConfig) -> Result<Self, ScoreError> {
        if config.endpoint.trim().is_empty() {
            return Err(ScoreError::Config("remote endpoint is empty".into()));
        }
        let agent = ureq::Agent::new_with_config(
            ureq::Agent::config_builder()
                .timeout_global(Some(config.timeout))
                .http_status_as_error(false)
                .build(),
        );
        Ok(Self { config, agent })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn post(&self, body: &Value) -> Result<Value, ScoreError> {
        let mut request = self.agent.post(&self.config.endpoint);
        if let Some(token) = &self.config.auth_token {
            request = request.header("Authorization", &format!("Bearer {token}"));
        }
        let mut response = request.send_json(body).map_err(transport_error)?;
        let status = response.status().as_u16();
        let text = response.body_mut().read_to_string().map_err(transport_error)?;
        match status {
            200..=299 => serde_json::from_str(&text).map_err(|e| ScoreError::Protocol(format!("invalid JSON: {e}"))),
            429 | 500..=599 => Err(ScoreError::Transport(format!("HTTP {status}: {}", snippet(&text)))),
            _ if looks_like_overflow(&text) => Err(ScoreError::ContextOverflow(snippet(&text))),
            _ => Err(ScoreError::Protocol(format!("HTTP {status}: {}", snippet(&text)))),
        }
    }

    fn with_retries<T>(&self, mut call: impl FnMut() -> Result<T, ScoreError>) -> Result<T, ScoreError> {
        let mut delay = self.config.retry_backoff;
        let mut attempt = 0;
        loop {
            match call() {
                Err(e) if e.is_retryable() && attempt < self.config.retries => {
                    attempt += 1;
                    std::thread::sleep(delay);
                    delay = delay.saturating_mul(2);
                }
                other => return other,
            }
        }
    }

    fn native(&self, prompt: &str, candidates: &[String]) -> Result<Vec<f64>, ScoreError> {
        let body = serde_json::to_value(NativeRequest {
            model_id: &self.config.model_id,
            prompt,
            candidates,
        })
        .map_err(|e| ScoreError::Protocol(e.to_string()))?;
        let value = self.with_retries(|| self.post(&body))?;
        let response: NativeResponse = serde_json::from_value(value)
            .map_err(|e| ScoreError::Protocol(format!("unexpected response shape: {e}")))?;
        if response.probabilities.len() != candidates.len() || response.token_counts.len() != candidates.len() {
            return Err(ScoreError::Protocol(format!(
                "{} candidates sent, {} probabilities / {} token counts returned",
                candidates.len(),
                response.probabilities.len(),
                response.token_counts.len()
            )));
        }
        for (label, &count) in candidates.iter().zip(&response.token_counts) {
            match count {
                0 => return Err(ScoreError::UnknownLabel(label.clone())),
                1 => {}
                n => {
                    return Err(ScoreError::MultiTokenLabel {
                        label: label.clone(),
                        tokens: n as usize,
                    })
                }
            }
        }
        for (label, &p) in candidates.iter().zip(&response.probabilities) {
            check_probability(label, p)?;
        }
        Ok(response.probabilities)
    }

    fn completions(&self, prompt: &str, label: &str) -> Result<f64, ScoreError> {
        let body = json!({
            "model": self.config.model_id,
            "prompt": format!("{prompt}{label}"),
            "max_tokens": 0,
            "echo": true,
            "logprobs": 1,
            "temperature": 0,
        });
        let value = self.with_retries(|| self.post(&body))?;
        let logprobs = &value["choices"][0]["logprobs"];
        let tokens = string_array(&logprobs["tokens"], "tokens")?;
        let offsets = logprobs["text_offset"]
            .as_array()
            .ok_or_else(|| ScoreError::Protocol("missing text_offset".into()))?;
        let token_logprobs = logprobs["token_logprobs"]
            .as_array()
            .ok_or_else(|| ScoreError::Protocol("missing token_logprobs".into()))?;
        if offsets.len() != tokens.len() || token_logprobs.len() != tokens.len() {
            return Err(ScoreError::Protocol("logprobs arrays differ in length".into()));
        }
        let boundary = prompt.chars().count() as u64;
        let mut label_tokens = Vec::new();
        for (i, (token, offset)) in tokens.iter().zip(offsets).enumerate() {
            let offset = offset
                .as_u64()
                .ok_or_else(|| ScoreError::Protocol("non-integer text_offset".into()))?;
            if offset >= boundary {
                label_tokens.push(i);
            } else if offset + token.chars().count() as u64 > boundary {
                // A token straddles the prompt/label boundary.
                return Err(ScoreError::MultiTokenLabel {
                    label: label.to_string(),
                    tokens: 0,
                });
            }
        }
        match label_tokens.as_slice() {
            [] => Err(ScoreError::UnknownLabel(label.to_string())),
            [i] => {
                let lp = token_logprobs[*i]
                    .as_f64()
                    .ok_or_else(|| ScoreError::Protocol("label token has no log-probability".into()))?;
                let p = lp.exp();
                check_probability(label, p)?;
                Ok(p)
            }
            many => Err(ScoreError::MultiTokenLabel {
                label: label.to_string(),
                tokens: many.len(),
            }),
        }
    }
}

impl LabelScorer for RemoteClient {
    fn label_probabilities(&self, prompt: &str, candidates: &[String]) -> Result<Vec<f64>, ScoreError> {
        if let Some(limit) = self.config.max_prompt_chars {
            let n = prompt.chars().count();
            if n > limit {
                return Err(ScoreError::ContextOverflow(format!("{n} chars > limit {limit}")));
            }
        }
        match self.config.protocol {
            Protocol::Native => self.native(prompt, candidates),
            Protocol::Completions => candidates.iter().map(|c| self.completions(prompt, c)).collect(),
        }
    }

    fn identity(&self) -> String {
        let protocol = match self.config.protocol {
            Protocol::Native => "native",
            Protocol::Completions => "completions",
        };
        format!("remote({protocol}:{})", self.config.model_id)
    }
}

fn check_probability(label: &str, p: f64) -> Result<(), ScoreError> {
    if p > 0.0 && p <= 1.0 {
        Ok(())
    } else {
        Err(ScoreError::Protocol(format!(
            "probability {p} for {label:?} is outside (0, 1]"
        )))
    }
}

fn string_array<'a>(value: &'a Value, name: &str) -> Result<Vec<&'a str>, ScoreError> {
    value
        .as_array()
        .ok_or_else(|| ScoreError::Protocol(format!("missing {name}")))?
        .iter()
        .map(|v| {
            v.as_str()
                .ok_or_else(|| ScoreError::Protocol(format!("non-string entry in {name}")))
        })
        .collect()
}

fn transport_error(e: ureq::Error) -> ScoreError {
    match e {
        ureq::Error::Json(e) => ScoreError::Protocol(e.to_string()),
        other => ScoreError::Transport(other.to_string()),
    }
}

fn looks_like_overflow(body: &str) -> bool {
    let lower = body.to_ascii_lowercase();
    lower.contains("context_overflow") || lower.contains("context length") || lower.contains("too long")
}

fn snippet(text: &str) -> String {
    text.chars().take(200).collect()
}
