//! Minimal chat-completion client shared by the remote summarizer, the
//! remote judges, and the CLI's `--generate` passthrough.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LlmConfig {
    pub endpoint: String,
    pub model_id: String,
    pub credential_env_var: String,
    pub retry_base_ms: u64,
    pub temperature: f64,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            endpoint: String::new(),
            model_id: String::new(),
            credential_env_var: "LLM_API_KEY".into(),
            retry_base_ms: 1000,
            temperature: 0.0,
        }
    }
}

/// Single-prompt completion. Implementations must be callable concurrently.
pub trait LlmClient: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String>;
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatResponseMessage,
}

#[derive(Deserialize)]
struct ChatResponseMessage {
    content: String,
}

/// Chat-completions wire format: `POST {"model", "messages": [{"role",
/// "content"}], "temperature"}` expecting `{"choices": [{"message":
/// {"content"}}]}`. Transport failures and 429/5xx retry up to 3 times with
/// exponential backoff.
pub struct RemoteLlmClient {
    config: LlmConfig,
    credential: String,
    client: reqwest::blocking::Client,
}

impl RemoteLlmClient {
    pub fn new(config: &LlmConfig) -> Result<Self> {
        if config.endpoint.is_empty() {
            return Err(Error::Config("llm client requires `endpoint`".into()));
        }
        let credential = std::env::var(&config.credential_env_var).map_err(|_| {
            Error::Config(format!(
                "credential environment variable `{}` not set",
                config.credential_env_var
            ))
        })?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| Error::Http {
                url: config.endpoint.clone(),
                status: None,
                reason: e.to_string(),
                retryable: false,
            })?;
        Ok(RemoteLlmClient {
            config: config.clone(),
            credential,
            client,
        })
    }

    fn post_once(&self, prompt: &str) -> Result<String> {
        let http_err = |status: Option<u16>, reason: String, retryable: bool| Error::Http {
            url: self.config.endpoint.clone(),
            status,
            reason,
            retryable,
        };
        let request = ChatRequest {
            model: &self.config.model_id,
            messages: vec![ChatMessage {
                role: "user",
                content: prompt,
            }],
            temperature: self.config.temperature,
        };
        let response = self
            .client
            .post(&self.config.endpoint)
            .bearer_auth(&self.credential)
            .json(&request)
            .send()
            .map_err(|e| http_err(None, e.to_string(), true))?;
        let status = response.status();
        if !status.is_success() {
            let retryable = status.as_u16() == 429 || status.is_server_error();
            return Err(http_err(
                Some(status.as_u16()),
                "non-success status".into(),
                retryable,
            ));
        }
        let body: ChatResponse = response
            .json()
            .map_err(|e| http_err(Some(status.as_u16()), format!("bad body: {e}"), false))?;
        body.choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| http_err(Some(status.as_u16()), "empty choices".into(), false))
    }
}

impl LlmClient for RemoteLlmClient {
    fn complete(&self, prompt: &str) -> Result<String> {
        let mut attempt = 0u32;
        loop {
            match self.post_once(prompt) {
                Ok(text) => return Ok(text),
                Err(e @ Error::Http {
                    retryable: true, ..
                }) if attempt < 3 => {
                    let backoff = self.config.retry_base_ms << attempt;
                    log::warn!("llm request failed ({e}), retrying in {backoff}ms");
                    std::thread::sleep(Duration::from_millis(backoff));
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}
