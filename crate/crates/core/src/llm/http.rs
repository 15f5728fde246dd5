//! OpenAI-compatible chat-completions client (blocking).

use std::sync::Mutex;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::llm::{ClassificationBackend, Prompt};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpConfig {
    /// Base URL such as `http://localhost:8000/v1`, or the full
    /// `/chat/completions` URL.
    pub endpoint: String,
    pub model: String,
    pub max_tokens: u32,
    pub retries: u32,
    pub timeout_secs: u64,
    pub api_key: Option<String>,
    pub backoff_base_ms: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub stream: bool,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Debug, Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

/// Temperature is pinned to 0 for deterministic decoding.
pub fn chat_request(model: &str, max_tokens: u32, prompt: &Prompt) -> ChatRequest {
    let mut messages = Vec::with_capacity(2);
    if !prompt.system.is_empty() {
        messages.push(ChatMessage {
            role: "system".into(),
            content: prompt.system.clone(),
        });
    }
    messages.push(ChatMessage {
        role: "user".into(),
        content: prompt.body.clone(),
    });
    ChatRequest {
        model: model.to_string(),
        messages,
        temperature: 0.0,
        max_tokens,
        stream: false,
    }
}

pub struct HttpBackend {
    config: HttpConfig,
    url: String,
    client: reqwest::blocking::Client,
    jitter: Mutex<ChaCha8Rng>,
}

enum Attempt {
    Retry(String),
    Fatal(String),
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self> {
        let trimmed = config.endpoint.trim_end_matches('/');
        let url = if trimmed.ends_with("/chat/completions") {
            trimmed.to_string()
        } else {
            format!("{trimmed}/chat/completions")
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| Error::Backend(e.to_string()))?;
        let jitter = Mutex::new(ChaCha8Rng::seed_from_u64(config.seed));
        Ok(HttpBackend {
            config,
            url,
            client,
            jitter,
        })
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    fn attempt(&self, body: &ChatRequest) -> std::result::Result<String, Attempt> {
        let mut req = self.client.post(&self.url).json(body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(Attempt::Retry(format!("HTTP {status}")));
        }
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(Attempt::Fatal(format!("HTTP {status}: {text}")));
        }
        let parsed: ChatResponse = resp
            .json()
            .map_err(|e| Attempt::Fatal(format!("malformed response: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| Attempt::Fatal("response has no message content".into()))
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let base = self.config.backoff_base_ms.saturating_mul(1 << attempt.min(16));
        let jitter = if self.config.backoff_base_ms == 0 {
            0
        } else {
            self.jitter
                .lock()
                .expect("jitter rng poisoned")
                .gen_range(0..self.config.backoff_base_ms)
        };
        Duration::from_millis(base + jitter)
    }
}

impl ClassificationBackend for HttpBackend {
    fn identity(&self) -> String {
        format!("http:{}@{}", self.config.model, self.url)
    }

    fn complete(&self, prompt: &Prompt) -> Result<String> {
        let body = chat_request(&self.config.model, self.config.max_tokens, prompt);
        let mut last = String::new();
        for attempt in 0..=self.config.retries {
            if attempt > 0 {
                std::thread::sleep(self.backoff(attempt - 1));
            }
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err(Attempt::Fatal(msg)) => return Err(Error::Backend(msg)),
                Err(Attempt::Retry(msg)) => {
                    log::warn!("request to {} failed (attempt {}): {msg}", self.url, attempt + 1);
                    last = msg;
                }
            }
        }
        Err(Error::Backend(format!(
            "giving up after {} attempts: {last}",
            self.config.retries + 1
        )))
    }
}
