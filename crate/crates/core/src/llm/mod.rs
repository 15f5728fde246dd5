//! Prompt assembly and classification backends.

pub mod http;
pub mod mock;
pub mod parse;
pub mod template;

use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Label;
use crate::error::{Error, Result};

pub use http::{HttpBackend, HttpConfig};
pub use mock::{MockBackend, MockRule};
pub use parse::{parse_reply, ClassificationOutcome};
pub use template::{LabelLexicon, PromptTemplate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Classify,
    PredictTarget,
}

/// A rendered prompt.
///
/// `system` and `body` are what a chat backend sends. `query` is the raw
/// query text and `context` the rendered demonstration blocks; the mock
/// backend matches its rules against those two.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub task: Task,
    pub system: String,
    pub body: String,
    pub query: String,
    pub context: String,
}

impl Prompt {
    pub fn assemble(task: Task, system: &str, demo_blocks: &[String], query_block: String, query: &str) -> Prompt {
        let context = demo_blocks.join("\n\n");
        let body = if context.is_empty() {
            query_block
        } else {
            format!("{context}\n\n{query_block}")
        };
        Prompt {
            task,
            system: system.to_string(),
            body,
            query: query.to_string(),
            context,
        }
    }

    pub fn text(&self) -> String {
        if self.system.is_empty() {
            self.body.clone()
        } else {
            format!("{}\n\n{}", self.system, self.body)
        }
    }

    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.text().as_bytes());
        hex::encode(&digest[..8])
    }
}

/// A text-completion service used for both classification and target
/// prediction. Implementations must be safe to call from several threads.
pub trait ClassificationBackend: Send + Sync {
    /// Stable identity string, used to key caches and manifests.
    fn identity(&self) -> String;

    fn complete(&self, prompt: &Prompt) -> Result<String>;
}

impl<B: ClassificationBackend + ?Sized> ClassificationBackend for &B {
    fn identity(&self) -> String {
        (**self).identity()
    }

    fn complete(&self, prompt: &Prompt) -> Result<String> {
        (**self).complete(prompt)
    }
}

impl<B: ClassificationBackend + ?Sized> ClassificationBackend for Box<B> {
    fn identity(&self) -> String {
        (**self).identity()
    }

    fn complete(&self, prompt: &Prompt) -> Result<String> {
        (**self).complete(prompt)
    }
}

pub fn classify(
    backend: &dyn ClassificationBackend,
    prompt: &Prompt,
    lexicon: &LabelLexicon,
) -> Result<ClassificationOutcome> {
    let reply = backend.complete(prompt)?;
    parse_reply(&reply, lexicon)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLogEntry {
    pub id: String,
    pub strategy: String,
    pub prompt_hash: String,
    pub raw_reply: String,
    pub label: Option<Label>,
    pub latency_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Collects every backend call; entries are written ordered by item index.
#[derive(Debug, Default)]
pub struct RunLog {
    entries: Mutex<Vec<(usize, u64, RunLogEntry)>>,
}

impl RunLog {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&self, item: usize, entry: RunLogEntry) {
        let mut guard = self.entries.lock().expect("run log poisoned");
        let seq = guard.len() as u64;
        guard.push((item, seq, entry));
    }

    pub fn entries(&self) -> Vec<RunLogEntry> {
        let mut all = self.entries.lock().expect("run log poisoned").clone();
        all.sort_by_key(|(item, seq, _)| (*item, *seq));
        all.into_iter().map(|(_, _, e)| e).collect()
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        crate::io::write_jsonl(path, &self.entries())
    }
}

/// Classifies and records the call (including failures) in `log`.
pub fn classify_logged(
    backend: &dyn ClassificationBackend,
    prompt: &Prompt,
    lexicon: &LabelLexicon,
    log: Option<(&RunLog, usize, &str, &str)>,
) -> Result<ClassificationOutcome> {
    let started = Instant::now();
    let reply = backend.complete(prompt);
    let latency_ms = started.elapsed().as_millis() as u64;
    let parsed = reply.and_then(|r| parse_reply(&r, lexicon));
    if let Some((log, item, id, strategy)) = log {
        let (raw_reply, label, error) = match &parsed {
            Ok(o) => (o.raw_reply.clone(), Some(o.label), None),
            Err(Error::UnparseableReply { raw_reply, message }) => (raw_reply.clone(), None, Some(message.clone())),
            Err(e) => (String::new(), None, Some(e.to_string())),
        };
        log.push(
            item,
            RunLogEntry {
                id: id.to_string(),
                strategy: strategy.to_string(),
                prompt_hash: prompt.hash(),
                raw_reply,
                label,
                latency_ms,
                error,
            },
        );
    }
    parsed
}

/// Backend selection as it appears in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    Mock {
        rules: PathBuf,
    },
    Http {
        endpoint: String,
        model: String,
        #[serde(default = "default_max_tokens")]
        max_tokens: u32,
        #[serde(default = "default_retries")]
        retries: u32,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
    },
}

fn default_max_tokens() -> u32 {
    256
}
fn default_retries() -> u32 {
    3
}
fn default_timeout() -> u64 {
    60
}

/// Environment variable holding the HTTP backend's API key.
pub const API_KEY_ENV: &str = "ARIIHA_API_KEY";

impl BackendConfig {
    pub fn build(&self, lexicon: &LabelLexicon, seed: u64) -> Result<Box<dyn ClassificationBackend>> {
        match self {
            BackendConfig::Mock { rules } => Ok(Box::new(MockBackend::from_file(rules)?.with_lexicon(lexicon.clone()))),
            BackendConfig::Http {
                endpoint,
                model,
                max_tokens,
                retries,
                timeout_secs,
            } => {
                let cfg = HttpConfig {
                    endpoint: endpoint.clone(),
                    model: model.clone(),
                    max_tokens: *max_tokens,
                    retries: *retries,
                    timeout_secs: *timeout_secs,
                    api_key: std::env::var(API_KEY_ENV).ok(),
                    backoff_base_ms: 500,
                    seed,
                };
                Ok(Box::new(HttpBackend::new(cfg)?))
            }
        }
    }
}
