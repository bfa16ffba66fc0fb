//! Chat-style text completion over the network, with cassette recording and
//! replay so remote sessions can be re-run offline.
//!
//! The HTTP backend speaks the common chat-completions shape: it POSTs
//! `{"model", "messages": [{"role", "content"}]}` and reads
//! `choices[0].message.content` from the reply.

use std::collections::VecDeque;
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ENDPOINT_VAR: &str = "DUALKB_CHAT_ENDPOINT";
pub const TOKEN_VAR: &str = "DUALKB_CHAT_TOKEN";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
pub const DEFAULT_RETRIES: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ChatError {
    #[error("environment variable {0} is not set")]
    MissingEnv(&'static str),
    #[error("transport: {0}")]
    Transport(String),
    #[error("endpoint returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("unexpected response body: {0}")]
    Malformed(String),
    #[error("cassette: {0}")]
    Cassette(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ChatError {
    fn is_retryable(&self) -> bool {
        match self {
            Self::Transport(_) => true,
            Self::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, ChatError>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for std::sync::Arc<B> {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, ChatError> {
        (**self).complete(messages)
    }
}

#[derive(Debug, Clone)]
pub struct HttpChatConfig {
    pub endpoint: String,
    pub token: Option<String>,
    pub model: String,
    pub timeout: Duration,
    pub retries: u32,
    pub backoff: Duration,
}

impl HttpChatConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            token: None,
            model: "default".into(),
            timeout: DEFAULT_TIMEOUT,
            retries: DEFAULT_RETRIES,
            backoff: Duration::from_millis(500),
        }
    }

    /// Endpoint from `DUALKB_CHAT_ENDPOINT`, bearer token from `DUALKB_CHAT_TOKEN` if set.
    pub fn from_env() -> Result<Self, ChatError> {
        let endpoint = std::env::var(ENDPOINT_VAR).map_err(|_| ChatError::MissingEnv(ENDPOINT_VAR))?;
        let mut cfg = Self::new(endpoint);
        cfg.token = std::env::var(TOKEN_VAR).ok();
        Ok(cfg)
    }
}

pub struct HttpChat {
    cfg: HttpChatConfig,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct CompletionReply {
    choices: Vec<CompletionChoice>,
}

#[derive(Deserialize)]
struct CompletionChoice {
    message: ChatMessage,
}

impl HttpChat {
    pub fn new(cfg: HttpChatConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(cfg.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { cfg, agent }
    }

    fn attempt(&self, messages: &[ChatMessage]) -> Result<String, ChatError> {
        let body = serde_json::json!({ "model": self.cfg.model, "messages": messages });
        let mut req = self.agent.post(&self.cfg.endpoint);
        if let Some(token) = &self.cfg.token {
            req = req.header("Authorization", format!("Bearer {token}"));
        }
        let mut resp = req
            .send_json(&body)
            .map_err(|e| ChatError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ChatError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(ChatError::Status { status, body: text });
        }
        let reply: CompletionReply =
            serde_json::from_str(&text).map_err(|e| ChatError::Malformed(format!("{e}: {text}")))?;
        reply
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| ChatError::Malformed("no choices".into()))
    }
}

impl ChatBackend for HttpChat {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, ChatError> {
        let mut delay = self.cfg.backoff;
        let mut attempt = 0;
        loop {
            match self.attempt(messages) {
                Err(e) if e.is_retryable() && attempt < self.cfg.retries => {
                    log::warn!("chat request failed ({e}); retrying in {delay:?}");
                    std::thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

/// One recorded exchange; a cassette file holds one per line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub request: Vec<ChatMessage>,
    pub response: String,
}

pub fn read_cassette(path: impl AsRef<Path>) -> Result<Vec<CassetteEntry>, ChatError> {
    let f = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| ChatError::Cassette(format!("line {}: {e}", i + 1)))?,
        );
    }
    Ok(out)
}

/// Passes calls through and appends each exchange to a cassette file.
pub struct Recorder<B> {
    inner: B,
    path: PathBuf,
    lock: Mutex<()>,
}

impl<B: ChatBackend> Recorder<B> {
    pub fn new(inner: B, path: impl Into<PathBuf>) -> Self {
        Self {
            inner,
            path: path.into(),
            lock: Mutex::new(()),
        }
    }
}

impl<B: ChatBackend> ChatBackend for Recorder<B> {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, ChatError> {
        let response = self.inner.complete(messages)?;
        let entry = CassetteEntry {
            request: messages.to_vec(),
            response: response.clone(),
        };
        let _guard = self.lock.lock().unwrap_or_else(|e| e.into_inner());
        let mut f = OpenOptions::new().create(true).append(true).open(&self.path)?;
        writeln!(f, "{}", serde_json::to_string(&entry).map_err(std::io::Error::from)?)?;
        Ok(response)
    }
}

/// Answers from a cassette. Each entry is used once; a request is matched to
/// the earliest unused entry with an identical message list.
pub struct Replay {
    entries: Mutex<Vec<Option<CassetteEntry>>>,
}

impl Replay {
    pub fn new(entries: Vec<CassetteEntry>) -> Self {
        Self {
            entries: Mutex::new(entries.into_iter().map(Some).collect()),
        }
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self, ChatError> {
        Ok(Self::new(read_cassette(path)?))
    }

    pub fn remaining(&self) -> usize {
        self.entries
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .iter()
            .flatten()
            .count()
    }
}

impl ChatBackend for Replay {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, ChatError> {
        let mut entries = self.entries.lock().unwrap_or_else(|e| e.into_inner());
        let slot = entries
            .iter_mut()
            .find(|e| e.as_ref().is_some_and(|e| e.request == messages))
            .ok_or_else(|| ChatError::Cassette("no recorded response for this request".into()))?;
        Ok(slot.take().unwrap().response)
    }
}

/// Returns canned responses in order, ignoring the request.
pub struct Canned {
    responses: Mutex<VecDeque<String>>,
}

impl Canned {
    pub fn new<S: Into<String>>(responses: impl IntoIterator<Item = S>) -> Self {
        Self {
            responses: Mutex::new(responses.into_iter().map(Into::into).collect()),
        }
    }
}

impl ChatBackend for Canned {
    fn complete(&self, _messages: &[ChatMessage]) -> Result<String, ChatError> {
        self.responses
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .pop_front()
            .ok_or_else(|| ChatError::Transport("no canned responses left".into()))
    }
}
