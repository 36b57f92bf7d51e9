//! Completion and embedding backends.
//!
//! Every language-model call in the crate goes through [`CompletionBackend`].
//! [`RemoteBackend`] speaks the OpenAI-compatible chat-completions protocol;
//! [`ScriptedBackend`] replays canned replies keyed by `(operation tag,
//! round)` and never touches the network.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::fnv1a;

pub const DEFAULT_MAX_TOKENS: u32 = 300;
pub const DEFAULT_MODEL: &str = "gpt-4o";
pub const DEFAULT_BASE_URL: &str = "https://api.openai.com";
pub const API_KEY_ENV: &str = "CLARIFYSTL_API_KEY";
pub const BASE_URL_ENV: &str = "CLARIFYSTL_BASE_URL";
pub const MAX_RETRIES: u32 = 3;
pub const DEFAULT_EMBEDDING_DIM: usize = 256;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GatewayError {
    #[error("no scripted reply for tag `{tag}` round {round}")]
    FixtureMiss { tag: String, round: u32 },
    #[error("scripted replies for tag `{tag}` round {round} are exhausted")]
    FixtureExhausted { tag: String, round: u32 },
    #[error("fixture {path}: {message}")]
    Fixture { path: String, message: String },
    #[error("giving up after {retries} retries: {last}")]
    RetriesExhausted { retries: u32, last: String },
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("transport: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    Decode(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("embedding: {0}")]
    Embedding(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
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

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// One chat-completion call. `operation_tag` and `round` identify the call
/// site for scripted replay and transcripts; neither is sent over the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub operation_tag: String,
    pub round: u32,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub model_id: String,
}

impl CompletionRequest {
    pub fn new(operation_tag: impl Into<String>, messages: Vec<Message>) -> Self {
        Self {
            operation_tag: operation_tag.into(),
            round: 0,
            messages,
            temperature: 0.0,
            max_tokens: DEFAULT_MAX_TOKENS,
            model_id: DEFAULT_MODEL.to_string(),
        }
    }

    pub fn with_round(mut self, round: u32) -> Self {
        self.round = round;
        self
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_model(mut self, model_id: impl Into<String>) -> Self {
        self.model_id = model_id.into();
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest(
                "messages must not be empty".into(),
            ));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        Ok(())
    }
}

pub trait CompletionBackend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError>;
}

impl<B: CompletionBackend + ?Sized> CompletionBackend for &B {
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        (**self).complete(request)
    }
}

impl<B: CompletionBackend + ?Sized> CompletionBackend for Box<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        (**self).complete(request)
    }
}

impl<B: CompletionBackend + ?Sized> CompletionBackend for std::sync::Arc<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        (**self).complete(request)
    }
}

// ---------------------------------------------------------------------------
// Scripted replay

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub tag: String,
    pub round: u32,
    pub reply: String,
}

/// Canned replies keyed by `(tag, round)`, consumed in order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ScriptedFixture {
    entries: HashMap<(String, u32), VecDeque<String>>,
}

impl ScriptedFixture {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a reply; repeated keys queue up in insertion order.
    pub fn push(&mut self, tag: impl Into<String>, round: u32, reply: impl Into<String>) {
        self.entries
            .entry((tag.into(), round))
            .or_default()
            .push_back(reply.into());
    }

    pub fn with(mut self, tag: impl Into<String>, round: u32, reply: impl Into<String>) -> Self {
        self.push(tag, round, reply);
        self
    }

    /// Total number of queued replies.
    pub fn len(&self) -> usize {
        self.entries.values().map(VecDeque::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn parse_lines(text: &str) -> Result<Self, String> {
        let mut fixture = Self::new();
        for (number, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: FixtureEntry =
                serde_json::from_str(line).map_err(|e| format!("line {}: {e}", number + 1))?;
            fixture.push(entry.tag, entry.round, entry.reply);
        }
        Ok(fixture)
    }
}

/// Reads a fixture file: one `{"tag", "round", "reply"}` object per line.
pub fn load_fixture(path: impl AsRef<Path>) -> Result<ScriptedFixture, GatewayError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| GatewayError::Fixture {
        path: shown.clone(),
        message: e.to_string(),
    })?;
    ScriptedFixture::parse_lines(&text).map_err(|message| GatewayError::Fixture {
        path: shown,
        message,
    })
}

pub struct ScriptedBackend {
    entries: Mutex<HashMap<(String, u32), VecDeque<String>>>,
    calls: AtomicUsize,
}

impl ScriptedBackend {
    pub fn new(fixture: ScriptedFixture) -> Self {
        Self {
            entries: Mutex::new(fixture.entries),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn empty() -> Self {
        Self::new(ScriptedFixture::new())
    }

    /// Number of `complete` calls made so far, including failed lookups.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn remaining(&self) -> usize {
        self.entries
            .lock()
            .expect("fixture lock")
            .values()
            .map(VecDeque::len)
            .sum()
    }
}

impl CompletionBackend for ScriptedBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        request.validate()?;
        let key = (request.operation_tag.clone(), request.round);
        let mut entries = self.entries.lock().expect("fixture lock");
        match entries.get_mut(&key) {
            None => Err(GatewayError::FixtureMiss {
                tag: key.0,
                round: key.1,
            }),
            Some(queue) => queue.pop_front().ok_or(GatewayError::FixtureExhausted {
                tag: key.0,
                round: key.1,
            }),
        }
    }
}

// ---------------------------------------------------------------------------
// Remote

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("timed out: {0}")]
    Timeout(String),
    #[error("connection failed: {0}")]
    Connect(String),
    #[error("{0}")]
    Other(String),
}

/// Minimal blocking HTTP POST, injectable for tests.
pub trait Transport: Send + Sync {
    fn post(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &[u8],
    ) -> Result<HttpResponse, TransportError>;
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { agent }
    }
}

impl Default for UreqTransport {
    fn default() -> Self {
        Self::new(Duration::from_secs(60))
    }
}

impl Transport for UreqTransport {
    fn post(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &[u8],
    ) -> Result<HttpResponse, TransportError> {
        let mut request = self.agent.post(url);
        for (name, value) in headers {
            request = request.header(name.as_str(), value.as_str());
        }
        match request.send(body) {
            Ok(mut response) => {
                let status = response.status().as_u16();
                let body = response
                    .body_mut()
                    .read_to_string()
                    .map_err(|e| TransportError::Other(e.to_string()))?;
                Ok(HttpResponse { status, body })
            }
            Err(ureq::Error::Timeout(t)) => Err(TransportError::Timeout(t.to_string())),
            Err(
                e
                @ (ureq::Error::Io(_) | ureq::Error::HostNotFound | ureq::Error::ConnectionFailed),
            ) => Err(TransportError::Connect(e.to_string())),
            Err(e) => Err(TransportError::Other(e.to_string())),
        }
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [Message],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    content: Option<String>,
}

/// Request body bytes; identical requests give identical bytes.
pub fn wire_body(request: &CompletionRequest) -> Vec<u8> {
    let wire = WireRequest {
        model: &request.model_id,
        messages: &request.messages,
        temperature: request.temperature,
        max_tokens: request.max_tokens,
    };
    serde_json::to_vec(&wire).expect("request serializes")
}

type Sleeper = Box<dyn Fn(Duration) + Send + Sync>;

pub struct RemoteBackend {
    base_url: String,
    api_key: String,
    transport: Box<dyn Transport>,
    sleeper: Sleeper,
    initial_backoff: Duration,
}

impl fmt::Debug for RemoteBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RemoteBackend")
            .field("base_url", &self.base_url)
            .finish_non_exhaustive()
    }
}

impl RemoteBackend {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: api_key.into(),
            transport: Box::new(UreqTransport::default()),
            sleeper: Box::new(std::thread::sleep),
            initial_backoff: Duration::from_millis(500),
        }
    }

    /// Key from `CLARIFYSTL_API_KEY`, base URL from `CLARIFYSTL_BASE_URL`.
    pub fn from_env() -> Result<Self, GatewayError> {
        let key = std::env::var(API_KEY_ENV)
            .map_err(|_| GatewayError::Config(format!("{API_KEY_ENV} is not set")))?;
        let base = std::env::var(BASE_URL_ENV).unwrap_or_else(|_| DEFAULT_BASE_URL.to_string());
        Ok(Self::new(base, key))
    }

    pub fn with_transport(mut self, transport: impl Transport + 'static) -> Self {
        self.transport = Box::new(transport);
        self
    }

    pub fn with_sleeper(mut self, sleeper: impl Fn(Duration) + Send + Sync + 'static) -> Self {
        self.sleeper = Box::new(sleeper);
        self
    }

    pub fn with_initial_backoff(mut self, delay: Duration) -> Self {
        self.initial_backoff = delay;
        self
    }

    pub fn endpoint(&self) -> String {
        format!("{}/v1/chat/completions", self.base_url)
    }

    fn attempt(&self, url: &str, headers: &[(String, String)], body: &[u8]) -> Attempt {
        match self.transport.post(url, headers, body) {
            Err(TransportError::Other(e)) => Attempt::Fatal(GatewayError::Transport(e)),
            Err(e) => Attempt::Transient(e.to_string()),
            Ok(response) if response.status == 429 || response.status >= 500 => {
                Attempt::Transient(format!("HTTP {}: {}", response.status, response.body))
            }
            Ok(response) if !(200..300).contains(&response.status) => {
                Attempt::Fatal(GatewayError::Status {
                    status: response.status,
                    body: response.body,
                })
            }
            Ok(response) => Attempt::Done(decode_reply(&response.body)),
        }
    }
}

enum Attempt {
    Done(Result<String, GatewayError>),
    Transient(String),
    Fatal(GatewayError),
}

fn decode_reply(body: &str) -> Result<String, GatewayError> {
    let parsed: WireResponse =
        serde_json::from_str(body).map_err(|e| GatewayError::Decode(e.to_string()))?;
    parsed
        .choices
        .into_iter()
        .next()
        .and_then(|c| c.message.content)
        .ok_or_else(|| GatewayError::Decode("no choices in response".into()))
}

impl CompletionBackend for RemoteBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        request.validate()?;
        let url = self.endpoint();
        let headers = vec![
            (
                "Authorization".to_string(),
                format!("Bearer {}", self.api_key),
            ),
            ("Content-Type".to_string(), "application/json".to_string()),
        ];
        let body = wire_body(request);
        let mut delay = self.initial_backoff;
        let mut retries = 0;
        loop {
            match self.attempt(&url, &headers, &body) {
                Attempt::Done(result) => return result,
                Attempt::Fatal(e) => return Err(e),
                Attempt::Transient(last) if retries == MAX_RETRIES => {
                    return Err(GatewayError::RetriesExhausted { retries, last })
                }
                Attempt::Transient(_) => {
                    (self.sleeper)(delay);
                    delay *= 2;
                    retries += 1;
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Embeddings

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, GatewayError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(GatewayError::Embedding("non-finite embedding entry".into()));
        }
        Ok(Self { values })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            values: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

pub trait EmbeddingProvider: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed_one(&self, text: &str) -> Result<EmbeddingVector, GatewayError>;
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for &P {
    fn dimension(&self) -> usize {
        (**self).dimension()
    }

    fn embed_one(&self, text: &str) -> Result<EmbeddingVector, GatewayError> {
        (**self).embed_one(text)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    pub vectors: Vec<EmbeddingVector>,
    /// Indices of inputs that produced the zero vector.
    pub zero_vectors: Vec<usize>,
}

pub fn embed(
    texts: &[&str],
    provider: &dyn EmbeddingProvider,
) -> Result<EmbeddingBatch, GatewayError> {
    if texts.is_empty() {
        return Err(GatewayError::Embedding("no texts to embed".into()));
    }
    let mut vectors = Vec::with_capacity(texts.len());
    let mut zero_vectors = Vec::new();
    for (index, text) in texts.iter().enumerate() {
        let vector = provider.embed_one(text)?;
        if vector.dim() != provider.dimension() {
            return Err(GatewayError::Embedding(format!(
                "provider returned dimension {} instead of {}",
                vector.dim(),
                provider.dimension()
            )));
        }
        if vector.values.iter().all(|v| *v == 0.0) {
            zero_vectors.push(index);
        }
        vectors.push(vector);
    }
    Ok(EmbeddingBatch {
        vectors,
        zero_vectors,
    })
}

/// Lower-cased alphanumeric word tokens.
pub fn word_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric() && c != '.' && c != '_')
        .map(|w| w.trim_matches('.').to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

/// Signed feature hashing of word unigrams and bigrams, L2-normalised.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashEmbeddingProvider {
    dim: usize,
}

impl HashEmbeddingProvider {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }

    fn add(&self, values: &mut [f64], feature: &str) {
        let h = fnv1a(feature.as_bytes());
        let bucket = (h % self.dim as u64) as usize;
        values[bucket] += if h >> 63 == 0 { 1.0 } else { -1.0 };
    }
}

impl Default for HashEmbeddingProvider {
    fn default() -> Self {
        Self::new(DEFAULT_EMBEDDING_DIM)
    }
}

impl EmbeddingProvider for HashEmbeddingProvider {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed_one(&self, text: &str) -> Result<EmbeddingVector, GatewayError> {
        let tokens = word_tokens(text);
        let mut values = vec![0.0; self.dim];
        for token in &tokens {
            self.add(&mut values, token);
        }
        for pair in tokens.windows(2) {
            self.add(&mut values, &format!("{} {}", pair[0], pair[1]));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            values.iter_mut().for_each(|v| *v /= norm);
        }
        Ok(EmbeddingVector { values })
    }
}

/// Fixed text-to-vector lookup; unknown texts are an error.
#[derive(Debug, Clone, Default)]
pub struct TableEmbeddingProvider {
    dim: usize,
    table: HashMap<String, EmbeddingVector>,
}

impl TableEmbeddingProvider {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            table: HashMap::new(),
        }
    }

    pub fn insert(
        &mut self,
        text: impl Into<String>,
        vector: Vec<f64>,
    ) -> Result<(), GatewayError> {
        if vector.len() != self.dim {
            return Err(GatewayError::Embedding(format!(
                "expected dimension {}, got {}",
                self.dim,
                vector.len()
            )));
        }
        self.table
            .insert(text.into(), EmbeddingVector::new(vector)?);
        Ok(())
    }
}

impl EmbeddingProvider for TableEmbeddingProvider {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed_one(&self, text: &str) -> Result<EmbeddingVector, GatewayError> {
        self.table
            .get(text)
            .cloned()
            .ok_or_else(|| GatewayError::Embedding(format!("no embedding for `{text}`")))
    }
}
