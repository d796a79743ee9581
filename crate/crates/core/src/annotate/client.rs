//! Chat-completion transport, bounded retry and the on-disk response cache.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub model_name: String,
    pub prompt_text: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    /// SHA-256 of model name, prompt and temperature.
    pub request_key: String,
}

impl LlmRequest {
    pub fn new(model_name: impl Into<String>, prompt_text: impl Into<String>, temperature: f64, max_output_tokens: u32) -> Self {
        let model_name = model_name.into();
        let prompt_text = prompt_text.into();
        let request_key = request_key(&model_name, &prompt_text, temperature);
        LlmRequest { model_name, prompt_text, temperature, max_output_tokens, request_key }
    }
}

pub fn request_key(model_name: &str, prompt_text: &str, temperature: f64) -> String {
    let mut h = Sha256::new();
    h.update(model_name.as_bytes());
    h.update([0]);
    h.update(prompt_text.as_bytes());
    h.update([0]);
    h.update(temperature.to_bits().to_le_bytes());
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmResponse {
    pub raw_text: String,
    /// Wall time of the network call that produced the text, also on cache hits.
    pub latency_ms: u64,
    pub from_cache: bool,
    pub attempt: u32,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum TransportError {
    #[error("HTTP {code}: {body}")]
    Status { code: u16, body: String },
    #[error("network error: {0}")]
    Network(String),
    #[error("bad response: {0}")]
    Decode(String),
}

impl TransportError {
    /// 429, 5xx and connection failures are worth another attempt.
    pub fn is_retryable(&self) -> bool {
        match self {
            TransportError::Status { code, .. } => *code == 429 || *code >= 500,
            TransportError::Network(_) => true,
            TransportError::Decode(_) => false,
        }
    }
}

/// Anything that can turn a request into completion text.
pub trait ChatTransport: Send + Sync {
    fn complete(&self, request: &LlmRequest) -> Result<String, TransportError>;
}

/// HTTP endpoint description. Request and response layout are given as JSON
/// pointers into a body template so non-OpenAI shapes can be targeted.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpEndpoint {
    pub url: String,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub body_template: Value,
    pub model_pointer: String,
    pub prompt_pointer: String,
    pub temperature_pointer: String,
    pub max_tokens_pointer: String,
    pub response_pointer: String,
    pub timeout_secs: u64,
}

impl Default for HttpEndpoint {
    fn default() -> Self {
        HttpEndpoint {
            url: "https://api.openai.com/v1/chat/completions".into(),
            api_key_env: "ANNOTATOR_API_KEY".into(),
            body_template: serde_json::json!({
                "model": "",
                "messages": [{"role": "user", "content": ""}],
                "temperature": 0.0,
                "max_tokens": 0
            }),
            model_pointer: "/model".into(),
            prompt_pointer: "/messages/0/content".into(),
            temperature_pointer: "/temperature".into(),
            max_tokens_pointer: "/max_tokens".into(),
            response_pointer: "/choices/0/message/content".into(),
            timeout_secs: 120,
        }
    }
}

impl HttpEndpoint {
    /// Fills the body template for `request`.
    pub fn build_body(&self, request: &LlmRequest) -> Result<Value, TransportError> {
        let mut body = self.body_template.clone();
        let fields = [
            (&self.model_pointer, Value::from(request.model_name.clone())),
            (&self.prompt_pointer, Value::from(request.prompt_text.clone())),
            (&self.temperature_pointer, Value::from(request.temperature)),
            (&self.max_tokens_pointer, Value::from(request.max_output_tokens)),
        ];
        for (ptr, value) in fields {
            if ptr.is_empty() {
                continue;
            }
            let slot = body
                .pointer_mut(ptr)
                .ok_or_else(|| TransportError::Decode(format!("body template has no field at {ptr}")))?;
            *slot = value;
        }
        Ok(body)
    }

    pub fn extract_text(&self, response_body: &str) -> Result<String, TransportError> {
        let v: Value = serde_json::from_str(response_body).map_err(|e| TransportError::Decode(e.to_string()))?;
        v.pointer(&self.response_pointer)
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| TransportError::Decode(format!("no string at {}", self.response_pointer)))
    }
}

pub struct HttpTransport {
    endpoint: HttpEndpoint,
    agent: ureq::Agent,
    api_key: Option<String>,
}

impl HttpTransport {
    pub fn new(endpoint: HttpEndpoint) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(endpoint.timeout_secs)))
            .build()
            .into();
        let api_key = std::env::var(&endpoint.api_key_env).ok().filter(|k| !k.is_empty());
        HttpTransport { endpoint, agent, api_key }
    }
}

impl ChatTransport for HttpTransport {
    fn complete(&self, request: &LlmRequest) -> Result<String, TransportError> {
        let body = self.endpoint.build_body(request)?;
        let mut req = self.agent.post(&self.endpoint.url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send(body.to_string()).map_err(|e| TransportError::Network(e.to_string()))?;
        let code = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        if !(200..300).contains(&code) {
            return Err(TransportError::Status { code, body: text });
        }
        self.endpoint.extract_text(&text)
    }
}

/// Exponential backoff: the n-th retry waits `base_delay_ms * 2^(n-1)`, capped.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_attempts: 5, base_delay_ms: 500, max_delay_ms: 30_000 }
    }
}

impl RetryPolicy {
    pub fn delay_before(&self, attempt: u32) -> Duration {
        let exp = attempt.saturating_sub(2).min(30);
        let ms = self.base_delay_ms.saturating_mul(1u64 << exp).min(self.max_delay_ms);
        Duration::from_millis(ms)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CacheMode {
    #[default]
    ReadWrite,
    /// Never touch the network; a miss is an error.
    CacheOnly,
    Disabled,
}

#[derive(Debug, Error)]
pub enum SendError {
    #[error("cache miss for request {0}")]
    CacheMiss(String),
    #[error("giving up after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: TransportError },
    #[error("non-retryable failure: {0}")]
    Fatal(TransportError),
    #[error("cache I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("cache entry {path}: {source}")]
    Corrupt { path: PathBuf, source: serde_json::Error },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheEntry {
    pub request: LlmRequest,
    pub response: LlmResponse,
    pub timestamp: u64,
}

/// One JSON file per request key at `<dir>/<k0k1>/<k2k3>/<key>.json`.
#[derive(Debug)]
pub struct ResponseCache {
    dir: PathBuf,
    mode: CacheMode,
    write_lock: Mutex<()>,
}

impl ResponseCache {
    pub fn new(dir: impl Into<PathBuf>, mode: CacheMode) -> Self {
        ResponseCache { dir: dir.into(), mode, write_lock: Mutex::new(()) }
    }

    pub fn disabled() -> Self {
        ResponseCache::new(PathBuf::new(), CacheMode::Disabled)
    }

    pub fn mode(&self) -> CacheMode {
        self.mode
    }

    pub fn path_for(&self, key: &str) -> PathBuf {
        let (a, b) = (&key[..2.min(key.len())], &key[2.min(key.len())..4.min(key.len())]);
        self.dir.join(a).join(b).join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Result<Option<CacheEntry>, SendError> {
        if self.mode == CacheMode::Disabled {
            return Ok(None);
        }
        let path = self.path_for(key);
        match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map(Some)
                .map_err(|source| SendError::Corrupt { path, source }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    pub fn put(&self, request: &LlmRequest, response: &LlmResponse) -> Result<(), SendError> {
        if self.mode != CacheMode::ReadWrite {
            return Ok(());
        }
        let entry = CacheEntry {
            request: request.clone(),
            response: response.clone(),
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        };
        let path = self.path_for(&request.request_key);
        let parent = path.parent().unwrap_or(Path::new("."));
        let _guard = self.write_lock.lock().unwrap_or_else(|e| e.into_inner());
        fs::create_dir_all(parent)?;
        let mut tmp = tempfile::NamedTempFile::new_in(parent)?;
        serde_json::to_writer_pretty(&mut tmp, &entry).map_err(std::io::Error::from)?;
        tmp.write_all(b"\n")?;
        tmp.persist(&path).map_err(|e| e.error)?;
        Ok(())
    }
}

/// Returns the cached response for `request` or performs the call with retry
/// and stores the result.
pub fn send_with_cache(
    request: &LlmRequest,
    cache: &ResponseCache,
    transport: &dyn ChatTransport,
    retry: &RetryPolicy,
) -> Result<LlmResponse, SendError> {
    if let Some(entry) = cache.get(&request.request_key)? {
        return Ok(LlmResponse { from_cache: true, ..entry.response });
    }
    if cache.mode() == CacheMode::CacheOnly {
        return Err(SendError::CacheMiss(request.request_key.clone()));
    }
    let max = retry.max_attempts.max(1);
    let mut attempt = 1;
    loop {
        let started = Instant::now();
        match transport.complete(request) {
            Ok(raw_text) => {
                let response = LlmResponse {
                    raw_text,
                    latency_ms: started.elapsed().as_millis() as u64,
                    from_cache: false,
                    attempt,
                };
                cache.put(request, &response)?;
                return Ok(response);
            }
            Err(e) if !e.is_retryable() => return Err(SendError::Fatal(e)),
            Err(e) if attempt >= max => return Err(SendError::Exhausted { attempts: attempt, last: e }),
            Err(e) => {
                attempt += 1;
                log::warn!("request {} failed ({e}); retry {attempt}/{max}", &request.request_key[..8]);
                std::thread::sleep(retry.delay_before(attempt));
            }
        }
    }
}
