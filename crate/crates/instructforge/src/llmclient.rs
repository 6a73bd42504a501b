//! Provider-agnostic chat-completion client with structured-output
//! constraints, bounded retries and a record/replay cache.
//!
//! The cache is content-addressed: every request digests to a key, and one
//! JSON file per entry stores the request, the payload and the usage. Replay
//! mode serves responses from the cache only and never touches the network,
//! which is how the whole pipeline and its tests run offline.

use std::path::PathBuf;
use std::sync::Mutex;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Environment variable holding the provider API key.
pub const API_KEY_ENV: &str = "INSTRUCTFORGE_API_KEY";

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("no cached response for digest {0} (replay mode)")]
    CacheMiss(String),
    #[error("provider error after {attempts} attempts: {message}")]
    ProviderError { attempts: u32, message: String },
    #[error("constrained output failed validation: {0}")]
    SchemaViolation(String),
    #[error("cache i/o error: {0}")]
    CacheIo(#[from] std::io::Error),
    #[error("cache entry is not valid JSON: {0}")]
    CacheFormat(#[from] serde_json::Error),
    #[error("no API key: set {API_KEY_ENV} or configure api_key")]
    MissingApiKey,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: ChatRole::System,
            content: content.into(),
        }
    }
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: ChatRole::User,
            content: content.into(),
        }
    }
    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: ChatRole::Assistant,
            content: content.into(),
        }
    }
}

/// A JSON schema the provider is asked to constrain its output to. The `id`
/// participates in the request digest; the schema body is sent to the
/// provider and used for local validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredSchema {
    pub id: String,
    pub json_schema: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<StructuredSchema>,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl ChatRequest {
    /// Stable content digest: a pure function of (model, messages, schema id,
    /// temperature, max_output_tokens).
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.model.as_bytes());
        hasher.update([0]);
        for msg in &self.messages {
            hasher.update(match msg.role {
                ChatRole::System => b"s",
                ChatRole::User => b"u",
                ChatRole::Assistant => b"a",
            });
            hasher.update((msg.content.len() as u64).to_le_bytes());
            hasher.update(msg.content.as_bytes());
        }
        hasher.update([0]);
        if let Some(schema) = &self.schema {
            hasher.update(schema.id.as_bytes());
        }
        hasher.update([0]);
        hasher.update(self.temperature.to_le_bytes());
        hasher.update(self.max_output_tokens.to_le_bytes());
        hex::encode(hasher.finalize())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageRecord {
    pub digest: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub timestamp: u64,
}

/// Append-only token accounting for a run; totals feed the carbon module.
#[derive(Debug, Default)]
pub struct UsageLedger {
    records: Mutex<Vec<UsageRecord>>,
}

impl UsageLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, usage: UsageRecord) {
        self.records.lock().expect("ledger poisoned").push(usage);
    }

    pub fn total_completion_tokens(&self) -> u64 {
        self.records
            .lock()
            .expect("ledger poisoned")
            .iter()
            .map(|r| r.completion_tokens)
            .sum()
    }

    pub fn total_tokens(&self) -> u64 {
        self.records
            .lock()
            .expect("ledger poisoned")
            .iter()
            .map(|r| r.prompt_tokens + r.completion_tokens)
            .sum()
    }

    pub fn len(&self) -> usize {
        self.records.lock().expect("ledger poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn snapshot(&self) -> Vec<UsageRecord> {
        self.records.lock().expect("ledger poisoned").clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheMode {
    /// Perform live calls and persist payload+usage keyed by digest.
    Record,
    /// Serve from the cache only; a miss is an error, the network is never
    /// touched.
    Replay,
    /// Live calls without persisting.
    Live,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheEntry {
    pub request: ChatRequest,
    pub payload: Value,
    pub usage: UsageRecord,
}

/// Content-addressed response cache: `<root>/<digest[..2]>/<digest>.json`.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    root: PathBuf,
}

impl ResponseCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        ResponseCache { root: root.into() }
    }

    pub fn entry_path(&self, digest: &str) -> PathBuf {
        self.root.join(&digest[..2]).join(format!("{digest}.json"))
    }

    pub fn load(&self, digest: &str) -> Result<Option<CacheEntry>, ClientError> {
        let path = self.entry_path(digest);
        if !path.exists() {
            return Ok(None);
        }
        let raw = std::fs::read_to_string(path)?;
        Ok(Some(serde_json::from_str(&raw)?))
    }

    /// Single-writer-per-key: writes go to a temporary file first and are
    /// moved into place atomically.
    pub fn store(&self, entry: &CacheEntry) -> Result<(), ClientError> {
        let path = self.entry_path(&entry.usage.digest);
        let dir = path.parent().expect("cache entry path has a parent");
        std::fs::create_dir_all(dir)?;
        let tmp = dir.join(format!(".{}.tmp", entry.usage.digest));
        std::fs::write(&tmp, serde_json::to_string_pretty(entry)?)?;
        std::fs::rename(&tmp, &path)?;
        Ok(())
    }
}

/// Chat-completion client. Endpoint and API key come from configuration; the
/// key falls back to the `INSTRUCTFORGE_API_KEY` environment variable.
pub struct ChatClient {
    pub endpoint: String,
    pub api_key: Option<String>,
    pub mode: CacheMode,
    pub cache: ResponseCache,
    pub max_retries: u32,
    pub backoff: Duration,
    pub ledger: UsageLedger,
}

impl ChatClient {
    pub fn new(endpoint: impl Into<String>, cache_dir: impl Into<PathBuf>, mode: CacheMode) -> Self {
        ChatClient {
            endpoint: endpoint.into(),
            api_key: None,
            mode,
            cache: ResponseCache::new(cache_dir),
            max_retries: 3,
            backoff: Duration::from_millis(500),
            ledger: UsageLedger::new(),
        }
    }

    /// A replay-only client for offline runs and tests.
    pub fn replay(cache_dir: impl Into<PathBuf>) -> Self {
        Self::new("replay://disabled", cache_dir, CacheMode::Replay)
    }

    /// Complete a chat request according to the cache mode. Replay returns
    /// the cached payload byte-identically; record performs a live call and
    /// persists it. Usage is accumulated into the run ledger either way.
    pub fn complete(&self, req: &ChatRequest) -> Result<(Value, UsageRecord), ClientError> {
        let digest = req.digest();
        match self.mode {
            CacheMode::Replay => {
                let entry = self
                    .cache
                    .load(&digest)?
                    .ok_or_else(|| ClientError::CacheMiss(digest.clone()))?;
                self.validate_payload(req, &entry.payload)?;
                self.ledger.record(entry.usage.clone());
                Ok((entry.payload, entry.usage))
            }
            CacheMode::Record => {
                if let Some(entry) = self.cache.load(&digest)? {
                    self.ledger.record(entry.usage.clone());
                    return Ok((entry.payload, entry.usage));
                }
                let (payload, usage) = self.call_live(req, &digest)?;
                self.cache.store(&CacheEntry {
                    request: req.clone(),
                    payload: payload.clone(),
                    usage: usage.clone(),
                })?;
                self.ledger.record(usage.clone());
                Ok((payload, usage))
            }
            CacheMode::Live => {
                let (payload, usage) = self.call_live(req, &digest)?;
                self.ledger.record(usage.clone());
                Ok((payload, usage))
            }
        }
    }

    fn validate_payload(&self, req: &ChatRequest, payload: &Value) -> Result<(), ClientError> {
        if req.schema.is_some() && !payload.is_object() {
            return Err(ClientError::SchemaViolation(
                "structured request requires a JSON object payload".into(),
            ));
        }
        Ok(())
    }

    fn call_live(&self, req: &ChatRequest, digest: &str) -> Result<(Value, UsageRecord), ClientError> {
        let key = self
            .api_key
            .clone()
            .or_else(|| std::env::var(API_KEY_ENV).ok())
            .ok_or(ClientError::MissingApiKey)?;

        let mut body = serde_json::json!({
            "model": req.model,
            "messages": req.messages.iter().map(|m| serde_json::json!({
                "role": match m.role {
                    ChatRole::System => "system",
                    ChatRole::User => "user",
                    ChatRole::Assistant => "assistant",
                },
                "content": m.content,
            })).collect::<Vec<_>>(),
            "temperature": req.temperature,
            "max_tokens": req.max_output_tokens,
        });
        if let Some(schema) = &req.schema {
            body["response_format"] = serde_json::json!({
                "type": "json_schema",
                "json_schema": {"name": schema.id, "schema": schema.json_schema, "strict": true},
            });
        }

        let client = reqwest::blocking::Client::new();
        let mut last_error = String::new();
        for attempt in 0..=self.max_retries {
            if attempt > 0 {
                std::thread::sleep(self.backoff * 2u32.pow(attempt - 1));
            }
            let response = client
                .post(&self.endpoint)
                .bearer_auth(&key)
                .json(&body)
                .send();
            match response {
                Ok(resp) if resp.status().is_success() => {
                    let value: Value = resp.json().map_err(|e| ClientError::ProviderError {
                        attempts: attempt + 1,
                        message: format!("invalid provider JSON: {e}"),
                    })?;
                    return self.finish_live(req, digest, &value);
                }
                Ok(resp) => {
                    let status = resp.status();
                    last_error = format!("http {status}");
                    // retry-after guidance from the provider, when present
                    if let Some(wait) = resp
                        .headers()
                        .get("retry-after")
                        .and_then(|v| v.to_str().ok())
                        .and_then(|v| v.parse::<u64>().ok())
                    {
                        std::thread::sleep(Duration::from_secs(wait));
                    }
                    if !(status.is_server_error() || status.as_u16() == 429) {
                        break;
                    }
                }
                Err(e) => last_error = e.to_string(),
            }
        }
        Err(ClientError::ProviderError {
            attempts: self.max_retries + 1,
            message: last_error,
        })
    }

    fn finish_live(
        &self,
        req: &ChatRequest,
        digest: &str,
        value: &Value,
    ) -> Result<(Value, UsageRecord), ClientError> {
        let content = value["choices"][0]["message"]["content"]
            .as_str()
            .unwrap_or_default()
            .to_string();
        let payload = if req.schema.is_some() {
            serde_json::from_str::<Value>(&content)
                .map_err(|e| ClientError::SchemaViolation(format!("payload is not JSON: {e}")))?
        } else {
            Value::String(content)
        };
        self.validate_payload(req, &payload)?;
        let usage = UsageRecord {
            digest: digest.to_string(),
            prompt_tokens: value["usage"]["prompt_tokens"].as_u64().unwrap_or(0),
            completion_tokens: value["usage"]["completion_tokens"].as_u64().unwrap_or(0),
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .unwrap_or_default()
                .as_secs(),
        };
        Ok((payload, usage))
    }

    /// Complete many requests with a bounded worker pool. Results come back
    /// in input order; individual failures are returned per request.
    pub fn complete_many(
        &self,
        reqs: &[ChatRequest],
        jobs: usize,
    ) -> Vec<Result<(Value, UsageRecord), ClientError>> {
        let jobs = jobs.max(1);
        let next = std::sync::atomic::AtomicUsize::new(0);
        let results: Vec<Mutex<Option<Result<(Value, UsageRecord), ClientError>>>> =
            reqs.iter().map(|_| Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for _ in 0..jobs.min(reqs.len().max(1)) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                    if i >= reqs.len() {
                        break;
                    }
                    let result = self.complete(&reqs[i]);
                    *results[i].lock().expect("result slot poisoned") = Some(result);
                });
            }
        });
        results
            .into_iter()
            .map(|slot| {
                slot.into_inner()
                    .expect("result slot poisoned")
                    .expect("worker filled every slot")
            })
            .collect()
    }
}

/// Build a cache fixture for a request without going through a live call.
/// Used to seal replay caches for offline runs.
pub fn seal_cache_entry(
    cache: &ResponseCache,
    req: &ChatRequest,
    payload: Value,
    prompt_tokens: u64,
    completion_tokens: u64,
) -> Result<UsageRecord, ClientError> {
    let usage = UsageRecord {
        digest: req.digest(),
        prompt_tokens,
        completion_tokens,
        timestamp: 0,
    };
    cache.store(&CacheEntry {
        request: req.clone(),
        payload,
        usage: usage.clone(),
    })?;
    Ok(usage)
}

/// Convenience constructor for schema-less text requests.
pub fn text_request(model: &str, messages: Vec<ChatMessage>, temperature: f64) -> ChatRequest {
    ChatRequest {
        model: model.to_string(),
        messages,
        schema: None,
        temperature,
        max_output_tokens: 1024,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(content: &str) -> ChatRequest {
        ChatRequest {
            model: "test-model".into(),
            messages: vec![ChatMessage::system("sys"), ChatMessage::user(content)],
            schema: None,
            temperature: 1.0,
            max_output_tokens: 64,
        }
    }

    #[test]
    fn digest_changes_with_any_message_content() {
        let a = request("bonjour").digest();
        let b = request("bonjour!").digest();
        assert_ne!(a, b);
        assert_eq!(a, request("bonjour").digest());
    }

    #[test]
    fn digest_depends_on_schema_id_and_sampling() {
        let base = request("x");
        let mut with_schema = base.clone();
        with_schema.schema = Some(StructuredSchema {
            id: "s1".into(),
            json_schema: serde_json::json!({"type": "object"}),
        });
        assert_ne!(base.digest(), with_schema.digest());
        let mut hot = base.clone();
        hot.temperature = 0.0;
        assert_ne!(base.digest(), hot.digest());
    }

    #[test]
    fn replay_round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let client = ChatClient::replay(dir.path());
        let req = request("question");
        seal_cache_entry(
            &client.cache,
            &req,
            Value::String("réponse".into()),
            12,
            5,
        )
        .unwrap();
        let (a, _) = client.complete(&req).unwrap();
        let (b, _) = client.complete(&req).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, Value::String("réponse".into()));
    }

    #[test]
    fn replay_reports_cache_miss() {
        let dir = tempfile::tempdir().unwrap();
        let client = ChatClient::replay(dir.path());
        assert!(matches!(
            client.complete(&request("jamais vue")),
            Err(ClientError::CacheMiss(_))
        ));
    }

    #[test]
    fn ledger_accumulates_replayed_usage() {
        let dir = tempfile::tempdir().unwrap();
        let client = ChatClient::replay(dir.path());
        for (i, toks) in [3u64, 7, 11].iter().enumerate() {
            let req = request(&format!("q{i}"));
            seal_cache_entry(&client.cache, &req, Value::String("r".into()), 1, *toks).unwrap();
            client.complete(&req).unwrap();
        }
        assert_eq!(client.ledger.total_completion_tokens(), 21);
        assert_eq!(client.ledger.len(), 3);
    }

    #[test]
    fn bounded_parallel_replay() {
        let dir = tempfile::tempdir().unwrap();
        let client = ChatClient::replay(dir.path());
        let reqs: Vec<ChatRequest> = (0..20).map(|i| request(&format!("q{i}"))).collect();
        for req in &reqs {
            seal_cache_entry(&client.cache, req, Value::String("ok".into()), 1, 1).unwrap();
        }
        let results = client.complete_many(&reqs, 4);
        assert_eq!(results.len(), 20);
        assert!(results.iter().all(Result::is_ok));
    }
}
