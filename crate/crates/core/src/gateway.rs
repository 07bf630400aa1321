//! Chat-completion and embedding client with prompt templates and a
//! content-addressed response cache.
//!
//! Every exchange with the external model goes through [`Gateway`], which
//! consults the cache before any transport call and persists every reply.
//! A warm cache directory is therefore enough to replay an experiment with
//! no network access.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::events::EventRecord;
use crate::traits::{Trait, TraitProfile};

pub const API_KEY_ENV: &str = "SPREADLAB_API_KEY";

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("gateway unavailable: {0}")]
    Unavailable(String),
    #[error("cache miss in offline mode (key {0})")]
    CacheMissOffline(String),
    #[error("reply has no leading yes/no: {0:?}")]
    UnparseableReply(String),
    #[error("missing template {0:?}")]
    MissingTemplate(String),
    #[error("unresolved placeholder {{{0}}}")]
    UnresolvedPlaceholder(String),
    #[error("embedding input is empty")]
    EmptyInput,
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("cache io: {0}")]
    Io(#[from] std::io::Error),
    #[error("cache entry: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportError {
    /// Worth retrying: timeouts, connection resets, 429 and 5xx.
    Transient(String),
    Fatal(String),
}

/// Sends one JSON POST and returns the parsed JSON reply.
pub trait Transport: Send + Sync {
    fn post_json(&self, url: &str, api_key: Option<&str>, body: &Value) -> Result<Value, TransportError>;
}

/// Blocking HTTP transport.
pub struct HttpTransport {
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build();
        Self {
            agent: ureq::Agent::new_with_config(config),
        }
    }
}

impl Transport for HttpTransport {
    fn post_json(&self, url: &str, api_key: Option<&str>, body: &Value) -> Result<Value, TransportError> {
        let mut req = self.agent.post(url).header("Content-Type", "application/json");
        if let Some(key) = api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        match req.send_json(body) {
            Ok(mut resp) => resp
                .body_mut()
                .read_json::<Value>()
                .map_err(|e| TransportError::Fatal(e.to_string())),
            Err(ureq::Error::StatusCode(code)) if code == 429 || code >= 500 => {
                Err(TransportError::Transient(format!("http status {code}")))
            }
            Err(ureq::Error::StatusCode(code)) => Err(TransportError::Fatal(format!("http status {code}"))),
            Err(e) => Err(TransportError::Transient(e.to_string())),
        }
    }
}

type Responder = dyn Fn(&str, &Value) -> Result<Value, TransportError> + Send + Sync;

/// Transport that records every request and answers from a closure. Used to
/// assert how many network calls a code path makes.
pub struct RecordingTransport {
    calls: Mutex<Vec<(String, Value)>>,
    responder: Box<Responder>,
}

impl RecordingTransport {
    pub fn new(responder: impl Fn(&str, &Value) -> Result<Value, TransportError> + Send + Sync + 'static) -> Self {
        Self {
            calls: Mutex::new(Vec::new()),
            responder: Box::new(responder),
        }
    }

    /// Answers every chat request with `reply`.
    pub fn fixed_reply(reply: &str) -> Self {
        let reply = reply.to_string();
        Self::new(move |_, _| Ok(chat_response(&reply)))
    }

    pub fn call_count(&self) -> usize {
        self.calls.lock().unwrap().len()
    }

    pub fn calls(&self) -> Vec<(String, Value)> {
        self.calls.lock().unwrap().clone()
    }
}

impl Transport for RecordingTransport {
    fn post_json(&self, url: &str, _api_key: Option<&str>, body: &Value) -> Result<Value, TransportError> {
        self.calls.lock().unwrap().push((url.to_string(), body.clone()));
        (self.responder)(url, body)
    }
}

/// Minimal chat-completion response body carrying `content`.
pub fn chat_response(content: &str) -> Value {
    json!({"choices": [{"message": {"role": "assistant", "content": content}}]})
}

/// Minimal embedding response body carrying `vector`.
pub fn embedding_response(vector: &[f64]) -> Value {
    json!({"data": [{"embedding": vector}]})
}

/// Prompt texts with `{placeholder}` slots.
#[derive(Debug, Clone, PartialEq)]
pub struct Templates {
    pub system: String,
    pub content: String,
    pub decision: String,
    /// `[low, high]` behavioral description per trait, canonical order.
    pub trait_descriptions: [[String; 2]; 5],
}

const DEFAULT_TRAIT_DESCRIPTIONS: [[&str; 2]; 5] = [
    [
        "Low openness: you prefer familiar routines and conventional views, and you are wary of unusual or controversial topics.",
        "High openness: you are curious and imaginative, and you enjoy engaging with new ideas, experiences and perspectives.",
    ],
    [
        "Low conscientiousness: you act spontaneously and do not spend much effort checking details before acting.",
        "High conscientiousness: you are organized, careful and self-disciplined, and you think about consequences before acting.",
    ],
    [
        "Low extraversion: you are reserved and quiet, and you rarely seek attention or start conversations.",
        "High extraversion: you are sociable, talkative and assertive, and you like to interact with and inform others.",
    ],
    [
        "Low neuroticism: you are emotionally stable and calm, and you are rarely upset by distressing news.",
        "High neuroticism: you are easily worried or upset, and you react strongly to negative or threatening news.",
    ],
    [
        "Low agreeableness: you are skeptical and competitive, and you put your own views ahead of others' feelings.",
        "High agreeableness: you are cooperative, compassionate and considerate of how others feel.",
    ],
];

impl Default for Templates {
    fn default() -> Self {
        Self {
            system: include_str!("../templates/system.txt").to_string(),
            content: include_str!("../templates/content.txt").to_string(),
            decision: include_str!("../templates/decision.txt").to_string(),
            trait_descriptions: DEFAULT_TRAIT_DESCRIPTIONS.map(|pair| pair.map(str::to_string)),
        }
    }
}

impl Templates {
    /// Loads `system.txt`, `content.txt` and `decision.txt` from `dir`, plus
    /// an optional `traits.json` holding `[[low, high], ...]` in trait order.
    pub fn load_dir(dir: &Path) -> Result<Self, GatewayError> {
        let read = |name: &str| {
            fs::read_to_string(dir.join(name)).map_err(|_| GatewayError::MissingTemplate(name.to_string()))
        };
        let mut t = Self {
            system: read("system.txt")?,
            content: read("content.txt")?,
            decision: read("decision.txt")?,
            ..Self::default()
        };
        let traits_path = dir.join("traits.json");
        if traits_path.exists() {
            t.trait_descriptions = serde_json::from_str(&fs::read_to_string(traits_path)?)?;
        }
        Ok(t)
    }

    pub fn trait_description(&self, t: Trait, high: bool) -> &str {
        &self.trait_descriptions[t.position()][usize::from(high)]
    }
}

/// Names of every `{identifier}` token in `text`.
pub fn placeholders(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) => {
                let name = &after[..close];
                if !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                    out.push(name.to_string());
                }
                rest = &after[close + 1..];
            }
            None => break,
        }
    }
    out
}

/// Single-pass substitution; substituted values are never rescanned.
pub fn render_template(template: &str, vars: &BTreeMap<&str, String>) -> Result<String, GatewayError> {
    let mut out = String::with_capacity(template.len() * 2);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let close = after.find('}');
        let name = close.map(|c| &after[..c]);
        match name {
            Some(name) if !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') => {
                let value = vars
                    .get(name)
                    .ok_or_else(|| GatewayError::UnresolvedPlaceholder(name.to_string()))?;
                out.push_str(value);
                rest = &after[name.len() + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}

/// The three rendered prompts for one (profile, event) pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_text: String,
    pub content_text: String,
    pub decision_text: String,
}

pub fn render_prompts(templates: &Templates, profile: TraitProfile, event: &EventRecord) -> Result<PromptBundle, GatewayError> {
    let mut vars: BTreeMap<&str, String> = BTreeMap::new();
    let lines: Vec<String> = Trait::ALL
        .iter()
        .map(|&t| format!("- {}", templates.trait_description(t, profile.is_high(t))))
        .collect();
    vars.insert("traits", lines.join("\n"));
    for t in Trait::ALL {
        vars.insert(t.name(), templates.trait_description(t, profile.is_high(t)).to_string());
    }
    vars.insert("event_text", event.text.clone());
    Ok(PromptBundle {
        system_text: render_template(&templates.system, &vars)?,
        content_text: render_template(&templates.content, &vars)?,
        decision_text: render_template(&templates.decision, &vars)?,
    })
}

/// Reads the leading yes/no token of a reply, ignoring case, whitespace,
/// quotes and markdown emphasis.
pub fn parse_decision(reply: &str) -> Option<bool> {
    let token: String = reply
        .trim_start_matches(|c: char| !c.is_alphanumeric())
        .chars()
        .take_while(|c| c.is_alphabetic())
        .collect::<String>()
        .to_lowercase();
    match token.as_str() {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    }
}

const STRICT_SUFFIX: &str = "\n\nReply with exactly one word: Yes or No.";

/// One persisted exchange.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vector: Option<Vec<f64>>,
    pub timestamp: u64,
}

/// One JSON file per entry under `dir/<first two hex chars>/<key>.json`.
pub struct ResponseCache {
    dir: PathBuf,
    writer: Mutex<()>,
}

impl ResponseCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            writer: Mutex::new(()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(&key[..2]).join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Result<Option<CacheEntry>, GatewayError> {
        match fs::read_to_string(self.path(key)) {
            Ok(text) => Ok(Some(serde_json::from_str(&text)?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    /// Writes via a temporary file and rename so readers never see a torn entry.
    pub fn put(&self, entry: &CacheEntry) -> Result<(), GatewayError> {
        let _guard = self.writer.lock().unwrap();
        let path = self.path(&entry.key);
        let parent = path.parent().expect("entry path has a parent");
        fs::create_dir_all(parent)?;
        let tmp = parent.join(format!(".{}.tmp", entry.key));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(serde_json::to_string_pretty(entry)?.as_bytes())?;
            f.sync_all()?;
        }
        fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        walk_json(&self.dir)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn walk_json(dir: &Path) -> usize {
    let Ok(rd) = fs::read_dir(dir) else { return 0 };
    rd.flatten()
        .map(|e| {
            let p = e.path();
            if p.is_dir() {
                walk_json(&p)
            } else {
                usize::from(p.extension().is_some_and(|x| x == "json"))
            }
        })
        .sum()
}

fn digest(v: &Value) -> String {
    hex::encode(Sha256::digest(v.to_string().as_bytes()))
}

/// Cache key of a chat request. Temperature is keyed by its exact bits.
pub fn chat_key(model: &str, messages: &Value, temperature: f64, sample_index: u64) -> String {
    digest(&json!({
        "kind": "chat",
        "model": model,
        "messages": messages,
        "temperature": format!("{:016x}", temperature.to_bits()),
        "sample_index": sample_index,
    }))
}

pub fn embedding_key(model: &str, text: &str) -> String {
    digest(&json!({"kind": "embedding", "model": model, "input": text}))
}

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub chat_url: String,
    pub embeddings_url: String,
    pub chat_model: String,
    pub embedding_model: String,
    pub api_key: Option<String>,
    pub max_in_flight: usize,
    pub retry_attempts: usize,
    pub backoff_base: Duration,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            chat_url: "https://api.openai.com/v1/chat/completions".into(),
            embeddings_url: "https://api.openai.com/v1/embeddings".into(),
            chat_model: "gpt-3.5-turbo-1106".into(),
            embedding_model: "text-embedding-3-small".into(),
            api_key: None,
            max_in_flight: 4,
            retry_attempts: 3,
            backoff_base: Duration::from_millis(500),
        }
    }
}

impl GatewayConfig {
    /// Default endpoints with the credential taken from the environment.
    pub fn from_env() -> Self {
        Self {
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            ..Self::default()
        }
    }
}

struct InFlight {
    active: Mutex<usize>,
    freed: Condvar,
    limit: usize,
}

impl InFlight {
    fn acquire(&self) -> InFlightGuard<'_> {
        let mut n = self.active.lock().unwrap();
        while *n >= self.limit {
            n = self.freed.wait(n).unwrap();
        }
        *n += 1;
        InFlightGuard(self)
    }
}

struct InFlightGuard<'a>(&'a InFlight);

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        *self.0.active.lock().unwrap() -= 1;
        self.0.freed.notify_one();
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryOutcome {
    pub decision: bool,
    pub reply: String,
    pub cached: bool,
}

pub struct Gateway {
    config: GatewayConfig,
    transport: Option<Arc<dyn Transport>>,
    cache: ResponseCache,
    in_flight: InFlight,
}

impl Gateway {
    pub fn new(config: GatewayConfig, transport: Option<Arc<dyn Transport>>, cache: ResponseCache) -> Self {
        let limit = config.max_in_flight.max(1);
        Self {
            config,
            transport,
            cache,
            in_flight: InFlight {
                active: Mutex::new(0),
                freed: Condvar::new(),
                limit,
            },
        }
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }

    fn send(&self, url: &str, body: &Value) -> Result<Value, GatewayError> {
        let transport = self
            .transport
            .as_ref()
            .ok_or_else(|| GatewayError::Unavailable("no transport configured".into()))?;
        let _slot = self.in_flight.acquire();
        let attempts = self.config.retry_attempts.max(1);
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(self.config.backoff_base * (1 << (attempt - 1)));
            }
            match transport.post_json(url, self.config.api_key.as_deref(), body) {
                Ok(v) => return Ok(v),
                Err(TransportError::Transient(msg)) => {
                    log::warn!("transient transport failure (attempt {}): {msg}", attempt + 1);
                    last = msg;
                }
                Err(TransportError::Fatal(msg)) => return Err(GatewayError::Unavailable(msg)),
            }
        }
        Err(GatewayError::Unavailable(format!("gave up after {attempts} attempts: {last}")))
    }

    fn chat(&self, messages: &Value, temperature: f64, sample_index: u64, online: bool) -> Result<(String, bool), GatewayError> {
        let model = &self.config.chat_model;
        let key = chat_key(model, messages, temperature, sample_index);
        if let Some(entry) = self.cache.get(&key)? {
            if let Some(reply) = entry.reply {
                return Ok((reply, true));
            }
        }
        if !online {
            return Err(GatewayError::CacheMissOffline(key));
        }
        let body = json!({"model": model, "messages": messages, "temperature": temperature});
        let resp = self.send(&self.config.chat_url, &body)?;
        let reply = resp["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| GatewayError::MalformedResponse("no choices[0].message.content".into()))?
            .to_string();
        self.cache.put(&CacheEntry {
            key,
            model: model.clone(),
            decision: parse_decision(&reply),
            reply: Some(reply.clone()),
            vector: None,
            timestamp: now_secs(),
        })?;
        Ok((reply, false))
    }

    /// Asks the model whether to share. On an unparseable reply the question
    /// is re-sent once with a stricter instruction.
    pub fn query_decision(
        &self,
        bundle: &PromptBundle,
        temperature: f64,
        sample_index: u64,
        online: bool,
    ) -> Result<QueryOutcome, GatewayError> {
        let messages = json!([
            {"role": "system", "content": bundle.system_text},
            {"role": "user", "content": bundle.content_text},
        ]);
        let (reply, cached) = self.chat(&messages, temperature, sample_index, online)?;
        if let Some(decision) = parse_decision(&reply) {
            return Ok(QueryOutcome { decision, reply, cached });
        }
        let strict = json!([
            {"role": "system", "content": bundle.system_text},
            {"role": "user", "content": format!("{}{STRICT_SUFFIX}", bundle.content_text)},
        ]);
        let (reply, cached) = self.chat(&strict, temperature, sample_index, online)?;
        match parse_decision(&reply) {
            Some(decision) => Ok(QueryOutcome { decision, reply, cached }),
            None => Err(GatewayError::UnparseableReply(reply)),
        }
    }

    /// Asks for the rationale behind an earlier decision.
    pub fn query_rationale(
        &self,
        bundle: &PromptBundle,
        temperature: f64,
        sample_index: u64,
        online: bool,
    ) -> Result<(String, bool), GatewayError> {
        let messages = json!([
            {"role": "system", "content": bundle.system_text},
            {"role": "user", "content": bundle.decision_text},
        ]);
        self.chat(&messages, temperature, sample_index, online)
    }

    pub fn embed_text(&self, text: &str, online: bool) -> Result<(Vec<f64>, bool), GatewayError> {
        if text.trim().is_empty() {
            return Err(GatewayError::EmptyInput);
        }
        let model = &self.config.embedding_model;
        let key = embedding_key(model, text);
        if let Some(entry) = self.cache.get(&key)? {
            if let Some(v) = entry.vector {
                return Ok((v, true));
            }
        }
        if !online {
            return Err(GatewayError::CacheMissOffline(key));
        }
        let resp = self.send(&self.config.embeddings_url, &json!({"model": model, "input": text}))?;
        let vector: Vec<f64> = resp["data"][0]["embedding"]
            .as_array()
            .ok_or_else(|| GatewayError::MalformedResponse("no data[0].embedding".into()))?
            .iter()
            .map(|x| x.as_f64().ok_or_else(|| GatewayError::MalformedResponse("non-numeric embedding".into())))
            .collect::<Result<_, _>>()?;
        self.cache.put(&CacheEntry {
            key,
            model: model.clone(),
            reply: None,
            decision: None,
            vector: Some(vector.clone()),
            timestamp: now_secs(),
        })?;
        Ok((vector, false))
    }
}

fn now_secs() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}
