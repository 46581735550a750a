//! LLM paraphrasing with an append-only cache, bounded concurrency, retries
//! and a requests-per-minute cap.
//!
//! Each input yields exactly one entry: a record, or a per-item failure. Only
//! authentication errors and cache corruption abort a run.

use std::collections::{HashMap, VecDeque};
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const PROMPT_TEMPLATE: &str = "Paraphrase the following post, preserving its meaning, tone, and any mention of symptoms or disorders. Output only the paraphrase.";

pub const ENV_ENDPOINT: &str = "PARA_ENDPOINT";
pub const ENV_MODEL: &str = "PARA_MODEL";
pub const ENV_API_KEY: &str = "PARA_API_KEY";

fn sha256_hex(data: &str) -> String {
    Sha256::digest(data.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Short hash identifying the prompt template a record was produced with.
pub fn prompt_fingerprint(template: &str) -> String {
    sha256_hex(template)[..16].to_owned()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParaphraseRecord {
    pub source_id: String,
    pub source_text: String,
    pub paraphrase_text: String,
    pub provider_tag: String,
    pub prompt_fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemFailure {
    pub source_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParaphraseEntry {
    Done(ParaphraseRecord),
    Failed(ItemFailure),
}

impl ParaphraseEntry {
    pub fn source_id(&self) -> &str {
        match self {
            ParaphraseEntry::Done(r) => &r.source_id,
            ParaphraseEntry::Failed(f) => &f.source_id,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ProviderError {
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("transient failure: {0}")]
    Transient(String),
    #[error("request refused: {0}")]
    Refused(String),
}

#[derive(Debug, thiserror::Error)]
pub enum ParaphraseError {
    #[error(transparent)]
    Auth(ProviderError),
    #[error("cache {path}:{line}: {message}")]
    CacheCorrupt { path: String, line: usize, message: String },
    #[error("cache i/o: {0}")]
    CacheIo(#[from] io::Error),
    #[error("invalid client policy: {0}")]
    Policy(String),
    #[error("missing environment variable {0}")]
    MissingEnv(&'static str),
}

/// A chat-completion service: system + user message in, assistant text out.
pub trait Provider: Sync {
    fn tag(&self) -> String;
    fn complete(&self, system: &str, user: &str) -> Result<String, ProviderError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClientPolicy {
    pub max_concurrent_requests: usize,
    pub max_retries: u32,
    pub backoff_base: Duration,
    pub requests_per_minute_cap: usize,
}

impl Default for ClientPolicy {
    fn default() -> Self {
        ClientPolicy {
            max_concurrent_requests: 4,
            max_retries: 3,
            backoff_base: Duration::from_millis(500),
            requests_per_minute_cap: 60,
        }
    }
}

impl ClientPolicy {
    pub fn validate(&self) -> Result<(), ParaphraseError> {
        if self.max_concurrent_requests == 0 || self.requests_per_minute_cap == 0 {
            return Err(ParaphraseError::Policy(
                "max_concurrent_requests and requests_per_minute_cap must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// The offline stub's transform: a word shuffle seeded by the text itself.
///
/// A shuffle that reproduces the original order is rotated by one word, so
/// texts of two or more distinct words always change.
pub fn stub_paraphrase(text: &str) -> String {
    let words: Vec<&str> = text.split_whitespace().collect();
    let digest = Sha256::digest(text.as_bytes());
    let seed = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled = words.clone();
    shuffled.shuffle(&mut rng);
    if shuffled == words && words.len() > 1 {
        shuffled.rotate_left(1);
    }
    shuffled.join(" ")
}

/// Deterministic offline provider. Records every call for inspection.
#[derive(Debug, Default)]
pub struct StubProvider {
    delay: Duration,
    calls: AtomicUsize,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
    log: Mutex<Vec<Instant>>,
}

impl StubProvider {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sleeps this long inside every call, so concurrent calls overlap.
    pub fn with_delay(delay: Duration) -> Self {
        StubProvider {
            delay,
            ..Self::default()
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight.load(Ordering::SeqCst)
    }

    /// Start times of every call, in call order.
    pub fn call_log(&self) -> Vec<Instant> {
        self.log.lock().expect("stub log").clone()
    }
}

impl Provider for StubProvider {
    fn tag(&self) -> String {
        "stub:word-shuffle".into()
    }

    fn complete(&self, _system: &str, user: &str) -> Result<String, ProviderError> {
        self.log.lock().expect("stub log").push(Instant::now());
        self.calls.fetch_add(1, Ordering::SeqCst);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.max_in_flight.fetch_max(now, Ordering::SeqCst);
        if !self.delay.is_zero() {
            thread::sleep(self.delay);
        }
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        if user.trim().is_empty() {
            return Err(ProviderError::Refused("empty input".into()));
        }
        Ok(stub_paraphrase(user))
    }
}

/// OpenAI-style `/chat/completions` endpoint.
pub struct HttpProvider {
    endpoint: String,
    model: String,
    api_key: String,
    agent: ureq::Agent,
}

impl HttpProvider {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, api_key: impl Into<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(60)))
            .http_status_as_error(false)
            .build()
            .into();
        HttpProvider {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: api_key.into(),
            agent,
        }
    }

    pub fn from_env() -> Result<Self, ParaphraseError> {
        let var = |name: &'static str| std::env::var(name).map_err(|_| ParaphraseError::MissingEnv(name));
        Ok(Self::new(var(ENV_ENDPOINT)?, var(ENV_MODEL)?, var(ENV_API_KEY)?))
    }

    pub fn request_body(&self, system: &str, user: &str) -> serde_json::Value {
        serde_json::json!({
            "model": self.model,
            "messages": [
                { "role": "system", "content": system },
                { "role": "user", "content": user },
            ],
        })
    }
}

impl Provider for HttpProvider {
    fn tag(&self) -> String {
        format!("http:{}", self.model)
    }

    fn complete(&self, system: &str, user: &str) -> Result<String, ProviderError> {
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(self.request_body(system, user))
            .map_err(|e| ProviderError::Transient(e.to_string()))?;
        let status = resp.status().as_u16();
        match status {
            200..=299 => {}
            401 | 403 => return Err(ProviderError::Auth(format!("HTTP {status}"))),
            408 | 429 | 500..=599 => return Err(ProviderError::Transient(format!("HTTP {status}"))),
            _ => return Err(ProviderError::Refused(format!("HTTP {status}"))),
        }
        let body: serde_json::Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| ProviderError::Transient(format!("unreadable response: {e}")))?;
        body["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_owned)
            .ok_or_else(|| ProviderError::Refused("response has no assistant content".into()))
    }
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    fingerprint: String,
    source_hash: String,
    record: ParaphraseRecord,
}

type CacheKey = (String, String);

struct CacheState {
    entries: HashMap<CacheKey, ParaphraseRecord>,
    file: Option<File>,
}

/// Line-delimited JSON cache keyed by (prompt fingerprint, source text hash).
/// Writes are appended and flushed one record at a time.
pub struct ParaphraseCache {
    path: Option<PathBuf>,
    state: Mutex<CacheState>,
}

impl ParaphraseCache {
    pub fn in_memory() -> Self {
        ParaphraseCache {
            path: None,
            state: Mutex::new(CacheState {
                entries: HashMap::new(),
                file: None,
            }),
        }
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self, ParaphraseError> {
        let path = path.as_ref().to_path_buf();
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let parsed: CacheLine = serde_json::from_str(&line).map_err(|e| ParaphraseError::CacheCorrupt {
                    path: path.display().to_string(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
                entries.insert((parsed.fingerprint, parsed.source_hash), parsed.record);
            }
        } else if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(ParaphraseCache {
            path: Some(path),
            state: Mutex::new(CacheState {
                entries,
                file: Some(file),
            }),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.state.lock().expect("cache lock").entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn key(fingerprint: &str, source_text: &str) -> CacheKey {
        (fingerprint.to_owned(), sha256_hex(source_text))
    }

    pub fn get(&self, fingerprint: &str, source_text: &str) -> Option<ParaphraseRecord> {
        let key = Self::key(fingerprint, source_text);
        self.state.lock().expect("cache lock").entries.get(&key).cloned()
    }

    pub fn insert(&self, record: ParaphraseRecord) -> Result<(), ParaphraseError> {
        let key = Self::key(&record.prompt_fingerprint, &record.source_text);
        let mut state = self.state.lock().expect("cache lock");
        if let Some(file) = state.file.as_mut() {
            let line = CacheLine {
                fingerprint: key.0.clone(),
                source_hash: key.1.clone(),
                record: record.clone(),
            };
            let mut text = serde_json::to_string(&line).expect("record serializes");
            text.push('\n');
            file.write_all(text.as_bytes())?;
            file.flush()?;
        }
        state.entries.insert(key, record);
        Ok(())
    }
}

/// Sliding-window limiter: at most `cap` acquisitions in any `window`.
pub struct RateLimiter {
    cap: usize,
    window: Duration,
    stamps: Mutex<VecDeque<Instant>>,
}

impl RateLimiter {
    pub fn new(cap: usize, window: Duration) -> Self {
        RateLimiter {
            cap: cap.max(1),
            window,
            stamps: Mutex::new(VecDeque::new()),
        }
    }

    pub fn per_minute(cap: usize) -> Self {
        Self::new(cap, Duration::from_secs(60))
    }

    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut stamps = self.stamps.lock().expect("limiter lock");
                let now = Instant::now();
                while stamps.front().is_some_and(|t| now.duration_since(*t) >= self.window) {
                    stamps.pop_front();
                }
                if stamps.len() < self.cap {
                    stamps.push_back(now);
                    return;
                }
                self.window - now.duration_since(*stamps.front().expect("non-empty at cap"))
            };
            thread::sleep(wait);
        }
    }
}

pub struct Paraphraser<'a, P: Provider> {
    provider: &'a P,
    policy: ClientPolicy,
    limiter: RateLimiter,
    template: &'a str,
}

impl<'a, P: Provider> Paraphraser<'a, P> {
    pub fn new(provider: &'a P, policy: ClientPolicy) -> Result<Self, ParaphraseError> {
        policy.validate()?;
        Ok(Paraphraser {
            provider,
            limiter: RateLimiter::per_minute(policy.requests_per_minute_cap),
            policy,
            template: PROMPT_TEMPLATE,
        })
    }

    /// Replaces the one-minute window, mostly so tests need not wait a minute.
    pub fn with_rate_window(mut self, window: Duration) -> Self {
        self.limiter = RateLimiter::new(self.policy.requests_per_minute_cap, window);
        self
    }

    pub fn run(
        &self,
        texts: &[(String, String)],
        cache: &ParaphraseCache,
    ) -> Result<Vec<ParaphraseEntry>, ParaphraseError> {
        let fingerprint = prompt_fingerprint(self.template);
        let mut slots: Vec<Option<ParaphraseEntry>> = vec![None; texts.len()];
        let mut pending = Vec::new();
        for (i, (id, text)) in texts.iter().enumerate() {
            match cache.get(&fingerprint, text) {
                Some(hit) => {
                    slots[i] = Some(ParaphraseEntry::Done(ParaphraseRecord {
                        source_id: id.clone(),
                        ..hit
                    }))
                }
                None => pending.push(i),
            }
        }

        let next = AtomicUsize::new(0);
        let abort = AtomicBool::new(false);
        let fatal: Mutex<Option<ParaphraseError>> = Mutex::new(None);
        let done: Mutex<Vec<(usize, ParaphraseEntry)>> = Mutex::new(Vec::new());
        let workers = self.policy.max_concurrent_requests.min(pending.len());
        thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    if abort.load(Ordering::SeqCst) {
                        return;
                    }
                    let k = next.fetch_add(1, Ordering::SeqCst);
                    let Some(&i) = pending.get(k) else { return };
                    let (id, text) = &texts[i];
                    match self.one(id, text, &fingerprint) {
                        Ok(entry) => {
                            if let ParaphraseEntry::Done(record) = &entry {
                                if let Err(e) = cache.insert(record.clone()) {
                                    abort.store(true, Ordering::SeqCst);
                                    fatal.lock().expect("fatal lock").get_or_insert(e);
                                    return;
                                }
                            }
                            done.lock().expect("done lock").push((i, entry));
                        }
                        Err(e) => {
                            abort.store(true, Ordering::SeqCst);
                            fatal.lock().expect("fatal lock").get_or_insert(e);
                            return;
                        }
                    }
                });
            }
        });
        if let Some(e) = fatal.into_inner().expect("fatal lock") {
            return Err(e);
        }
        for (i, entry) in done.into_inner().expect("done lock") {
            slots[i] = Some(entry);
        }
        Ok(slots.into_iter().map(|s| s.expect("every slot filled")).collect())
    }

    fn one(&self, id: &str, text: &str, fingerprint: &str) -> Result<ParaphraseEntry, ParaphraseError> {
        let fail = |reason: String| {
            Ok(ParaphraseEntry::Failed(ItemFailure {
                source_id: id.to_owned(),
                reason,
            }))
        };
        let mut attempt = 0u32;
        loop {
            self.limiter.acquire();
            match self.provider.complete(self.template, text) {
                Ok(out) if out.trim().is_empty() => return fail("empty completion".into()),
                Ok(out) => {
                    return Ok(ParaphraseEntry::Done(ParaphraseRecord {
                        source_id: id.to_owned(),
                        source_text: text.to_owned(),
                        paraphrase_text: out,
                        provider_tag: self.provider.tag(),
                        prompt_fingerprint: fingerprint.to_owned(),
                    }))
                }
                Err(e @ ProviderError::Auth(_)) => return Err(ParaphraseError::Auth(e)),
                Err(ProviderError::Refused(msg)) => return fail(format!("refused: {msg}")),
                Err(ProviderError::Transient(msg)) => {
                    if attempt >= self.policy.max_retries {
                        return fail(format!("gave up after {} attempts: {msg}", attempt + 1));
                    }
                    thread::sleep(self.policy.backoff_base * 2u32.saturating_pow(attempt));
                    attempt += 1;
                }
            }
        }
    }
}

/// One entry per input, in input order.
pub fn paraphrase<P: Provider>(
    texts: &[(String, String)],
    provider: &P,
    policy: ClientPolicy,
    cache: &ParaphraseCache,
) -> Result<Vec<ParaphraseEntry>, ParaphraseError> {
    Paraphraser::new(provider, policy)?.run(texts, cache)
}
