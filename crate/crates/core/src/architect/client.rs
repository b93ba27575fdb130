use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const API_KEY_ENV: &str = "MAESTRO_LLM_API_KEY";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub system: String,
    pub user: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_ms: u64,
}

impl ChatRequest {
    /// Stable serialization: field order is fixed and floats print identically across runs.
    pub fn wire_form(&self) -> String {
        serde_json::to_string(self).expect("request serializes")
    }

    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.wire_form().as_bytes()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub prompt_tokens: u32,
    pub completion_tokens: u32,
    pub latency_ms: u64,
}

#[derive(Debug, Error)]
pub enum ChatError {
    #[error("chat client configuration: {0}")]
    Config(String),
    #[error("chat transport failed after {attempts} attempts: {detail}")]
    Transport { attempts: u32, detail: String },
    #[error("malformed chat response: {0}")]
    Response(String),
    #[error("no recorded response for request {fingerprint}")]
    ReplayMiss { fingerprint: String },
    #[error("chat log {path}: {detail}")]
    Log { path: PathBuf, detail: String },
}

pub trait ChatClient: Send + Sync {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, ChatError>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpClientConfig {
    pub endpoint: String,
    pub max_retries: u32,
    pub backoff_ms: u64,
}

impl Default for HttpClientConfig {
    fn default() -> Self {
        HttpClientConfig { endpoint: "http://127.0.0.1:8080/v1/chat/completions".into(), max_retries: 2, backoff_ms: 500 }
    }
}

/// Chat-completion client: POSTs `{model, messages, temperature, max_tokens}` and
/// reads `choices[0].message.content`.
pub struct HttpChatClient {
    cfg: HttpClientConfig,
    api_key: String,
    http: reqwest::blocking::Client,
}

impl HttpChatClient {
    /// Reads the API key from the environment; a missing key is a configuration error.
    pub fn from_env(cfg: HttpClientConfig) -> Result<Self, ChatError> {
        let key = std::env::var(API_KEY_ENV).map_err(|_| ChatError::Config(format!("{API_KEY_ENV} is not set")))?;
        Self::new(cfg, key)
    }

    pub fn new(cfg: HttpClientConfig, api_key: String) -> Result<Self, ChatError> {
        if api_key.is_empty() {
            return Err(ChatError::Config("empty API key".into()));
        }
        reqwest::Url::parse(&cfg.endpoint).map_err(|e| ChatError::Config(format!("endpoint {}: {e}", cfg.endpoint)))?;
        let http = reqwest::blocking::Client::builder().build().map_err(|e| ChatError::Config(e.to_string()))?;
        Ok(HttpChatClient { cfg, api_key, http })
    }

    fn attempt(&self, request: &ChatRequest) -> Result<ChatResponse, AttemptError> {
        let body = serde_json::json!({
            "model": request.model,
            "messages": [
                {"role": "system", "content": request.system},
                {"role": "user", "content": request.user},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let start = Instant::now();
        let resp = self
            .http
            .post(&self.cfg.endpoint)
            .bearer_auth(&self.api_key)
            .timeout(Duration::from_millis(request.timeout_ms))
            .json(&body)
            .send()
            .map_err(|e| AttemptError::Retry(e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(AttemptError::Retry(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(AttemptError::Fatal(ChatError::Response(format!("HTTP {status}"))));
        }
        let v: serde_json::Value = resp.json().map_err(|e| AttemptError::Retry(e.to_string()))?;
        let text = v["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| AttemptError::Fatal(ChatError::Response("missing choices[0].message.content".into())))?;
        let tokens = |k: &str| v["usage"][k].as_u64().unwrap_or(0) as u32;
        Ok(ChatResponse {
            text: text.to_string(),
            prompt_tokens: tokens("prompt_tokens"),
            completion_tokens: tokens("completion_tokens"),
            latency_ms: start.elapsed().as_millis() as u64,
        })
    }
}

enum AttemptError {
    Retry(String),
    Fatal(ChatError),
}

impl ChatClient for HttpChatClient {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, ChatError> {
        let mut last = String::new();
        for attempt in 0..=self.cfg.max_retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(self.cfg.backoff_ms << (attempt - 1)));
            }
            match self.attempt(request) {
                Ok(r) => return Ok(r),
                Err(AttemptError::Fatal(e)) => return Err(e),
                Err(AttemptError::Retry(detail)) => {
                    log::warn!("chat attempt {} failed: {detail}", attempt + 1);
                    last = detail;
                }
            }
        }
        Err(ChatError::Transport { attempts: self.cfg.max_retries + 1, detail: last })
    }
}

/// Marker lines the prompt templates carry so the mock knows what is asked.
pub const TASK_CONTEXT: &str = "TASK: traffic-context";
pub const TASK_REWARD: &str = "TASK: reward-program";
pub const STYLE_FREE: &str = "STYLE: free";

/// Deterministic offline stand-in for a chat model. Each response is a pure
/// function of the seed and the request.
#[derive(Clone, Debug)]
pub struct MockChatClient {
    seed: u64,
    invalid_rate: f64,
}

const REWARD_LIBRARY: [&str; 6] = [
    "{a} * tanh(outflow - 0.1 * queue)",
    "-{a} * tanh(wait / 200 + abs(pressure) / 20)",
    "{a} * clip(outflow - 2 * occupancy, -1, 1)",
    "-{a} * tanh(queue / 10)",
    "{a} * (tanh(outflow + throughput) - tanh(wait / 300))",
    "{a} * min(outflow, 2) - {a} * tanh(abs(pressure) / 10)",
];

const INVALID_LIBRARY: [&str; 5] = ["queue ** 2", "import os", "queue / 0", "1e9 + wait", "def reward(s): return s.queue"];

impl MockChatClient {
    pub fn new(seed: u64) -> Self {
        MockChatClient { seed, invalid_rate: 0.0 }
    }

    pub fn with_invalid_rate(seed: u64, invalid_rate: f64) -> Self {
        MockChatClient { seed, invalid_rate: invalid_rate.clamp(0.0, 1.0) }
    }

    fn rng_for(&self, request: &ChatRequest) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(request.wire_form().as_bytes());
        ChaCha8Rng::from_seed(h.finalize().into())
    }

    fn difficulty(user: &str) -> f64 {
        user.lines()
            .find_map(|l| l.trim().strip_prefix("difficulty:"))
            .and_then(|v| v.trim().parse::<f64>().ok())
            .unwrap_or(0.5)
    }

    fn reward_text(&self, rng: &mut ChaCha8Rng) -> String {
        if rng.random::<f64>() < self.invalid_rate {
            let bad = INVALID_LIBRARY[rng.random_range(0..INVALID_LIBRARY.len())];
            return format!("Here is the reward:\n```reward\n{bad}\n```\n");
        }
        let tpl = REWARD_LIBRARY[rng.random_range(0..REWARD_LIBRARY.len())];
        let a = (rng.random_range(0.002..0.006f64) * 1e4).round() / 1e4;
        let expr = tpl.replace("{a}", &a.to_string());
        format!("A shaping term for this stage:\n```reward\n{expr}\n```\n")
    }

    fn context_text(&self, rng: &mut ChaCha8Rng, d: f64, free: bool) -> String {
        if rng.random::<f64>() < self.invalid_rate {
            return "The traffic should be heavier in the morning.".into();
        }
        let spread = if free { 0.4 } else { 0.1 };
        let rate = (0.02 + 0.18 * d) * (1.0 + rng.random_range(-spread..spread));
        let asym_spread = if free { 0.7 } else { 0.3 };
        let asym: Vec<f64> = (0..4).map(|_| 1.0 + rng.random_range(-asym_spread..asym_spread)).collect();
        let s: f64 = asym.iter().sum();
        let asym: Vec<f64> = asym.iter().map(|x| round4(4.0 * x / s)).collect();
        let straight = rng.random_range(0.5..0.7f64);
        let left = rng.random_range(0.1..0.25f64);
        let turns = [round4(straight), round4(left), round4(1.0 - straight - left)];
        let speed = (1.2 - 0.4 * d) * (1.0 + rng.random_range(-spread..spread) / 2.0);
        let body = serde_json::json!({
            "base_arrival_rate": round4(rate),
            "approach_asymmetry": asym,
            "turn_probs": turns,
            "speed_factor": round4(speed),
        });
        // Free-style answers sometimes omit a field, as unconstrained models do.
        if free && rng.random::<f64>() < 0.2 {
            let mut v = body;
            v.as_object_mut().unwrap().remove("turn_probs");
            return format!("```json\n{v}\n```");
        }
        format!("```json\n{body}\n```")
    }
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

impl ChatClient for MockChatClient {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, ChatError> {
        let mut rng = self.rng_for(request);
        let text = if request.system.contains(TASK_REWARD) {
            self.reward_text(&mut rng)
        } else if request.system.contains(TASK_CONTEXT) {
            let free = request.system.contains(STYLE_FREE);
            self.context_text(&mut rng, Self::difficulty(&request.user), free)
        } else {
            "I can only help with traffic contexts and reward programs.".into()
        };
        let words = |s: &str| s.split_whitespace().count() as u32;
        Ok(ChatResponse {
            prompt_tokens: words(&request.system) + words(&request.user),
            completion_tokens: words(&text),
            text,
            latency_ms: 0,
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChatLogEntry {
    pub fingerprint: String,
    pub request: ChatRequest,
    pub response: ChatResponse,
}

/// Answers from a JSON-lines log written by [`RecordingClient`].
pub struct ReplayClient {
    entries: HashMap<String, ChatResponse>,
}

impl ReplayClient {
    pub fn load(path: &Path) -> Result<Self, ChatError> {
        let log_err = |detail: String| ChatError::Log { path: path.to_path_buf(), detail };
        let file = File::open(path).map_err(|e| log_err(e.to_string()))?;
        let mut entries = HashMap::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| log_err(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let e: ChatLogEntry = serde_json::from_str(&line).map_err(|e| log_err(format!("line {}: {e}", i + 1)))?;
            entries.insert(e.request.fingerprint(), e.response);
        }
        Ok(ReplayClient { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl ChatClient for ReplayClient {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, ChatError> {
        let fingerprint = request.fingerprint();
        self.entries.get(&fingerprint).cloned().ok_or(ChatError::ReplayMiss { fingerprint })
    }
}

/// Forwards to an inner client and appends every exchange to a JSON-lines log.
pub struct RecordingClient<C> {
    inner: C,
    path: PathBuf,
    file: Mutex<File>,
}

impl<C: ChatClient> RecordingClient<C> {
    pub fn new(inner: C, path: &Path) -> Result<Self, ChatError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| ChatError::Log { path: path.to_path_buf(), detail: e.to_string() })?;
        Ok(RecordingClient { inner, path: path.to_path_buf(), file: Mutex::new(file) })
    }
}

impl<C: ChatClient> ChatClient for RecordingClient<C> {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, ChatError> {
        let response = self.inner.chat(request)?;
        let entry = ChatLogEntry { fingerprint: request.fingerprint(), request: request.clone(), response: response.clone() };
        let line = serde_json::to_string(&entry).expect("log entry serializes");
        let mut f = self.file.lock().unwrap_or_else(|p| p.into_inner());
        writeln!(f, "{line}").map_err(|e| ChatError::Log { path: self.path.clone(), detail: e.to_string() })?;
        Ok(response)
    }
}

impl ChatClient for Box<dyn ChatClient> {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, ChatError> {
        (**self).chat(request)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(system: &str, user: &str) -> ChatRequest {
        ChatRequest {
            model: "mock".into(),
            system: system.into(),
            user: user.into(),
            temperature: 0.7,
            max_tokens: 256,
            timeout_ms: 1000,
        }
    }

    #[test]
    fn wire_form_is_stable() {
        let r = req("s", "u");
        assert_eq!(
            r.wire_form(),
            r#"{"model":"mock","system":"s","user":"u","temperature":0.7,"max_tokens":256,"timeout_ms":1000}"#
        );
        assert_eq!(r.fingerprint(), r.clone().fingerprint());
    }

    #[test]
    fn mock_repeats_itself() {
        let m = MockChatClient::new(7);
        let r = req(TASK_REWARD, "difficulty: 0.5");
        let first = m.chat(&r).unwrap().text;
        for _ in 0..100 {
            assert_eq!(m.chat(&r).unwrap().text, first);
        }
        assert_ne!(MockChatClient::new(8).chat(&r).unwrap().text, first);
    }

    #[test]
    fn missing_key_fails_at_construction() {
        let err = HttpChatClient::new(HttpClientConfig::default(), String::new()).err().unwrap();
        assert!(matches!(err, ChatError::Config(_)));
    }

    #[test]
    fn record_then_replay() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("chat.jsonl");
        let rec = RecordingClient::new(MockChatClient::new(3), &path).unwrap();
        let a = req(TASK_CONTEXT, "difficulty: 0.4");
        let b = req(TASK_REWARD, "difficulty: 0.4");
        let ra = rec.chat(&a).unwrap();
        let rb = rec.chat(&b).unwrap();
        let replay = ReplayClient::load(&path).unwrap();
        assert_eq!(replay.len(), 2);
        assert_eq!(replay.chat(&a).unwrap(), ra);
        assert_eq!(replay.chat(&b).unwrap(), rb);
        assert!(matches!(replay.chat(&req("x", "y")), Err(ChatError::ReplayMiss { .. })));
    }
}
