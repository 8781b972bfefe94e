//! Batch client for chat-completion endpoints with resumable output.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};
use std::time::{Duration, Instant};

use base64::Engine as _;
use log::{info, warn};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::domain::Sample;
use crate::io::{open_append, IoError};

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("i/o error on {path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: Option<String>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_secs: f64,
    pub max_in_flight: usize,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    /// Frames attached per request when a media directory is given.
    pub frames: usize,
    /// Prefix stating the video length, e.g. for models that see only frames.
    /// `{duration}` is replaced by the sample duration in seconds.
    pub duration_hint: Option<String>,
}

pub const DEFAULT_DURATION_HINT: &str = "The video is {duration} seconds long. ";

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            base_url: "http://127.0.0.1:8000/v1".into(),
            model: "model".into(),
            api_key_env: None,
            temperature: 0.0,
            max_tokens: 512,
            timeout_secs: 120.0,
            max_in_flight: 4,
            max_retries: 2,
            backoff_base_ms: 500,
            frames: 8,
            duration_hint: None,
        }
    }
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<(), RunnerError> {
        if self.max_in_flight < 1 {
            return Err(RunnerError::Config(
                "max_in_flight must be at least 1".into(),
            ));
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(RunnerError::Config("timeout_secs must be positive".into()));
        }
        if self.frames < 1 {
            return Err(RunnerError::Config("frames must be at least 1".into()));
        }
        Ok(())
    }

    pub fn backoff(&self, attempt: u32) -> Duration {
        Duration::from_millis(self.backoff_base_ms.saturating_mul(1u64 << attempt.min(16)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub sample_id: String,
    pub raw_text: String,
    #[serde(default)]
    pub model: String,
    #[serde(default)]
    pub latency_ms: u64,
    #[serde(default)]
    pub attempts: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Centers of `n_wanted` equal bins over `n_available` frames, deduplicated.
pub fn select_frame_indices(n_available: usize, n_wanted: usize) -> Vec<usize> {
    if n_available == 0 || n_wanted == 0 {
        return Vec::new();
    }
    let mut out: Vec<usize> = Vec::with_capacity(n_wanted);
    for i in 0..n_wanted {
        let idx = ((2 * i + 1) * n_available) / (2 * n_wanted);
        if out.last() != Some(&idx) {
            out.push(idx);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub text: String,
    /// JPEG-encoded images.
    pub images: Vec<Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{message}")]
pub struct ChatError {
    pub message: String,
    pub retryable: bool,
}

pub trait ChatClient: Send + Sync {
    fn complete(&self, req: &ChatRequest) -> Result<String, ChatError>;

    /// Checked once before a batch starts.
    fn preflight(&self) -> Result<(), RunnerError> {
        Ok(())
    }
}

/// OpenAI-style `/chat/completions` client.
pub struct HttpChatClient {
    cfg: EndpointConfig,
    token: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpChatClient {
    pub fn new(cfg: EndpointConfig) -> Result<Self, RunnerError> {
        cfg.validate()?;
        let token = match &cfg.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                RunnerError::Config(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(cfg.timeout_secs))
            .build()
            .map_err(|e| RunnerError::Config(e.to_string()))?;
        Ok(HttpChatClient { cfg, token, client })
    }

    fn url(&self) -> String {
        format!(
            "{}/chat/completions",
            self.cfg.base_url.trim_end_matches('/')
        )
    }

    pub fn request_body(&self, req: &ChatRequest) -> serde_json::Value {
        let mut content = vec![json!({"type": "text", "text": req.text})];
        for img in &req.images {
            let b64 = base64::engine::general_purpose::STANDARD.encode(img);
            content.push(json!({
                "type": "image_url",
                "image_url": {"url": format!("data:image/jpeg;base64,{b64}")}
            }));
        }
        json!({
            "model": self.cfg.model,
            "temperature": self.cfg.temperature,
            "max_tokens": self.cfg.max_tokens,
            "messages": [{"role": "user", "content": content}],
        })
    }
}

impl ChatClient for HttpChatClient {
    fn complete(&self, req: &ChatRequest) -> Result<String, ChatError> {
        let mut rb = self.client.post(self.url()).json(&self.request_body(req));
        if let Some(t) = &self.token {
            rb = rb.bearer_auth(t);
        }
        let resp = rb.send().map_err(|e| ChatError {
            message: e.to_string(),
            retryable: true,
        })?;
        let status = resp.status();
        if !status.is_success() {
            return Err(ChatError {
                message: format!("endpoint returned {status}"),
                retryable: status.is_server_error() || status.as_u16() == 429,
            });
        }
        let body: serde_json::Value = resp.json().map_err(|e| ChatError {
            message: format!("malformed response: {e}"),
            retryable: false,
        })?;
        body["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_owned)
            .ok_or_else(|| ChatError {
                message: "response has no choices[0].message.content".into(),
                retryable: false,
            })
    }

    /// Any HTTP answer proves the endpoint is reachable.
    fn preflight(&self) -> Result<(), RunnerError> {
        let mut rb = self.client.get(format!(
            "{}/models",
            self.cfg.base_url.trim_end_matches('/')
        ));
        if let Some(t) = &self.token {
            rb = rb.bearer_auth(t);
        }
        rb.send().map(|_| ()).map_err(|e| {
            RunnerError::Config(format!("endpoint {} unreachable: {e}", self.cfg.base_url))
        })
    }
}

/// Stops workers from picking up new samples once set.
#[derive(Debug, Clone, Default)]
pub struct CancelToken(Arc<AtomicBool>);

impl CancelToken {
    pub fn cancel(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_cancelled(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct RunSummary {
    pub completed: usize,
    pub failed: usize,
    pub skipped: usize,
}

/// Sample ids already present in a response file. Torn or malformed lines
/// (e.g. from an interrupted write) are ignored.
pub fn existing_ids(path: &Path) -> Result<HashSet<String>, RunnerError> {
    let mut ids = HashSet::new();
    let f = match fs::File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(ids),
        Err(source) => {
            return Err(RunnerError::File {
                path: path.to_owned(),
                source,
            })
        }
    };
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|source| RunnerError::File {
            path: path.to_owned(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<ResponseRecord>(&line) {
            Ok(r) => {
                ids.insert(r.sample_id);
            }
            Err(_) => warn!("{}:{}: ignoring unreadable line", path.display(), i + 1),
        }
    }
    Ok(ids)
}

fn load_frames(media_dir: &Path, sample_id: &str, wanted: usize) -> Vec<Vec<u8>> {
    let dir = media_dir.join(sample_id);
    let Ok(entries) = fs::read_dir(&dir) else {
        return Vec::new();
    };
    let mut files: Vec<PathBuf> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("frame_") && n.ends_with(".jpg"))
        })
        .collect();
    files.sort();
    select_frame_indices(files.len(), wanted)
        .into_iter()
        .filter_map(|i| match fs::read(&files[i]) {
            Ok(b) => Some(b),
            Err(e) => {
                warn!("{}: {e}", files[i].display());
                None
            }
        })
        .collect()
}

fn instruction_text(sample: &Sample, cfg: &EndpointConfig) -> String {
    match &cfg.duration_hint {
        Some(h) => format!(
            "{}{}",
            h.replace("{duration}", &format!("{:.1}", sample.duration)),
            sample.instruction
        ),
        None => sample.instruction.clone(),
    }
}

fn query(
    sample: &Sample,
    client: &dyn ChatClient,
    cfg: &EndpointConfig,
    media: Option<&Path>,
) -> ResponseRecord {
    let req = ChatRequest {
        text: instruction_text(sample, cfg),
        images: media
            .map(|m| load_frames(m, &sample.id, cfg.frames))
            .unwrap_or_default(),
    };
    let start = Instant::now();
    let mut attempts = 0;
    loop {
        attempts += 1;
        match client.complete(&req) {
            Ok(text) => {
                return ResponseRecord {
                    sample_id: sample.id.clone(),
                    raw_text: text,
                    model: cfg.model.clone(),
                    latency_ms: start.elapsed().as_millis() as u64,
                    attempts,
                    error: None,
                }
            }
            Err(e) if e.retryable && attempts <= cfg.max_retries => {
                std::thread::sleep(cfg.backoff(attempts - 1));
            }
            Err(e) => {
                return ResponseRecord {
                    sample_id: sample.id.clone(),
                    raw_text: String::new(),
                    model: cfg.model.clone(),
                    latency_ms: start.elapsed().as_millis() as u64,
                    attempts,
                    error: Some(e.message),
                }
            }
        }
    }
}

/// Queries every sample that has no record in `out_path` yet and appends one
/// record per sample. Per-sample failures are recorded, not raised.
pub fn run_batch(
    manifest: &[Sample],
    client: &dyn ChatClient,
    cfg: &EndpointConfig,
    media_dir: Option<&Path>,
    out_path: &Path,
    cancel: &CancelToken,
) -> Result<RunSummary, RunnerError> {
    cfg.validate()?;
    let done = existing_ids(out_path)?;
    let pending: Vec<&Sample> = manifest.iter().filter(|s| !done.contains(&s.id)).collect();
    let mut summary = RunSummary {
        skipped: manifest.len() - pending.len(),
        ..Default::default()
    };
    if pending.is_empty() {
        return Ok(summary);
    }
    client.preflight()?;
    let mut out = open_append(out_path)?;
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<ResponseRecord>();
    let write_err = std::thread::scope(|s| {
        for _ in 0..cfg.max_in_flight.min(pending.len()) {
            let tx = tx.clone();
            let (next, pending) = (&next, &pending);
            s.spawn(move || loop {
                if cancel.is_cancelled() {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(sample) = pending.get(i) else { break };
                if tx.send(query(sample, client, cfg, media_dir)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for rec in rx {
            let line = serde_json::to_string(&rec).expect("record serializes");
            if let Err(source) = writeln!(out, "{line}").and_then(|_| out.flush()) {
                cancel.cancel();
                return Some(source);
            }
            if rec.error.is_some() {
                summary.failed += 1;
            } else {
                summary.completed += 1;
            }
        }
        None
    });
    if let Some(source) = write_err {
        return Err(RunnerError::File {
            path: out_path.to_owned(),
            source,
        });
    }
    info!(
        "run finished: {} completed, {} failed, {} skipped",
        summary.completed, summary.failed, summary.skipped
    );
    Ok(summary)
}
