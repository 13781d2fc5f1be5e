//! Vision-language model clients: a deterministic local mock and a
//! remote HTTP adapter, plus batch partitioning, bounded-concurrency
//! dispatch, and retry with exponential backoff.
//!
//! Queries are split into contiguous batches mainly to keep any one
//! request burst bounded; within a batch each query is an independent
//! request, with at most [`MAX_IN_FLIGHT`] in flight at once.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use base64::Engine;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::imaging::RasterImage;
use crate::labels::{AliasTable, ClassLabel};
use crate::prompting::{predict, Prompt, PromptPart};

/// Environment variable holding the remote backend credential.
pub const ENV_API_KEY: &str = "VLM_API_KEY";

/// Upper bound on concurrent in-flight requests within one batch.
pub const MAX_IN_FLIGHT: usize = 4;

#[derive(Debug, thiserror::Error)]
pub enum VlmError {
    #[error("environment variable VLM_API_KEY is not set")]
    MissingCredential,
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("HTTP status {status}")]
    Http { status: u16 },
    #[error("malformed response: {0}")]
    BadResponse(String),
    #[error("injected mock failure")]
    Injected,
    #[error("prompt has no query image")]
    NoQueryImage,
    #[error("image encoding failed: {0}")]
    Encode(String),
}

/// The remote credential. Deliberately opaque: `Debug` redacts, there is
/// no `Display`, and the secret only leaves this type inside the HTTP
/// authorization header.
pub struct ApiKey(String);

impl ApiKey {
    pub fn new(secret: impl Into<String>) -> Self {
        ApiKey(secret.into())
    }

    pub fn from_env() -> Result<Self, VlmError> {
        match std::env::var(ENV_API_KEY) {
            Ok(v) if !v.trim().is_empty() => Ok(ApiKey(v)),
            _ => Err(VlmError::MissingCredential),
        }
    }

    fn reveal(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for ApiKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ApiKey(redacted)")
    }
}

/// Exponential backoff schedule: 1 s, 2 s, 4 s with the defaults.
#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub base_delay: Duration,
    pub backoff_factor: u32,
    pub max_retries: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            base_delay: Duration::from_secs(1),
            backoff_factor: 2,
            max_retries: 3,
        }
    }
}

impl RetryPolicy {
    /// Total tries including the first: max_retries + 1.
    pub fn max_attempts(&self) -> u32 {
        self.max_retries + 1
    }

    /// Delay before the next try once `failed` attempts (>= 1) have failed.
    pub fn delay_after(&self, failed: u32) -> Duration {
        self.base_delay * self.backoff_factor.saturating_pow(failed.saturating_sub(1))
    }
}

/// Retry clock seam: tests record requested delays instead of sleeping.
pub trait Sleeper: Sync {
    fn sleep(&self, d: Duration);
}

/// Production clock.
pub struct ThreadSleeper;

impl Sleeper for ThreadSleeper {
    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// One classification request: a stable id plus the assembled prompt.
#[derive(Debug, Clone)]
pub struct Query {
    pub id: String,
    pub prompt: Prompt,
}

/// A contiguous slice of the global query order.
#[derive(Debug, Clone)]
pub struct QueryBatch {
    pub index: usize,
    pub queries: Vec<Query>,
}

/// Splits queries into at most `batch_count` contiguous batches whose
/// sizes differ by at most one, larger batches first. Fewer queries than
/// batches yields one singleton batch per query; empty batches are never
/// emitted.
pub fn make_batches(queries: Vec<Query>, batch_count: usize) -> Vec<QueryBatch> {
    let n = queries.len();
    if n == 0 {
        return Vec::new();
    }
    let b = batch_count.max(1).min(n);
    let small = n / b;
    let remainder = n % b;
    let mut out = Vec::with_capacity(b);
    let mut iter = queries.into_iter();
    for index in 0..b {
        let take = if index < remainder { small + 1 } else { small };
        out.push(QueryBatch {
            index,
            queries: iter.by_ref().take(take).collect(),
        });
    }
    out
}

/// Outcome for one query. `label` is None when the response text did not
/// normalize to a canonical class (including exhausted retries, whose
/// error text lands in `raw_text`).
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ClassificationResult {
    pub query_id: String,
    pub raw_text: String,
    pub label: Option<ClassLabel>,
    pub latency_seconds: f64,
    pub attempts: u32,
}

/// Stable content fingerprint of an image: hex SHA-256 of its PGM bytes.
/// Mock rules key on this so tests can pin responses without inlining
/// pixels.
pub fn fingerprint(image: &RasterImage) -> String {
    let mut h = Sha256::new();
    h.update(image.to_pgm());
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

/// Score map with 1.0 on `label` and 0.0 elsewhere.
pub fn one_hot(label: ClassLabel) -> BTreeMap<ClassLabel, f64> {
    ClassLabel::ALL
        .iter()
        .map(|&l| (l, if l == label { 1.0 } else { 0.0 }))
        .collect()
}

/// Equal score everywhere; predict's tie rule then picks the first
/// canonical label.
pub fn uniform_scores() -> BTreeMap<ClassLabel, f64> {
    ClassLabel::ALL.iter().map(|&l| (l, 1.0)).collect()
}

/// Plausible side-profile length/height ratio per class, used by the
/// geometric mock rule. Values are distinct so the argmax is unique off
/// the midpoints.
fn target_aspect(label: ClassLabel) -> f64 {
    match label {
        ClassLabel::AutoTransporter => 4.5,
        ClassLabel::Bobtail => 2.2,
        ClassLabel::PlatformSu => 2.6,
        ClassLabel::TankTank => 4.8,
        ClassLabel::Container => 4.2,
        ClassLabel::DumpTankSemi => 4.0,
        ClassLabel::EnclosedVanSemi => 4.4,
        ClassLabel::EnclosedVanSu => 2.4,
        ClassLabel::LowBoyPlatform => 4.6,
        ClassLabel::PassengerVehicle => 2.8,
        ClassLabel::PickupUtilityService => 3.0,
        ClassLabel::PlatformSemi => 5.0,
    }
}

/// Scores each class by closeness between its target aspect ratio and
/// the lit-pixel bounding box's width/height ratio. Blank images fall
/// back to uniform scores.
pub fn aspect_ratio_scores(image: &RasterImage) -> BTreeMap<ClassLabel, f64> {
    let mut min_row = usize::MAX;
    let mut max_row = 0usize;
    let mut min_col = usize::MAX;
    let mut max_col = 0usize;
    let mut any = false;
    for row in 0..image.height {
        for col in 0..image.width {
            if image.get(row, col) != 0 {
                any = true;
                min_row = min_row.min(row);
                max_row = max_row.max(row);
                min_col = min_col.min(col);
                max_col = max_col.max(col);
            }
        }
    }
    if !any {
        return uniform_scores();
    }
    let ratio = (max_col - min_col + 1) as f64 / (max_row - min_row + 1) as f64;
    ClassLabel::ALL
        .iter()
        .map(|&l| (l, -(ratio - target_aspect(l)).abs()))
        .collect()
}

/// How the mock turns a query image into scores.
#[derive(Debug, Clone)]
pub enum MockRule {
    /// Pinned scores per image fingerprint; unknown fingerprints score
    /// uniformly.
    Table(HashMap<String, BTreeMap<ClassLabel, f64>>),
    /// Every class equal; the tie rule answers.
    Uniform,
    /// Geometric rule on the lit-pixel bounding box.
    AspectRatio,
}

/// Scores the query image of `prompt` under `rule`. This is the mock's
/// entire scoring function, exposed so tests can compare against
/// independent reimplementations.
pub fn mock_score(prompt: &Prompt, rule: &MockRule) -> Result<BTreeMap<ClassLabel, f64>, VlmError> {
    let image = prompt.query_image().ok_or(VlmError::NoQueryImage)?;
    Ok(match rule {
        MockRule::Table(table) => table
            .get(&fingerprint(image))
            .cloned()
            .unwrap_or_else(uniform_scores),
        MockRule::Uniform => uniform_scores(),
        MockRule::AspectRatio => aspect_ratio_scores(image),
    })
}

/// Deterministic local backend. Pure given the prompt bytes, except for
/// the failure plan, which tests use to exercise the retry path.
pub struct MockBackend {
    rule: MockRule,
    /// Remaining forced failures per image fingerprint; u32::MAX means
    /// fail forever.
    fail_plan: Mutex<HashMap<String, u32>>,
}

impl MockBackend {
    pub fn new(rule: MockRule) -> Self {
        MockBackend {
            rule,
            fail_plan: Mutex::new(HashMap::new()),
        }
    }

    pub fn with_table(table: HashMap<String, BTreeMap<ClassLabel, f64>>) -> Self {
        Self::new(MockRule::Table(table))
    }

    /// Forces the next `n` sends for this fingerprint to fail.
    pub fn fail_times(&self, fingerprint: &str, n: u32) {
        self.fail_plan
            .lock()
            .unwrap()
            .insert(fingerprint.to_string(), n);
    }

    pub fn fail_forever(&self, fingerprint: &str) {
        self.fail_times(fingerprint, u32::MAX);
    }

    fn send(&self, prompt: &Prompt) -> Result<String, VlmError> {
        let image = prompt.query_image().ok_or(VlmError::NoQueryImage)?;
        let fp = fingerprint(image);
        {
            let mut plan = self.fail_plan.lock().unwrap();
            if let Some(remaining) = plan.get_mut(&fp) {
                if *remaining == u32::MAX {
                    return Err(VlmError::Injected);
                }
                if *remaining > 0 {
                    *remaining -= 1;
                    return Err(VlmError::Injected);
                }
            }
        }
        let scores = mock_score(prompt, &self.rule)?;
        let label = predict(&scores).map_err(|e| VlmError::BadResponse(e.to_string()))?;
        Ok(label.as_str().to_string())
    }
}

/// Remote HTTP adapter. One POST per query to
/// `{endpoint}/{model}:generateContent` carrying interleaved text parts
/// and base64 PNG image parts; the credential travels only in the
/// x-goog-api-key header, never in the URL or body.
pub struct RemoteBackend {
    endpoint: String,
    model: String,
    key: ApiKey,
    agent: ureq::Agent,
}

impl fmt::Debug for RemoteBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RemoteBackend")
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .field("key", &self.key)
            .finish()
    }
}

impl RemoteBackend {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, key: ApiKey) -> Self {
        RemoteBackend {
            endpoint: endpoint.into(),
            model: model.into(),
            key,
            agent: ureq::AgentBuilder::new()
                .timeout(Duration::from_secs(60))
                .build(),
        }
    }

    /// Reads the credential from VLM_API_KEY; errors before any request.
    pub fn from_env(endpoint: impl Into<String>, model: impl Into<String>) -> Result<Self, VlmError> {
        Ok(Self::new(endpoint, model, ApiKey::from_env()?))
    }

    fn url(&self) -> String {
        format!(
            "{}/{}:generateContent",
            self.endpoint.trim_end_matches('/'),
            self.model
        )
    }

    fn send(&self, prompt: &Prompt) -> Result<String, VlmError> {
        let body = wire_request(prompt)?;
        let response = self
            .agent
            .post(&self.url())
            .set("x-goog-api-key", self.key.reveal())
            .set("content-type", "application/json")
            .send_json(body);
        match response {
            Ok(r) => {
                let v: serde_json::Value = r
                    .into_json()
                    .map_err(|e| VlmError::BadResponse(e.to_string()))?;
                parse_generate_response(&v)
            }
            Err(ureq::Error::Status(status, _)) => Err(VlmError::Http { status }),
            // Keep transport errors terse (kind only): their Display can
            // embed request details.
            Err(ureq::Error::Transport(t)) => Err(VlmError::Transport(t.kind().to_string())),
        }
    }
}

/// Request body in the common generative-API shape: a single content
/// whose parts alternate text and inline base64 PNG data.
pub(crate) fn wire_request(prompt: &Prompt) -> Result<serde_json::Value, VlmError> {
    let mut parts = Vec::with_capacity(prompt.parts.len());
    for part in &prompt.parts {
        match part {
            PromptPart::Text(t) => parts.push(json!({ "text": t })),
            PromptPart::Image(img) => {
                let png = img.to_png().map_err(|e| VlmError::Encode(e.to_string()))?;
                let data = base64::engine::general_purpose::STANDARD.encode(&png);
                parts.push(json!({
                    "inline_data": { "mime_type": "image/png", "data": data }
                }));
            }
        }
    }
    Ok(json!({ "contents": [{ "parts": parts }] }))
}

/// Pulls the first non-empty text part out of a generate response.
pub(crate) fn parse_generate_response(v: &serde_json::Value) -> Result<String, VlmError> {
    let parts = v
        .get("candidates")
        .and_then(|c| c.get(0))
        .and_then(|c| c.get("content"))
        .and_then(|c| c.get("parts"))
        .and_then(|p| p.as_array())
        .ok_or_else(|| VlmError::BadResponse("no candidates/content/parts".into()))?;
    for part in parts {
        if let Some(text) = part.get("text").and_then(|t| t.as_str()) {
            if !text.trim().is_empty() {
                return Ok(text.to_string());
            }
        }
    }
    Err(VlmError::BadResponse("no text part in response".into()))
}

/// Exactly one backend kind is active per run.
pub enum Backend {
    Mock(MockBackend),
    Remote(RemoteBackend),
}

impl Backend {
    /// One model invocation. Errors are candidates for retry.
    pub fn send(&self, prompt: &Prompt) -> Result<String, VlmError> {
        match self {
            Backend::Mock(m) => m.send(prompt),
            Backend::Remote(r) => r.send(prompt),
        }
    }
}

/// First non-empty response line, normalized against the canonical label
/// set and aliases.
pub fn interpret_response(text: &str, aliases: &AliasTable) -> Option<ClassLabel> {
    let line = text.lines().map(str::trim).find(|l| !l.is_empty())?;
    aliases.normalize(line)
}

fn classify_one(
    query: &Query,
    backend: &Backend,
    policy: &RetryPolicy,
    sleeper: &dyn Sleeper,
    aliases: &AliasTable,
) -> ClassificationResult {
    let start = Instant::now();
    let mut attempts = 0u32;
    loop {
        attempts += 1;
        match backend.send(&query.prompt) {
            Ok(text) => {
                let label = interpret_response(&text, aliases);
                return ClassificationResult {
                    query_id: query.id.clone(),
                    raw_text: text,
                    label,
                    latency_seconds: start.elapsed().as_secs_f64(),
                    attempts,
                };
            }
            Err(err) => {
                if attempts >= policy.max_attempts() {
                    return ClassificationResult {
                        query_id: query.id.clone(),
                        raw_text: format!("<error: {err}>"),
                        label: None,
                        latency_seconds: start.elapsed().as_secs_f64(),
                        attempts,
                    };
                }
                sleeper.sleep(policy.delay_after(attempts));
            }
        }
    }
}

/// Classifies every query in the batch with at most [`MAX_IN_FLIGHT`]
/// requests in flight, retrying per `policy`. Results come back in input
/// order regardless of completion order; a query that exhausts its
/// retries yields an unparseable result, never a panic.
pub fn classify_batch(
    batch: &QueryBatch,
    backend: &Backend,
    policy: &RetryPolicy,
    sleeper: &dyn Sleeper,
) -> Vec<ClassificationResult> {
    let n = batch.queries.len();
    if n == 0 {
        return Vec::new();
    }
    let aliases = AliasTable::builtin();
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<ClassificationResult>>> =
        (0..n).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..MAX_IN_FLIGHT.min(n) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let result = classify_one(&batch.queries[i], backend, policy, sleeper, &aliases);
                *slots[i].lock().unwrap() = Some(result);
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| {
            slot.into_inner()
                .unwrap()
                .expect("every index below n is claimed by exactly one worker")
        })
        .collect()
}
