//! Caption purification: image-text cosine similarity, threshold split into
//! high- and low-quality captions, prompt-driven refinement of the low ones
//! through an external captioning service, and assembly of the result.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::EmbeddingStore;
use crate::types::FeatureVector;

#[derive(Debug, Error)]
pub enum PurifyError {
    #[error("zero-norm vector")]
    ZeroNorm,
    #[error("dimension mismatch: {0} vs {1}")]
    Dim(usize, usize),
    #[error("record {0} has not been scored")]
    Unscored(String),
    #[error("id collision: {0}")]
    Collision(String),
    #[error("no embedding for caption {id} ({which})")]
    MissingEmbedding { id: String, which: &'static str },
    #[error("no similarity scores to derive a threshold from")]
    NoScores,
    #[error("invalid prompt: {0}")]
    Prompt(String),
    #[error("{origin}:{line}: {msg}")]
    Parse { origin: String, line: usize, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quality {
    #[default]
    Unscored,
    High,
    Low,
    Refined,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub original_caption: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub similarity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub image_ref: Option<String>,
    #[serde(skip_serializing_if = "is_zero", default)]
    pub attempts: u32,
    /// Set when refinement exhausted its retries; the caption is then the original.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub refine_error: Option<String>,
}

fn is_zero(v: &u32) -> bool {
    *v == 0
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptionRecord {
    pub id: String,
    pub caption: String,
    pub image_embedding: FeatureVector,
    pub text_embedding: FeatureVector,
    pub similarity: Option<f64>,
    pub quality: Quality,
    pub provenance: Provenance,
}

impl CaptionRecord {
    pub fn new(id: impl Into<String>, caption: impl Into<String>, image: FeatureVector, text: FeatureVector) -> Result<Self, PurifyError> {
        if image.dim() != text.dim() {
            return Err(PurifyError::Dim(image.dim(), text.dim()));
        }
        Ok(Self {
            id: id.into(),
            caption: caption.into(),
            image_embedding: image,
            text_embedding: text,
            similarity: None,
            quality: Quality::Unscored,
            provenance: Provenance::default(),
        })
    }

    pub fn failed(&self) -> bool {
        self.provenance.refine_error.is_some()
    }
}

/// Cosine similarity `v_I · v_T / (‖v_I‖ ‖v_T‖)`, clamped to [-1, 1].
pub fn similarity_score(a: &FeatureVector, b: &FeatureVector) -> Result<f64, PurifyError> {
    if a.dim() != b.dim() {
        return Err(PurifyError::Dim(a.dim(), b.dim()));
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.values().iter().zip(b.values()) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(PurifyError::ZeroNorm);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// Fills in `similarity` for every record.
pub fn score_records(records: &mut [CaptionRecord]) -> Result<(), PurifyError> {
    for r in records.iter_mut() {
        let s = similarity_score(&r.image_embedding, &r.text_embedding)?;
        r.similarity = Some(s);
        r.provenance.similarity = Some(s);
    }
    Ok(())
}

/// Linearly interpolated quantile (the "type 7" definition).
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    Some(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

/// Threshold from the configured value, or the given quantile of the observed scores.
pub fn resolve_threshold(records: &[CaptionRecord], tau: Option<f64>, q: f64) -> Result<f64, PurifyError> {
    if let Some(t) = tau {
        return Ok(t);
    }
    let scores = records
        .iter()
        .map(|r| r.similarity.ok_or_else(|| PurifyError::Unscored(r.id.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    quantile(&scores, q).ok_or(PurifyError::NoScores)
}

/// `SS ≥ τ` goes to high, the rest to low. Order within each side is kept.
pub fn partition_by_threshold(
    records: Vec<CaptionRecord>,
    tau: f64,
) -> Result<(Vec<CaptionRecord>, Vec<CaptionRecord>), PurifyError> {
    let mut high = Vec::new();
    let mut low = Vec::new();
    for mut r in records {
        let s = r.similarity.ok_or_else(|| PurifyError::Unscored(r.id.clone()))?;
        if s >= tau {
            r.quality = Quality::High;
            high.push(r);
        } else {
            r.quality = Quality::Low;
            low.push(r);
        }
    }
    Ok((high, low))
}

// ---------------------------------------------------------------------------
// Prompts

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefinementPrompt {
    pub instruction: String,
    /// Must contain the `[title]` slot.
    pub metacaption: String,
    pub example: String,
}

pub const TITLE_SLOT: &str = "[title]";

impl Default for RefinementPrompt {
    fn default() -> Self {
        Self {
            instruction: "Generate a brief description of the remote sensing image, highlighting key features such as the terrain, environment, layout, or other notable elements visible in the image.".into(),
            metacaption: "Description data of the image (insert the following data based on the actual image): [title]".into(),
            example: "A satellite image of a coastal city with a network of roads, high-rise buildings, and a large harbor area.".into(),
        }
    }
}

impl RefinementPrompt {
    pub fn validate(&self) -> Result<(), PurifyError> {
        if self.instruction.trim().is_empty() {
            return Err(PurifyError::Prompt("instruction is empty".into()));
        }
        if !self.metacaption.contains(TITLE_SLOT) {
            return Err(PurifyError::Prompt(format!("metacaption has no {TITLE_SLOT} slot")));
        }
        Ok(())
    }
}

pub fn build_prompt(record: &CaptionRecord, p: &RefinementPrompt) -> String {
    format!(
        "Instruction: {}\nMetacaption: {}\nExample: {}",
        p.instruction,
        p.metacaption.replace(TITLE_SLOT, &record.caption),
        p.example
    )
}

// ---------------------------------------------------------------------------
// Caption service clients

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionRequest {
    pub id: String,
    pub image_ref: String,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionResponse {
    pub caption: String,
}

/// External captioning service. Errors are transient from the caller's
/// point of view and are retried.
pub trait CaptionClient: Send + Sync {
    fn caption(&self, req: &CaptionRequest) -> Result<String, String>;
}

/// JSON over HTTP: `POST {id, image_ref, prompt}` → `{caption}`.
pub struct HttpCaptionClient {
    endpoint: String,
    agent: ureq::Agent,
}

impl HttpCaptionClient {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        Self {
            endpoint: endpoint.into(),
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        }
    }
}

impl CaptionClient for HttpCaptionClient {
    fn caption(&self, req: &CaptionRequest) -> Result<String, String> {
        let resp = self
            .agent
            .post(&self.endpoint)
            .send_json(req)
            .map_err(|e| e.to_string())?;
        let body: CaptionResponse = resp.into_json().map_err(|e| e.to_string())?;
        Ok(body.caption)
    }
}

/// Scriptable in-process client. Per-id scripts are consumed first; once a
/// script runs out the default behaviour applies.
pub struct MockCaptionClient {
    default: MockBehavior,
    scripts: Mutex<HashMap<String, VecDeque<Result<String, String>>>>,
    calls: Mutex<HashMap<String, u32>>,
}

#[derive(Debug, Clone)]
pub enum MockBehavior {
    /// Returns `prefix + id`.
    Echo(String),
    Fail(String),
}

impl MockCaptionClient {
    pub fn new(default: MockBehavior) -> Self {
        Self {
            default,
            scripts: Mutex::new(HashMap::new()),
            calls: Mutex::new(HashMap::new()),
        }
    }

    pub fn echo(prefix: &str) -> Self {
        Self::new(MockBehavior::Echo(prefix.to_string()))
    }

    pub fn script(self, id: &str, outcomes: Vec<Result<String, String>>) -> Self {
        self.scripts.lock().unwrap().insert(id.to_string(), outcomes.into());
        self
    }

    /// Fails `n` times for `id`, then falls back to the default behaviour.
    pub fn fail_first(self, id: &str, n: usize) -> Self {
        self.script(id, (0..n).map(|i| Err(format!("scripted failure {}", i + 1))).collect())
    }

    pub fn calls(&self, id: &str) -> u32 {
        self.calls.lock().unwrap().get(id).copied().unwrap_or(0)
    }
}

impl CaptionClient for MockCaptionClient {
    fn caption(&self, req: &CaptionRequest) -> Result<String, String> {
        *self.calls.lock().unwrap().entry(req.id.clone()).or_default() += 1;
        if let Some(next) = self.scripts.lock().unwrap().get_mut(&req.id).and_then(|q| q.pop_front()) {
            return next;
        }
        match &self.default {
            MockBehavior::Echo(prefix) => Ok(format!("{prefix}{}", req.id)),
            MockBehavior::Fail(msg) => Err(msg.clone()),
        }
    }
}

// ---------------------------------------------------------------------------
// Refinement

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub backoff_factor: f64,
    pub max_in_flight: usize,
    pub timeout_ms: u64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            max_retries: 3,
            backoff_ms: 200,
            backoff_factor: 2.0,
            max_in_flight: 4,
            timeout_ms: 30_000,
        }
    }
}

impl RefineConfig {
    /// Delay before retry number `retry` (1-based).
    pub fn backoff(&self, retry: u32) -> Duration {
        let ms = self.backoff_ms as f64 * self.backoff_factor.powi(retry as i32 - 1);
        Duration::from_millis(ms.round() as u64)
    }
}

fn refine_one(record: &mut CaptionRecord, client: &dyn CaptionClient, prompt: &RefinementPrompt, cfg: &RefineConfig) {
    let req = CaptionRequest {
        id: record.id.clone(),
        image_ref: record.provenance.image_ref.clone().unwrap_or_else(|| record.id.clone()),
        prompt: build_prompt(record, prompt),
    };
    let mut last_err = String::new();
    for attempt in 1..=cfg.max_retries + 1 {
        if attempt > 1 {
            std::thread::sleep(cfg.backoff(attempt - 1));
        }
        record.provenance.attempts = attempt;
        match client.caption(&req) {
            Ok(caption) => {
                record.provenance.original_caption = Some(std::mem::replace(&mut record.caption, caption));
                record.quality = Quality::Refined;
                record.provenance.refine_error = None;
                return;
            }
            Err(e) => {
                log::warn!("caption request for {} failed (attempt {attempt}): {e}", record.id);
                last_err = e;
            }
        }
    }
    record.provenance.refine_error = Some(last_err);
}

/// Sends every record through the caption service with at most
/// `max_in_flight` concurrent requests. Output order matches input order;
/// records that exhaust their retries keep their caption and carry
/// `provenance.refine_error`.
pub fn refine_captions(
    low: Vec<CaptionRecord>,
    client: &dyn CaptionClient,
    prompt: &RefinementPrompt,
    cfg: &RefineConfig,
) -> Vec<CaptionRecord> {
    let n = low.len();
    let slots: Vec<Mutex<CaptionRecord>> = low.into_iter().map(Mutex::new).collect();
    let next = AtomicUsize::new(0);
    let workers = cfg.max_in_flight.clamp(1, n.max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                refine_one(&mut slots[i].lock().unwrap(), client, prompt, cfg);
            });
        }
    });
    slots.into_iter().map(|m| m.into_inner().unwrap()).collect()
}

// ---------------------------------------------------------------------------
// Assembly and I/O

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PurifiedCounts {
    pub high: usize,
    pub refined: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PurifiedDataset {
    pub records: Vec<CaptionRecord>,
    pub counts: PurifiedCounts,
}

/// Disjoint union of the high-quality and refined records. Records whose
/// refinement failed are kept and counted separately.
pub fn assemble_purified(high: Vec<CaptionRecord>, refined: Vec<CaptionRecord>) -> Result<PurifiedDataset, PurifyError> {
    let mut seen = HashSet::new();
    for r in high.iter().chain(&refined) {
        if !seen.insert(r.id.as_str()) {
            return Err(PurifyError::Collision(r.id.clone()));
        }
    }
    let failed = refined.iter().filter(|r| r.failed()).count();
    let counts = PurifiedCounts {
        high: high.len(),
        refined: refined.len() - failed,
        failed,
    };
    let mut records = high;
    records.extend(refined);
    Ok(PurifiedDataset { records, counts })
}

/// One line of the caption JSONL format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionLine {
    pub id: String,
    pub caption: String,
    #[serde(default)]
    pub quality: Quality,
    #[serde(default)]
    pub provenance: Provenance,
}

impl From<&CaptionRecord> for CaptionLine {
    fn from(r: &CaptionRecord) -> Self {
        Self {
            id: r.id.clone(),
            caption: r.caption.clone(),
            quality: r.quality,
            provenance: r.provenance.clone(),
        }
    }
}

pub fn write_captions<'a>(records: impl IntoIterator<Item = &'a CaptionRecord>, out: &mut impl Write) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut *out, &CaptionLine::from(r))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_caption_lines(reader: impl Read, origin: &str) -> Result<Vec<CaptionLine>, PurifyError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|source| PurifyError::Io {
            path: origin.to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| PurifyError::Parse {
            origin: origin.to_string(),
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn load_caption_lines(path: &Path) -> Result<Vec<CaptionLine>, PurifyError> {
    let f = File::open(path).map_err(|source| PurifyError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_caption_lines(f, &path.display().to_string())
}

pub fn save_captions(records: &[CaptionRecord], path: &Path) -> Result<(), PurifyError> {
    let io = |source| PurifyError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    write_captions(records, &mut w).map_err(io)?;
    w.flush().map_err(io)
}

/// Joins caption lines with image and text embeddings by id.
pub fn join_records(
    lines: Vec<CaptionLine>,
    images: &EmbeddingStore,
    texts: &EmbeddingStore,
) -> Result<Vec<CaptionRecord>, PurifyError> {
    lines
        .into_iter()
        .map(|l| {
            let img = images.get(&l.id).ok_or_else(|| PurifyError::MissingEmbedding {
                id: l.id.clone(),
                which: "image",
            })?;
            let txt = texts.get(&l.id).ok_or_else(|| PurifyError::MissingEmbedding {
                id: l.id.clone(),
                which: "text",
            })?;
            let mut r = CaptionRecord::new(l.id, l.caption, img.clone(), txt.clone())?;
            r.similarity = l.provenance.similarity;
            r.quality = l.quality;
            r.provenance = l.provenance;
            Ok(r)
        })
        .collect()
}

/// Summary written next to the purified captions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PurifyReport {
    pub tau: f64,
    pub tau_source: String,
    pub total: usize,
    pub low: usize,
    pub counts: PurifiedCounts,
    pub attempts: BTreeMap<String, u32>,
}
