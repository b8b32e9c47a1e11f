//! Domain types shared by every stage of the pipeline.
//!
//! Everything here is plain data: immutable after construction and `Send + Sync`,
//! so feature stores and score tables can be shared freely between readers.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TypeError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("confusion matrix is not square: {rows} rows, row {row} has {cols} entries")]
    NotSquare { rows: usize, row: usize, cols: usize },
    #[error("invalid score table: {0}")]
    InvalidTable(String),
}

/// Dense embedding or pooled feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FeatureVector {
    values: Vec<f64>,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self, TypeError> {
        if values.is_empty() {
            return Err(TypeError::Empty("feature vector"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(TypeError::NonFinite(i));
        }
        Ok(Self { values })
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "feature vector dim must be positive");
        Self {
            values: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.values.iter().map(|&v| v as f32).collect()
    }
}

impl TryFrom<Vec<f64>> for FeatureVector {
    type Error = TypeError;
    fn try_from(v: Vec<f64>) -> Result<Self, TypeError> {
        Self::new(v)
    }
}

impl From<FeatureVector> for Vec<f64> {
    fn from(v: FeatureVector) -> Self {
        v.values
    }
}

/// Spatial feature map stored row-major as `h × w × c` (channel fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    h: usize,
    w: usize,
    c: usize,
    values: Vec<f64>,
}

impl FeatureMap {
    pub fn new(h: usize, w: usize, c: usize, values: Vec<f64>) -> Result<Self, TypeError> {
        if h == 0 || w == 0 || c == 0 {
            return Err(TypeError::Empty("feature map extent"));
        }
        if values.len() != h * w * c {
            return Err(TypeError::DimMismatch {
                expected: h * w * c,
                actual: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(TypeError::NonFinite(i));
        }
        Ok(Self { h, w, c, values })
    }

    pub fn from_fn(h: usize, w: usize, c: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self, TypeError> {
        let mut values = Vec::with_capacity(h * w * c);
        for i in 0..h {
            for j in 0..w {
                for k in 0..c {
                    values.push(f(i, j, k));
                }
            }
        }
        Self::new(h, w, c, values)
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.h, self.w, self.c)
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[(i * self.w + j) * self.c + k]
    }

    /// Channel vector at pixel `(i, j)`.
    pub fn pixel(&self, i: usize, j: usize) -> &[f64] {
        let start = (i * self.w + j) * self.c;
        &self.values[start..start + self.c]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// `n × n` count matrix; entry `(i, j)` counts ground-truth class `i` predicted as `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    n: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            counts: vec![0; n * n],
        }
    }

    pub fn from_rows(rows: Vec<Vec<u64>>) -> Result<Self, TypeError> {
        let n = rows.len();
        if n == 0 {
            return Err(TypeError::Empty("confusion matrix"));
        }
        let mut counts = Vec::with_capacity(n * n);
        for (r, row) in rows.into_iter().enumerate() {
            if row.len() != n {
                return Err(TypeError::NotSquare {
                    rows: n,
                    row: r,
                    cols: row.len(),
                });
            }
            counts.extend(row);
        }
        Ok(Self { n, counts })
    }

    pub fn n_classes(&self) -> usize {
        self.n
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.n + predicted]
    }

    pub fn increment(&mut self, truth: usize, predicted: usize) {
        self.counts[truth * self.n + predicted] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u64]> {
        self.counts.chunks(self.n.max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => f.write_str("train"),
            Split::Test => f.write_str("test"),
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

/// One image patch: provenance, split assignment, and per-method OA labels.
///
/// Maps are `BTreeMap` so that serialization order is stable across runs.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityRecord {
    pub patch_id: String,
    pub dataset_tag: String,
    pub split: Split,
    pub labels: BTreeMap<String, f64>,
    pub feature_refs: BTreeMap<String, String>,
}

/// Image × method matrix of scores. Row and column order is canonical and is
/// what tie-breaking in recommendation refers to.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    image_ids: Vec<String>,
    method_ids: Vec<String>,
    scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    NonFinite { image: String, method: String },
    DuplicateImage { image: String },
    DuplicateMethod { method: String },
    RowLength { image: String, expected: usize, actual: usize },
    NoImages,
    NoMethods,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonFinite { image, method } => write!(f, "non-finite score at ({image}, {method})"),
            Violation::DuplicateImage { image } => write!(f, "duplicate image id {image}"),
            Violation::DuplicateMethod { method } => write!(f, "duplicate method id {method}"),
            Violation::RowLength { image, expected, actual } => {
                write!(f, "row {image} has {actual} cells, expected {expected}")
            }
            Violation::NoImages => f.write_str("table has no images"),
            Violation::NoMethods => f.write_str("table has no methods"),
        }
    }
}

impl ScoreTable {
    /// Builds a table without checking invariants; see [`validate_score_table`].
    pub fn from_rows_unchecked(image_ids: Vec<String>, method_ids: Vec<String>, rows: Vec<Vec<f64>>) -> Self {
        let width = method_ids.len();
        let mut scores = Vec::with_capacity(rows.len() * width);
        for row in rows {
            let mut row = row;
            row.resize(width, f64::NAN);
            scores.extend(row);
        }
        Self {
            image_ids,
            method_ids,
            scores,
        }
    }

    pub fn from_rows(image_ids: Vec<String>, method_ids: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self, TypeError> {
        if rows.len() != image_ids.len() {
            return Err(TypeError::DimMismatch {
                expected: image_ids.len(),
                actual: rows.len(),
            });
        }
        let mut violations = Vec::new();
        for (id, row) in image_ids.iter().zip(&rows) {
            if row.len() != method_ids.len() {
                violations.push(Violation::RowLength {
                    image: id.clone(),
                    expected: method_ids.len(),
                    actual: row.len(),
                });
            }
        }
        let table = Self::from_rows_unchecked(image_ids, method_ids, rows);
        violations.extend(validate_score_table(&table));
        if violations.is_empty() {
            Ok(table)
        } else {
            let msg: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            Err(TypeError::InvalidTable(msg.join("; ")))
        }
    }

    pub fn image_ids(&self) -> &[String] {
        &self.image_ids
    }

    pub fn method_ids(&self) -> &[String] {
        &self.method_ids
    }

    pub fn n_images(&self) -> usize {
        self.image_ids.len()
    }

    pub fn n_methods(&self) -> usize {
        self.method_ids.len()
    }

    pub fn row(&self, image: usize) -> &[f64] {
        let w = self.method_ids.len();
        &self.scores[image * w..(image + 1) * w]
    }

    pub fn get(&self, image: usize, method: usize) -> f64 {
        self.row(image)[method]
    }

    pub fn rows(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.image_ids.iter().map(String::as_str).zip(self.scores.chunks(self.method_ids.len().max(1)))
    }

    pub fn column(&self, method: usize) -> Vec<f64> {
        (0..self.n_images()).map(|i| self.get(i, method)).collect()
    }

    pub fn method_index(&self, method_id: &str) -> Option<usize> {
        self.method_ids.iter().position(|m| m == method_id)
    }

    pub fn image_index(&self, image_id: &str) -> Option<usize> {
        self.image_ids.iter().position(|m| m == image_id)
    }
}

/// Reports every invariant violation of a score table. Never fails.
pub fn validate_score_table(t: &ScoreTable) -> Vec<Violation> {
    let mut out = Vec::new();
    if t.image_ids.is_empty() {
        out.push(Violation::NoImages);
    }
    if t.method_ids.is_empty() {
        out.push(Violation::NoMethods);
    }
    let mut seen = HashSet::new();
    for id in &t.image_ids {
        if !seen.insert(id.as_str()) {
            out.push(Violation::DuplicateImage { image: id.clone() });
        }
    }
    let mut seen = HashSet::new();
    for id in &t.method_ids {
        if !seen.insert(id.as_str()) {
            out.push(Violation::DuplicateMethod { method: id.clone() });
        }
    }
    if t.scores.len() != t.image_ids.len() * t.method_ids.len() {
        return out;
    }
    for (image, row) in t.rows() {
        for (method, v) in t.method_ids.iter().zip(row) {
            if !v.is_finite() {
                out.push(Violation::NonFinite {
                    image: image.to_string(),
                    method: method.clone(),
                });
            }
        }
    }
    out
}

/// Root of all randomness. Derived streams are keyed so that adding a new
/// consumer does not perturb existing ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RngSeed(pub u64);

impl RngSeed {
    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    /// Independent stream for a named consumer.
    pub fn derive(self, stream: &str) -> RngSeed {
        // FNV-1a over the stream name, mixed with the seed
        let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ self.0;
        for b in stream.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        RngSeed(h)
    }

    pub fn stream(self, stream: &str) -> ChaCha8Rng {
        self.derive(stream).rng()
    }
}

impl Default for RngSeed {
    fn default() -> Self {
        RngSeed(0)
    }
}
