//! Patch manifests, train/test splitting and OA label construction.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{ConfusionMatrix, QualityRecord, RngSeed, ScoreTable, Split, TypeError};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("image too small: extent {width}x{height} is smaller than patch size {patch}")]
    ImageTooSmall { width: u32, height: u32, patch: u32 },
    #[error("patch size must be positive")]
    ZeroPatch,
    #[error("empty confusion matrix")]
    EmptyConfusion,
    #[error("no records to split")]
    NoRecords,
    #[error("split ratio ({0}, {1}) must be nonnegative and sum to 1")]
    BadRatio(f64, f64),
    #[error("duplicate patch id {0}")]
    DuplicatePatch(String),
    #[error("missing confusion matrices for: {}", fmt_pairs(.0))]
    MissingPairs(Vec<(String, String)>),
    #[error("label arrays differ in length: {0} vs {1}")]
    LabelShape(usize, usize),
    #[error("label {label} out of range for {n} classes")]
    LabelRange { label: usize, n: usize },
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error(transparent)]
    Type(#[from] TypeError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn fmt_pairs(pairs: &[(String, String)]) -> String {
    pairs.iter().map(|(p, m)| format!("({p}, {m})")).collect::<Vec<_>>().join(", ")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Crop window inside a source image, in pixels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropGeometry {
    pub source_image: String,
    pub x0: u32,
    pub y0: u32,
    pub w: u32,
    pub h: u32,
}

impl CropGeometry {
    /// Stable patch identifier derived from the crop location.
    pub fn patch_id(&self) -> String {
        format!("{}_{}_{}", self.source_image, self.x0, self.y0)
    }

    pub fn overlaps(&self, other: &CropGeometry) -> bool {
        self.source_image == other.source_image
            && self.x0 < other.x0 + other.w
            && other.x0 < self.x0 + self.w
            && self.y0 < other.y0 + other.h
            && other.y0 < self.y0 + self.h
    }
}

/// Non-overlapping `patch × patch` grid anchored at the origin, row-major.
/// Residual margins on the right and bottom are dropped.
pub fn crop_patches(source_image: &str, extent: (u32, u32), patch: u32) -> Result<Vec<CropGeometry>, DatasetError> {
    let (width, height) = extent;
    if patch == 0 {
        return Err(DatasetError::ZeroPatch);
    }
    if width < patch || height < patch {
        return Err(DatasetError::ImageTooSmall { width, height, patch });
    }
    let cols = width / patch;
    let rows = height / patch;
    let mut out = Vec::with_capacity((cols * rows) as usize);
    for r in 0..rows {
        for c in 0..cols {
            out.push(CropGeometry {
                source_image: source_image.to_string(),
                x0: c * patch,
                y0: r * patch,
                w: patch,
                h: patch,
            });
        }
    }
    Ok(out)
}

/// A manifest entry: the quality record plus where it was cropped from.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRecord {
    pub record: QualityRecord,
    pub crop: CropGeometry,
}

impl ManifestRecord {
    pub fn patch_id(&self) -> &str {
        &self.record.patch_id
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
    pub patch_size: u32,
    pub split_ratio: (f64, f64),
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.record.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    pub fn get(&self, patch_id: &str) -> Option<&ManifestRecord> {
        self.records.iter().find(|r| r.record.patch_id == patch_id)
    }

    /// Drops records whose dataset tag is listed, e.g. to exclude a category
    /// of images from a source dataset.
    pub fn exclude_tags(mut self, tags: &[String]) -> Self {
        self.records.retain(|r| !tags.iter().any(|t| t == &r.record.dataset_tag));
        self
    }

    /// Keeps only records for which `keep` returns true.
    pub fn filter(mut self, mut keep: impl FnMut(&ManifestRecord) -> bool) -> Self {
        self.records.retain(|r| keep(r));
        self
    }

    /// Sorted union of method ids that appear in any record's labels.
    pub fn method_ids(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.records.iter().flat_map(|r| r.record.labels.keys()).collect();
        set.into_iter().cloned().collect()
    }
}

/// Number of training records for a split ratio: nearest integer, halves away from zero.
pub fn train_count(n: usize, train_fraction: f64) -> usize {
    ((train_fraction * n as f64).round() as usize).min(n)
}

/// Assigns every record to train or test with a seeded uniform shuffle.
/// Record order in the returned manifest is the input order.
pub fn split_manifest(
    records: Vec<ManifestRecord>,
    patch_size: u32,
    ratio: (f64, f64),
    seed: RngSeed,
) -> Result<DatasetManifest, DatasetError> {
    let (a, b) = ratio;
    if !(a >= 0.0 && b >= 0.0 && (a + b - 1.0).abs() <= 1e-12) {
        return Err(DatasetError::BadRatio(a, b));
    }
    if records.is_empty() {
        return Err(DatasetError::NoRecords);
    }
    let mut seen = HashSet::new();
    for r in &records {
        if !seen.insert(r.record.patch_id.as_str()) {
            return Err(DatasetError::DuplicatePatch(r.record.patch_id.clone()));
        }
    }
    let n = records.len();
    let n_train = train_count(n, a);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed.stream("split"));
    let mut is_train = vec![false; n];
    for &i in &order[..n_train] {
        is_train[i] = true;
    }
    let records = records
        .into_iter()
        .zip(is_train)
        .map(|(mut r, train)| {
            r.record.split = if train { Split::Train } else { Split::Test };
            r
        })
        .collect();
    Ok(DatasetManifest {
        records,
        patch_size,
        split_ratio: ratio,
    })
}

/// Overall accuracy: trace over total count.
pub fn compute_oa(cm: &ConfusionMatrix) -> Result<f64, DatasetError> {
    let total = cm.total();
    if total == 0 {
        return Err(DatasetError::EmptyConfusion);
    }
    Ok(cm.trace() as f64 / total as f64)
}

/// Counts paired per-pixel class labels into a confusion matrix.
pub fn confusion_from_labels(truth: &[usize], predicted: &[usize], n_classes: usize) -> Result<ConfusionMatrix, DatasetError> {
    if truth.len() != predicted.len() {
        return Err(DatasetError::LabelShape(truth.len(), predicted.len()));
    }
    let mut cm = ConfusionMatrix::zeros(n_classes);
    for (&t, &p) in truth.iter().zip(predicted) {
        for label in [t, p] {
            if label >= n_classes {
                return Err(DatasetError::LabelRange { label, n: n_classes });
            }
        }
        cm.increment(t, p);
    }
    Ok(cm)
}

pub type ConfusionSet = BTreeMap<(String, String), ConfusionMatrix>;

/// Builds the image × method OA table. Rows follow manifest order; columns
/// follow `method_ids`.
pub fn build_label_table(
    manifest: &DatasetManifest,
    method_ids: &[String],
    confusions: &ConfusionSet,
) -> Result<ScoreTable, DatasetError> {
    let mut missing = Vec::new();
    let mut rows = Vec::with_capacity(manifest.records.len());
    for r in &manifest.records {
        let mut row = Vec::with_capacity(method_ids.len());
        for m in method_ids {
            match confusions.get(&(r.record.patch_id.clone(), m.clone())) {
                Some(cm) => row.push(compute_oa(cm)?),
                None => {
                    missing.push((r.record.patch_id.clone(), m.clone()));
                    row.push(f64::NAN);
                }
            }
        }
        rows.push(row);
    }
    if !missing.is_empty() {
        return Err(DatasetError::MissingPairs(missing));
    }
    let images = manifest.records.iter().map(|r| r.record.patch_id.clone()).collect();
    Ok(ScoreTable::from_rows(images, method_ids.to_vec(), rows)?)
}

/// Copies OA values from a label table into the records' `labels` maps.
pub fn attach_labels(manifest: &mut DatasetManifest, table: &ScoreTable) {
    for r in &mut manifest.records {
        if let Some(i) = table.image_index(&r.record.patch_id) {
            for (j, m) in table.method_ids().iter().enumerate() {
                r.record.labels.insert(m.clone(), table.get(i, j));
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Manifest JSONL

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestLine {
    patch_id: String,
    source_image: String,
    dataset_tag: String,
    x0: u32,
    y0: u32,
    w: u32,
    h: u32,
    split: Split,
    feature_refs: BTreeMap<String, String>,
    labels: BTreeMap<String, f64>,
}

pub fn write_manifest(manifest: &DatasetManifest, out: &mut impl Write) -> Result<(), DatasetError> {
    let err = |e: std::io::Error| DatasetError::Io {
        path: "<manifest>".into(),
        source: e,
    };
    for r in &manifest.records {
        let line = ManifestLine {
            patch_id: r.record.patch_id.clone(),
            source_image: r.crop.source_image.clone(),
            dataset_tag: r.record.dataset_tag.clone(),
            x0: r.crop.x0,
            y0: r.crop.y0,
            w: r.crop.w,
            h: r.crop.h,
            split: r.record.split,
            feature_refs: r.record.feature_refs.clone(),
            labels: r.record.labels.clone(),
        };
        let s = serde_json::to_string(&line).expect("manifest line serializes");
        out.write_all(s.as_bytes()).map_err(err)?;
        out.write_all(b"\n").map_err(err)?;
    }
    Ok(())
}

pub fn save_manifest(manifest: &DatasetManifest, path: &Path) -> Result<(), DatasetError> {
    let f = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    write_manifest(manifest, &mut w)?;
    w.flush().map_err(io_err(path))
}

/// Reads a manifest. Patch size and split ratio are not part of the line
/// format; patch size is taken from the first record and the ratio is
/// recomputed from the split counts.
pub fn read_manifest(reader: impl Read, origin: &str) -> Result<DatasetManifest, DatasetError> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|source| DatasetError::Io {
            path: origin.to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ManifestLine = serde_json::from_str(&line).map_err(|e| DatasetError::Parse {
            path: origin.to_string(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        if !seen.insert(parsed.patch_id.clone()) {
            return Err(DatasetError::DuplicatePatch(parsed.patch_id));
        }
        if let Some((m, v)) = parsed.labels.iter().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(DatasetError::Parse {
                path: origin.to_string(),
                line: i + 1,
                msg: format!("label {m}={v} outside [0, 1]"),
            });
        }
        records.push(ManifestRecord {
            record: QualityRecord {
                patch_id: parsed.patch_id,
                dataset_tag: parsed.dataset_tag,
                split: parsed.split,
                labels: parsed.labels,
                feature_refs: parsed.feature_refs,
            },
            crop: CropGeometry {
                source_image: parsed.source_image,
                x0: parsed.x0,
                y0: parsed.y0,
                w: parsed.w,
                h: parsed.h,
            },
        });
    }
    let patch_size = records.first().map(|r| r.crop.w).unwrap_or(0);
    let n = records.len().max(1) as f64;
    let train = records.iter().filter(|r| r.record.split == Split::Train).count() as f64;
    Ok(DatasetManifest {
        records,
        patch_size,
        split_ratio: (train / n, 1.0 - train / n),
    })
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest, DatasetError> {
    let f = File::open(path).map_err(io_err(path))?;
    read_manifest(f, &path.display().to_string())
}

// ---------------------------------------------------------------------------
// Confusion-matrix CSV: a "patch_id,method_id,n" header row followed by n
// rows of n counts; blocks are concatenated.

pub fn write_confusions(set: &ConfusionSet, out: &mut impl Write) -> Result<(), DatasetError> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
    let err = |e: csv::Error| DatasetError::Parse {
        path: "<confusion>".into(),
        line: 0,
        msg: e.to_string(),
    };
    for ((patch, method), cm) in set {
        let n = cm.n_classes().to_string();
        w.write_record([patch.as_str(), method.as_str(), n.as_str()]).map_err(err)?;
        for row in cm.rows() {
            w.write_record(row.iter().map(|c| c.to_string())).map_err(err)?;
        }
    }
    w.flush().map_err(|source| DatasetError::Io {
        path: "<confusion>".into(),
        source,
    })
}

pub fn read_confusions(reader: impl Read, origin: &str) -> Result<ConfusionSet, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(reader);
    let mut out = ConfusionSet::new();
    let mut records = rdr.records();
    let perr = |line: usize, msg: String| DatasetError::Parse {
        path: origin.to_string(),
        line,
        msg,
    };
    let mut line = 0usize;
    while let Some(head) = records.next() {
        line += 1;
        let head = head.map_err(|e| perr(line, e.to_string()))?;
        if head.len() != 3 {
            return Err(perr(line, format!("expected header patch_id,method_id,n; got {} fields", head.len())));
        }
        let patch = head[0].to_string();
        let method = head[1].to_string();
        let n: usize = head[2].trim().parse().map_err(|_| perr(line, format!("bad class count {:?}", &head[2])))?;
        let mut rows = Vec::with_capacity(n);
        for _ in 0..n {
            line += 1;
            let row = records
                .next()
                .ok_or_else(|| perr(line, "truncated confusion matrix".into()))?
                .map_err(|e| perr(line, e.to_string()))?;
            let parsed: Result<Vec<u64>, _> = row.iter().map(|c| c.trim().parse::<u64>()).collect();
            let parsed = parsed.map_err(|e| perr(line, format!("bad count: {e}")))?;
            if parsed.len() != n {
                return Err(perr(line, format!("expected {n} counts, got {}", parsed.len())));
            }
            rows.push(parsed);
        }
        let cm = ConfusionMatrix::from_rows(rows)?;
        if out.insert((patch.clone(), method.clone()), cm).is_some() {
            return Err(perr(line, format!("duplicate matrix for ({patch}, {method})")));
        }
    }
    Ok(out)
}

pub fn load_confusions(path: &Path) -> Result<ConfusionSet, DatasetError> {
    let f = File::open(path).map_err(io_err(path))?;
    read_confusions(f, &path.display().to_string())
}

// ---------------------------------------------------------------------------
// Score/label table CSV: header "patch_id,<method>,..." then one row per patch.

pub fn write_score_table(table: &ScoreTable, out: &mut impl Write) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["patch_id".to_string()];
    header.extend(table.method_ids().iter().cloned());
    w.write_record(&header)?;
    for (id, row) in table.rows() {
        let mut rec = vec![id.to_string()];
        rec.extend(row.iter().map(|v| format!("{v}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_score_table(table: &ScoreTable, path: &Path) -> Result<(), DatasetError> {
    let f = File::create(path).map_err(io_err(path))?;
    write_score_table(table, &mut BufWriter::new(f)).map_err(|e| DatasetError::Parse {
        path: path.display().to_string(),
        line: 0,
        msg: e.to_string(),
    })
}

pub fn read_score_table(reader: impl Read, origin: &str) -> Result<ScoreTable, DatasetError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let perr = |line: usize, msg: String| DatasetError::Parse {
        path: origin.to_string(),
        line,
        msg,
    };
    let headers = rdr.headers().map_err(|e| perr(1, e.to_string()))?.clone();
    if headers.get(0) != Some("patch_id") {
        return Err(perr(1, "first column must be patch_id".into()));
    }
    let methods: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut images = Vec::new();
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| perr(i + 2, e.to_string()))?;
        images.push(rec[0].to_string());
        let row: Result<Vec<f64>, _> = rec.iter().skip(1).map(|c| c.trim().parse::<f64>()).collect();
        rows.push(row.map_err(|e| perr(i + 2, e.to_string()))?);
    }
    Ok(ScoreTable::from_rows(images, methods, rows)?)
}

pub fn load_score_table(path: &Path) -> Result<ScoreTable, DatasetError> {
    let f = File::open(path).map_err(io_err(path))?;
    read_score_table(f, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn record(id: &str) -> ManifestRecord {
        ManifestRecord {
            record: QualityRecord {
                patch_id: id.to_string(),
                dataset_tag: "synthetic".into(),
                split: Split::Train,
                labels: BTreeMap::new(),
                feature_refs: BTreeMap::new(),
            },
            crop: CropGeometry {
                source_image: "img".into(),
                x0: 0,
                y0: 0,
                w: 4,
                h: 4,
            },
        }
    }

    fn records(n: usize) -> Vec<ManifestRecord> {
        (0..n).map(|i| record(&format!("p{i}"))).collect()
    }

    #[test]
    fn crop_grid_enumeration() {
        let crops = crop_patches("a", (4096, 4096), 1024).unwrap();
        let mut oracle = Vec::new();
        let mut y = 0;
        while y + 1024 <= 4096 {
            let mut x = 0;
            while x + 1024 <= 4096 {
                oracle.push((x, y));
                x += 1024;
            }
            y += 1024;
        }
        assert_eq!(crops.len(), oracle.len());
        assert_eq!(crops.len(), 16);
        for (c, (x, y)) in crops.iter().zip(oracle) {
            assert_eq!((c.x0, c.y0), (x, y));
        }
    }

    #[test]
    fn exact_fit_single_crop() {
        let crops = crop_patches("a", (1024, 1024), 1024).unwrap();
        assert_eq!(crops.len(), 1);
        assert_eq!((crops[0].x0, crops[0].y0), (0, 0));
    }

    #[test]
    fn margin_is_dropped() {
        let crops = crop_patches("a", (1500, 1024), 1024).unwrap();
        assert_eq!(crops.len(), 1);
        let right = crops[0].x0 + crops[0].w;
        assert_eq!(1500 - right, 476);
    }

    #[test]
    fn too_small_image() {
        let err = crop_patches("a", (1000, 2048), 1024).unwrap_err();
        assert!(err.to_string().contains("image too small"));
    }

    #[test]
    fn split_exact_ratio() {
        let m = split_manifest(records(10), 4, (0.8, 0.2), RngSeed(1)).unwrap();
        assert_eq!(m.count(Split::Train), 8);
        assert_eq!(m.count(Split::Test), 2);
    }

    #[test]
    fn split_rounds_to_nearest() {
        // 0.8 * 9 = 7.2 -> 7, regardless of which records the seed picks
        for seed in 0..20 {
            let m = split_manifest(records(9), 4, (0.8, 0.2), RngSeed(seed)).unwrap();
            assert_eq!(m.count(Split::Train), 7);
            assert_eq!(m.count(Split::Test), 2);
        }
    }

    #[test]
    fn split_is_deterministic() {
        let a = split_manifest(records(50), 4, (0.8, 0.2), RngSeed(3)).unwrap();
        let b = split_manifest(records(50), 4, (0.8, 0.2), RngSeed(3)).unwrap();
        assert_eq!(a, b);
        let c = split_manifest(records(50), 4, (0.8, 0.2), RngSeed(4)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn split_rejects_empty_and_bad_ratio() {
        assert!(matches!(
            split_manifest(vec![], 4, (0.8, 0.2), RngSeed(0)),
            Err(DatasetError::NoRecords)
        ));
        assert!(matches!(
            split_manifest(records(3), 4, (0.8, 0.3), RngSeed(0)),
            Err(DatasetError::BadRatio(..))
        ));
    }

    #[test]
    fn oa_examples() {
        let diag = ConfusionMatrix::from_rows(vec![vec![5, 0], vec![0, 7]]).unwrap();
        assert_eq!(compute_oa(&diag).unwrap(), 1.0);
        let wrong = ConfusionMatrix::from_rows(vec![vec![0, 3], vec![2, 0]]).unwrap();
        assert_eq!(compute_oa(&wrong).unwrap(), 0.0);
        let cm = ConfusionMatrix::from_rows(vec![vec![3, 1], vec![2, 4]]).unwrap();
        // per-element oracle: correct = 3 + 4, total = 3 + 1 + 2 + 4
        let mut correct = 0;
        let mut total = 0;
        for i in 0..2 {
            for j in 0..2 {
                total += cm.get(i, j);
                if i == j {
                    correct += cm.get(i, j);
                }
            }
        }
        assert_eq!(compute_oa(&cm).unwrap(), correct as f64 / total as f64);
        assert!((compute_oa(&cm).unwrap() - 0.7).abs() < 1e-15);
        let err = compute_oa(&ConfusionMatrix::zeros(3)).unwrap_err();
        assert_eq!(err.to_string(), "empty confusion matrix");
    }

    fn manifest_of(ids: &[&str]) -> DatasetManifest {
        DatasetManifest {
            records: ids.iter().map(|i| record(i)).collect(),
            patch_size: 4,
            split_ratio: (0.8, 0.2),
        }
    }

    #[test]
    fn label_table_single_cell() {
        let m = manifest_of(&["p"]);
        let mut set = ConfusionSet::new();
        set.insert(("p".into(), "m".into()), ConfusionMatrix::from_rows(vec![vec![4]]).unwrap());
        let t = build_label_table(&m, &["m".to_string()], &set).unwrap();
        assert_eq!(t.get(0, 0), 1.0);
    }

    #[test]
    fn label_table_matches_cells() {
        let m = manifest_of(&["p0", "p1"]);
        let methods = vec!["a".to_string(), "b".to_string()];
        let mats = [
            vec![vec![3u64, 1], vec![2, 4]],
            vec![vec![1, 1], vec![1, 1]],
            vec![vec![9, 0], vec![1, 0]],
            vec![vec![0, 5], vec![0, 5]],
        ];
        let mut set = ConfusionSet::new();
        let mut expected = vec![vec![0.0; 2]; 2];
        for (k, rows) in mats.iter().enumerate() {
            let (i, j) = (k / 2, k % 2);
            let trace: u64 = (0..2).map(|d| rows[d][d]).sum();
            let total: u64 = rows.iter().flatten().sum();
            expected[i][j] = trace as f64 / total as f64;
            set.insert(
                (format!("p{i}"), methods[j].clone()),
                ConfusionMatrix::from_rows(rows.clone()).unwrap(),
            );
        }
        let t = build_label_table(&m, &methods, &set).unwrap();
        for i in 0..2 {
            assert_eq!(t.row(i), expected[i].as_slice());
        }
    }

    #[test]
    fn label_table_names_missing_pair() {
        let m = manifest_of(&["p0", "p1"]);
        let mut set = ConfusionSet::new();
        set.insert(("p0".into(), "m".into()), ConfusionMatrix::from_rows(vec![vec![1]]).unwrap());
        let err = build_label_table(&m, &["m".to_string()], &set).unwrap_err();
        assert!(err.to_string().contains("(p1, m)"), "{err}");
    }

    #[test]
    fn confusion_csv_roundtrip() {
        let mut set = ConfusionSet::new();
        set.insert(("p0".into(), "a".into()), ConfusionMatrix::from_rows(vec![vec![3, 1], vec![2, 4]]).unwrap());
        set.insert(
            ("p1".into(), "a".into()),
            ConfusionMatrix::from_rows(vec![vec![1, 0, 0], vec![0, 2, 0], vec![0, 0, 3]]).unwrap(),
        );
        let mut buf = Vec::new();
        write_confusions(&set, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("p0,a,2\n3,1\n2,4\np1,a,3\n"), "{text}");
        assert_eq!(read_confusions(&buf[..], "mem").unwrap(), set);
    }

    #[test]
    fn confusion_csv_truncated() {
        let err = read_confusions("p,a,2\n1,2\n".as_bytes(), "mem").unwrap_err();
        assert!(err.to_string().contains("truncated"));
    }

    #[test]
    fn manifest_roundtrip_and_exclusion() {
        let mut m = split_manifest(records(5), 4, (0.8, 0.2), RngSeed(9)).unwrap();
        m.records[0].record.labels.insert("a".into(), 0.5);
        m.records[1].record.dataset_tag = "flooded".into();
        m.records[2].record.feature_refs.insert("semantic".into(), "emb.jsonl".into());
        let mut buf = Vec::new();
        write_manifest(&m, &mut buf).unwrap();
        let back = read_manifest(&buf[..], "mem").unwrap();
        assert_eq!(back.records, m.records);
        let kept = back.exclude_tags(&["flooded".to_string()]);
        assert_eq!(kept.records.len(), 4);
    }

    #[test]
    fn score_table_csv_header() {
        let t = ScoreTable::from_rows(vec!["p".into()], vec!["a".into(), "b".into()], vec![vec![0.25, 1.0]]).unwrap();
        let mut buf = Vec::new();
        write_score_table(&t, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "patch_id,a,b\np,0.25,1\n");
        assert_eq!(read_score_table(&buf[..], "mem").unwrap(), t);
    }

    proptest! {
        #[test]
        fn oa_permutation_invariant(n in 1usize..6, seed in any::<u64>()) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<Vec<u64>> = (0..n).map(|_| (0..n).map(|_| rng.gen_range(0..20)).collect()).collect();
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            let permuted: Vec<Vec<u64>> = (0..n).map(|i| (0..n).map(|j| rows[perm[i]][perm[j]]).collect()).collect();
            let a = ConfusionMatrix::from_rows(rows).unwrap();
            let b = ConfusionMatrix::from_rows(permuted).unwrap();
            prop_assume!(a.total() > 0);
            prop_assert_eq!(compute_oa(&a).unwrap(), compute_oa(&b).unwrap());
        }

        #[test]
        fn split_fraction_bound(n in 1usize..200, seed in any::<u64>()) {
            let m = split_manifest(records(n), 4, (0.8, 0.2), RngSeed(seed)).unwrap();
            let train = m.count(Split::Train);
            prop_assert_eq!(train + m.count(Split::Test), n);
            prop_assert!((train as f64 / n as f64 - 0.8).abs() <= 1.0 / n as f64);
        }

        #[test]
        fn crops_disjoint_and_inside(w in 1u32..5000, h in 1u32..5000, p in 1u32..1500) {
            prop_assume!(w >= p && h >= p);
            let crops = crop_patches("s", (w, h), p).unwrap();
            prop_assert_eq!(crops.len() as u32, (w / p) * (h / p));
            for c in &crops {
                prop_assert!(c.x0 + c.w <= w && c.y0 + c.h <= h);
            }
            if crops.len() < 50 {
                for i in 0..crops.len() {
                    for j in 0..i {
                        prop_assert!(!crops[i].overlaps(&crops[j]));
                    }
                }
            }
            prop_assert_eq!(crops, crop_patches("s", (w, h), p).unwrap());
        }
    }
}
