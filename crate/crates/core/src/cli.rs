//! Batch workflows behind the `segqa` binary.
//!
//! Every subcommand reads one resolved [`Config`], writes its artifacts into
//! the output directory and snapshots the config it ran with under
//! `<out>/config/<subcommand>.toml`. Downstream commands find upstream
//! artifacts in the same directory unless the config points elsewhere.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 missing input,
//! 3 numeric failure.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::config::{ClientKind, Config, ConfigError, SourceSpec};
use crate::dataset::{
    attach_labels, build_label_table, crop_patches, load_confusions, load_manifest, load_score_table, save_manifest,
    save_score_table, split_manifest, ConfusionSet, DatasetError, DatasetManifest, ManifestRecord,
};
use crate::features::{FeatureError, FeatureMapStore};
use crate::metrics::{metric_bundle, write_scatter, MetricError, MetricReport};
use crate::model::{
    load_checkpoint, save_checkpoint, CheckpointMeta, EncoderKind, FileEncoder, ModelError, QualityModel,
    SegmentationProvider, SegmentationSource, SemanticEncoder, StoredSegmentation, TinyVitEncoder, ToySegmentation,
};
use crate::purify::{
    assemble_purified, join_records, load_caption_lines, partition_by_threshold, refine_captions, resolve_threshold,
    save_captions, score_records, CaptionClient, HttpCaptionClient, MockCaptionClient, PurifyError, PurifyReport,
};
use crate::recommend::{recommend, write_ranked_csv, RecommendError, Tolerances};
use crate::synth::{self, SynthError};
use crate::training::{evaluate_split, train, write_loss_curve, TrainError};
use crate::types::{QualityRecord, RngSeed, ScoreTable, Split, TypeError};

#[derive(Debug, Parser)]
#[command(name = "segqa", version, about = "Segmentation quality assessment workflows")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Top-level seed; overrides `seed` in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory shared by all subcommands.
    #[arg(long, global = true, default_value = "segqa-out")]
    pub out: PathBuf,
    /// Dotted-path override, e.g. `train.learning_rate=3e-4`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Crop sources, split 8:2 and compute OA labels from confusion matrices.
    BuildDataset,
    /// Train one quality model per method on the train split.
    Train,
    /// Score a split with trained checkpoints (or a prediction table).
    Eval,
    /// Rank methods per image and compute P@1 / P@3.
    Recommend,
    /// Similarity filtering and caption refinement.
    Purify,
    /// Collect per-method metric reports into one table.
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::BuildDataset => "build-dataset",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Recommend => "recommend",
            Command::Purify => "purify",
            Command::Report => "report",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    MissingInput,
    Numeric,
}

impl ErrorKind {
    pub fn code(self) -> u8 {
        match self {
            ErrorKind::Usage => 1,
            ErrorKind::MissingInput => 2,
            ErrorKind::Numeric => 3,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl CliError {
    pub fn usage(m: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Usage,
            message: m.into(),
        }
    }
    pub fn missing(m: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::MissingInput,
            message: m.into(),
        }
    }
    pub fn numeric(m: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Numeric,
            message: m.into(),
        }
    }
}

fn io_kind(e: &std::io::Error) -> ErrorKind {
    if e.kind() == std::io::ErrorKind::NotFound {
        ErrorKind::MissingInput
    } else {
        ErrorKind::Usage
    }
}

fn with_kind(kind: ErrorKind, e: impl std::fmt::Display) -> CliError {
    CliError {
        kind,
        message: e.to_string(),
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        let kind = match &e {
            ConfigError::Read { source, .. } => io_kind(source),
            _ => ErrorKind::Usage,
        };
        with_kind(kind, e)
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        let kind = match &e {
            DatasetError::Io { source, .. } => io_kind(source),
            DatasetError::MissingPairs(_) => ErrorKind::MissingInput,
            DatasetError::EmptyConfusion | DatasetError::Type(TypeError::NonFinite { .. }) => ErrorKind::Numeric,
            _ => ErrorKind::Usage,
        };
        with_kind(kind, e)
    }
}

impl From<FeatureError> for CliError {
    fn from(e: FeatureError) -> Self {
        let kind = match &e {
            FeatureError::Io { source, .. } => io_kind(source),
            FeatureError::Missing(_) => ErrorKind::MissingInput,
            _ => ErrorKind::Usage,
        };
        with_kind(kind, e)
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Feature(f) => f.into(),
            ModelError::Encoder(_) => with_kind(ErrorKind::MissingInput, e),
            ModelError::Checkpoint { ref msg, .. } if msg.contains("No such file") => with_kind(ErrorKind::MissingInput, e),
            _ => with_kind(ErrorKind::Usage, e),
        }
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        with_kind(ErrorKind::Numeric, e)
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Model(m) => m.into(),
            TrainError::Metric(m) => m.into(),
            TrainError::NonFinite { .. } | TrainError::Loss(_) => with_kind(ErrorKind::Numeric, e),
            TrainError::MissingLabel { .. } | TrainError::EmptySplit { .. } => with_kind(ErrorKind::MissingInput, e),
            _ => with_kind(ErrorKind::Usage, e),
        }
    }
}

impl From<RecommendError> for CliError {
    fn from(e: RecommendError) -> Self {
        let kind = match e {
            RecommendError::NonFinite { .. } => ErrorKind::Numeric,
            _ => ErrorKind::Usage,
        };
        with_kind(kind, e)
    }
}

impl From<PurifyError> for CliError {
    fn from(e: PurifyError) -> Self {
        let kind = match &e {
            PurifyError::Io { source, .. } => io_kind(source),
            PurifyError::MissingEmbedding { .. } => ErrorKind::MissingInput,
            PurifyError::ZeroNorm | PurifyError::NoScores => ErrorKind::Numeric,
            _ => ErrorKind::Usage,
        };
        with_kind(kind, e)
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Dataset(d) => d.into(),
            SynthError::Feature(f) => f.into(),
            SynthError::Type(t) => with_kind(ErrorKind::Usage, t),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

/// Resolved config plus output location for one subcommand run.
pub struct RunContext {
    pub config: Config,
    pub out: PathBuf,
    pub config_hash: String,
}

impl RunContext {
    pub fn new(config: Config, out: PathBuf) -> Self {
        let config_hash = config.hash();
        Self {
            config,
            out,
            config_hash,
        }
    }

    fn seed(&self) -> RngSeed {
        RngSeed(self.config.seed)
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn manifest_path(&self) -> PathBuf {
        self.config.dataset.manifest.clone().unwrap_or_else(|| self.path("manifest.jsonl"))
    }

    fn snapshot(&self, cmd: Command) -> CliResult<()> {
        let dir = self.path("config");
        mkdir(&dir)?;
        write_text(&dir.join(format!("{}.toml", cmd.name())), &self.config.to_toml())
    }
}

fn mkdir(p: &Path) -> CliResult<()> {
    fs::create_dir_all(p).map_err(|e| CliError::usage(format!("{}: {e}", p.display())))
}

fn write_text(p: &Path, text: &str) -> CliResult<()> {
    fs::write(p, text).map_err(|e| CliError::usage(format!("{}: {e}", p.display())))
}

fn write_json(p: &Path, v: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(v).map_err(|e| CliError::usage(e.to_string()))?;
    write_text(p, &(text + "\n"))
}

fn create(p: &Path) -> CliResult<BufWriter<fs::File>> {
    Ok(BufWriter::new(
        fs::File::create(p).map_err(|e| CliError::usage(format!("{}: {e}", p.display())))?,
    ))
}

fn require(p: &Path) -> CliResult<()> {
    if p.exists() {
        Ok(())
    } else {
        Err(CliError::missing(format!("missing input: {}", p.display())))
    }
}

/// Parses arguments, runs the subcommand and maps the outcome to an exit code.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(ErrorKind::Usage.code())
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.kind.code())
        }
    }
}

pub fn run(cli: &Cli) -> CliResult<()> {
    let mut overrides = cli.overrides.clone();
    if let Some(s) = cli.seed {
        overrides.push(format!("seed={s}"));
    }
    let config = Config::load(cli.config.as_deref(), &overrides)?;
    let ctx = RunContext::new(config, cli.out.clone());
    mkdir(&ctx.out)?;
    ctx.snapshot(cli.command)?;
    match cli.command {
        Command::BuildDataset => cmd_build_dataset(&ctx).map(|s| println!("{s}")),
        Command::Train => cmd_train(&ctx).map(|s| println!("{s}")),
        Command::Eval => cmd_eval(&ctx).map(|s| println!("{s}")),
        Command::Recommend => cmd_recommend(&ctx).map(|s| println!("{s}")),
        Command::Purify => cmd_purify(&ctx).map(|s| println!("{s}")),
        Command::Report => cmd_report(&ctx).map(|s| println!("{s}")),
    }
}

// ---------------------------------------------------------------------------
// build-dataset

#[derive(Debug, Clone, Serialize)]
pub struct BuildSummary {
    pub records: usize,
    pub train: usize,
    pub test: usize,
    pub methods: Vec<String>,
    pub manifest: PathBuf,
    pub labels: PathBuf,
}

impl std::fmt::Display for BuildSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} records ({} train / {} test), {} methods; wrote {} and {}",
            self.records,
            self.train,
            self.test,
            self.methods.len(),
            self.manifest.display(),
            self.labels.display()
        )
    }
}

pub fn cmd_build_dataset(ctx: &RunContext) -> CliResult<BuildSummary> {
    let cfg = &ctx.config;
    let mut sources = cfg.dataset.sources.clone();
    let mut confusion_files = cfg.dataset.confusions.clone();
    let mut feature_files = cfg.dataset.feature_files.clone();

    if cfg.synthetic.enabled {
        let dir = ctx.path("fixtures");
        let data = synth::generate(
            &cfg.synthetic,
            cfg.dataset.patch_size,
            cfg.model.d_sem,
            cfg.model.seg_channels,
            ctx.seed().derive("synthetic"),
        )?;
        let paths = synth::write_fixtures(&data, &dir)?;
        sources = data.sources;
        confusion_files = vec![dir.join(&paths.confusions)];
        feature_files = paths
            .feature_files
            .into_iter()
            .map(|(k, v)| (k, format!("fixtures/{v}")))
            .collect();
        let caps = synth::synthetic_captions(cfg.synthetic.captions, cfg.synthetic.caption_dim, ctx.seed().derive("captions"))?;
        save_captions_lines(&caps.lines, &dir.join("captions.jsonl"))?;
        caps.images.save(&dir.join("caption_images.jsonl"))?;
        caps.texts.save(&dir.join("caption_texts.jsonl"))?;
    }

    if sources.is_empty() {
        return Err(CliError::usage("dataset.sources is empty (or enable synthetic)"));
    }
    if confusion_files.is_empty() {
        return Err(CliError::usage("dataset.confusions is empty"));
    }
    let mut records = Vec::new();
    for SourceSpec { id, tag, width, height } in &sources {
        if cfg.dataset.exclude_tags.contains(tag) {
            continue;
        }
        for crop in crop_patches(id, (*width, *height), cfg.dataset.patch_size)? {
            records.push(ManifestRecord {
                record: QualityRecord {
                    patch_id: crop.patch_id(),
                    dataset_tag: tag.clone(),
                    split: Split::Train,
                    labels: BTreeMap::new(),
                    feature_refs: feature_files.clone(),
                },
                crop,
            });
        }
    }
    let mut manifest = split_manifest(
        records,
        cfg.dataset.patch_size,
        cfg.dataset.split_ratio,
        ctx.seed().derive("split"),
    )?;

    let mut confusions = ConfusionSet::new();
    for f in &confusion_files {
        require(f).map_err(|_| CliError::missing(format!("missing confusion CSV: {}", f.display())))?;
        confusions.extend(load_confusions(f)?);
    }
    let methods: Vec<String> = if cfg.dataset.methods.is_empty() {
        let set: std::collections::BTreeSet<&String> = confusions.keys().map(|(_, m)| m).collect();
        set.into_iter().cloned().collect()
    } else {
        cfg.dataset.methods.clone()
    };
    let table = build_label_table(&manifest, &methods, &confusions)?;
    attach_labels(&mut manifest, &table);

    let manifest_path = ctx.path("manifest.jsonl");
    let labels_path = ctx.path("labels.csv");
    save_manifest(&manifest, &manifest_path)?;
    save_score_table(&table, &labels_path)?;
    let summary = BuildSummary {
        records: manifest.records.len(),
        train: manifest.count(Split::Train),
        test: manifest.count(Split::Test),
        methods,
        manifest: manifest_path,
        labels: labels_path,
    };
    write_json(&ctx.path("dataset_summary.json"), &summary)?;
    Ok(summary)
}

fn save_captions_lines(lines: &[crate::purify::CaptionLine], path: &Path) -> CliResult<()> {
    let mut w = create(path)?;
    for l in lines {
        serde_json::to_writer(&mut w, l).map_err(|e| CliError::usage(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| CliError::usage(e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::usage(e.to_string()))
}

// ---------------------------------------------------------------------------
// Feature plumbing shared by train and eval

/// Manifest plus the frozen encoder and segmentation features it references.
pub struct Inputs {
    pub manifest: DatasetManifest,
    pub encoder: Arc<dyn SemanticEncoder>,
    pub segmentation: Box<dyn SegmentationProvider>,
    pub methods: Vec<String>,
}

fn feature_ref(manifest: &DatasetManifest, base: &Path, branch: &str) -> CliResult<PathBuf> {
    let rel = manifest
        .records
        .first()
        .and_then(|r| r.record.feature_refs.get(branch))
        .ok_or_else(|| CliError::missing(format!("manifest has no feature file for branch {branch:?}")))?;
    let p = base.join(rel);
    require(&p)?;
    Ok(p)
}

pub fn load_inputs(ctx: &RunContext) -> CliResult<Inputs> {
    let cfg = &ctx.config;
    let mpath = ctx.manifest_path();
    require(&mpath)?;
    let manifest = load_manifest(&mpath)?;
    if manifest.records.is_empty() {
        return Err(CliError::missing(format!("{} has no records", mpath.display())));
    }
    let base = mpath.parent().map(Path::to_path_buf).unwrap_or_default();
    let methods = if cfg.dataset.methods.is_empty() {
        manifest.method_ids()
    } else {
        cfg.dataset.methods.clone()
    };
    let mut images: Option<FeatureMapStore> = None;
    let mut load_images = |manifest: &DatasetManifest| -> CliResult<FeatureMapStore> {
        if images.is_none() {
            images = Some(FeatureMapStore::load(&feature_ref(manifest, &base, "image")?)?);
        }
        Ok(images.clone().expect("loaded"))
    };
    let encoder: Arc<dyn SemanticEncoder> = match cfg.model.encoder {
        EncoderKind::File => Arc::new(FileEncoder::load(&feature_ref(&manifest, &base, "semantic")?)?),
        EncoderKind::TinyVit => Arc::new(TinyVitEncoder::new(
            cfg.model.tiny_vit.clone(),
            cfg.model.d_sem,
            load_images(&manifest)?,
            ctx.seed().derive("encoder"),
        )?),
    };
    let segmentation: Box<dyn SegmentationProvider> = match cfg.model.segmentation {
        SegmentationSource::File => {
            let mut stores = BTreeMap::new();
            for m in &methods {
                stores.insert(m.clone(), FeatureMapStore::load(&feature_ref(&manifest, &base, &format!("seg/{m}"))?)?);
            }
            Box::new(StoredSegmentation { stores })
        }
        SegmentationSource::ToyConv => Box::new(ToySegmentation::new(
            load_images(&manifest)?,
            cfg.model.seg_channels,
            ctx.seed().derive("segmenter"),
        )),
    };
    Ok(Inputs {
        manifest,
        encoder,
        segmentation,
        methods,
    })
}

fn checkpoint_path(ctx: &RunContext, method: &str) -> PathBuf {
    ctx.path("checkpoints").join(format!("{method}.bin"))
}

// ---------------------------------------------------------------------------
// train

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub methods: BTreeMap<String, f64>,
    pub steps: usize,
}

impl std::fmt::Display for TrainSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "trained {} models for {} steps", self.methods.len(), self.steps)?;
        for (m, l) in &self.methods {
            writeln!(f, "  {m}: final loss {l:.6}")?;
        }
        Ok(())
    }
}

pub fn cmd_train(ctx: &RunContext) -> CliResult<TrainSummary> {
    let cfg = &ctx.config;
    let inputs = load_inputs(ctx)?;
    mkdir(&ctx.path("checkpoints"))?;
    mkdir(&ctx.path("loss"))?;
    let results: Vec<CliResult<(String, f64)>> = std::thread::scope(|s| {
        let handles: Vec<_> = inputs
            .methods
            .iter()
            .map(|m| {
                let inputs = &inputs;
                s.spawn(move || -> CliResult<(String, f64)> {
                    let mut model = QualityModel::new(
                        cfg.model.clone(),
                        inputs.encoder.clone(),
                        ctx.seed().derive(&format!("model/{m}")),
                    )?;
                    let mut tc = cfg.train.clone();
                    tc.seed = ctx.seed().derive(&format!("train/{m}")).0;
                    let curve = train(&mut model, &inputs.manifest, m, inputs.segmentation.as_ref(), &tc, &cfg.loss)?;
                    let mut w = create(&ctx.path("loss").join(format!("{m}.csv")))?;
                    write_loss_curve(&curve, &mut w).map_err(|e| CliError::usage(e.to_string()))?;
                    let last = curve.last().map(|p| p.total).unwrap_or(f64::NAN);
                    let fit = evaluate_split(&model, &inputs.manifest, m, Split::Train, inputs.segmentation.as_ref())?;
                    let meta = CheckpointMeta {
                        config_hash: ctx.config_hash.clone(),
                        step: curve.len(),
                        train_loss: last,
                        metrics: serde_json::to_value(MetricReport::new(m, "train", &fit.bundle))
                            .expect("report serializes"),
                        method_id: m.clone(),
                        model: cfg.model.clone(),
                    };
                    save_checkpoint(&model.net, &meta, &checkpoint_path(ctx, m))?;
                    Ok((m.clone(), last))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("training thread panicked")).collect()
    });
    let mut methods = BTreeMap::new();
    for r in results {
        let (m, l) = r?;
        methods.insert(m, l);
    }
    Ok(TrainSummary {
        methods,
        steps: cfg.train.max_steps,
    })
}

// ---------------------------------------------------------------------------
// eval

#[derive(Debug, Clone, Serialize)]
pub struct EvalSummary {
    pub split: Split,
    pub reports: Vec<MetricReport>,
    pub predictions: PathBuf,
}

impl std::fmt::Display for EvalSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "{} split, predictions in {}", self.split, self.predictions.display())?;
        writeln!(f, "{:<12} {:>5} {:>8} {:>8} {:>8} {:>8}", "method", "n", "PLCC", "SROCC", "KROCC", "RMSE")?;
        for r in &self.reports {
            writeln!(
                f,
                "{:<12} {:>5} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
                r.method_id, r.n, r.plcc, r.srocc, r.krocc, r.rmse
            )?;
        }
        Ok(())
    }
}

fn predictions_path(ctx: &RunContext, split: Split) -> PathBuf {
    ctx.path(&format!("predictions_{split}.csv"))
}

/// Truth table for `image_ids` × `methods` from manifest labels.
fn truth_table(manifest: &DatasetManifest, image_ids: &[String], methods: &[String]) -> CliResult<ScoreTable> {
    let mut rows = Vec::with_capacity(image_ids.len());
    for id in image_ids {
        let rec = manifest
            .get(id)
            .ok_or_else(|| CliError::missing(format!("patch {id} is not in the manifest")))?;
        let row = methods
            .iter()
            .map(|m| {
                rec.record
                    .labels
                    .get(m)
                    .copied()
                    .ok_or_else(|| CliError::missing(format!("patch {id} has no label for method {m}")))
            })
            .collect::<CliResult<Vec<f64>>>()?;
        rows.push(row);
    }
    ScoreTable::from_rows(image_ids.to_vec(), methods.to_vec(), rows).map_err(|e| CliError::numeric(e.to_string()))
}

pub fn cmd_eval(ctx: &RunContext) -> CliResult<EvalSummary> {
    let cfg = &ctx.config;
    let split = cfg.metrics.split;
    let (pred, manifest) = match &cfg.metrics.predictions {
        Some(p) => {
            require(p)?;
            let mpath = ctx.manifest_path();
            require(&mpath)?;
            (load_score_table(p)?, load_manifest(&mpath)?)
        }
        None => {
            let inputs = load_inputs(ctx)?;
            let mut ids: Option<Vec<String>> = None;
            let mut cols = Vec::new();
            for m in &inputs.methods {
                let ck = checkpoint_path(ctx, m);
                require(&ck)?;
                let (net, meta) = load_checkpoint(&ck)?;
                let model = QualityModel {
                    config: meta.model,
                    net,
                    encoder: inputs.encoder.clone(),
                };
                let ev = evaluate_split(&model, &inputs.manifest, m, split, inputs.segmentation.as_ref())?;
                ids.get_or_insert_with(|| ev.patch_ids.clone());
                cols.push(ev.predictions);
            }
            let ids = ids.ok_or_else(|| CliError::missing("no methods to evaluate"))?;
            let rows = (0..ids.len()).map(|i| cols.iter().map(|c| c[i]).collect()).collect();
            let table = ScoreTable::from_rows(ids, inputs.methods.clone(), rows).map_err(|e| CliError::numeric(e.to_string()))?;
            (table, inputs.manifest)
        }
    };
    let split_ids: Vec<String> = pred
        .image_ids()
        .iter()
        .filter(|id| manifest.get(id).map(|r| r.record.split == split).unwrap_or(false))
        .cloned()
        .collect();
    if split_ids.is_empty() {
        return Err(CliError::missing(format!("no predictions for the {split} split")));
    }
    let rows: Vec<Vec<f64>> = split_ids
        .iter()
        .map(|id| pred.row(pred.image_index(id).expect("listed id")).to_vec())
        .collect();
    let pred = ScoreTable::from_rows(split_ids.clone(), pred.method_ids().to_vec(), rows)
        .map_err(|e| CliError::numeric(e.to_string()))?;
    let truth = truth_table(&manifest, &split_ids, pred.method_ids())?;

    mkdir(&ctx.path("metrics"))?;
    mkdir(&ctx.path("scatter"))?;
    let mut reports = Vec::new();
    for (j, m) in pred.method_ids().iter().enumerate() {
        let p = pred.column(j);
        let l = truth.column(j);
        let bundle = metric_bundle(&p, &l)?;
        let report = MetricReport::new(m, &split.to_string(), &bundle);
        write_json(&ctx.path("metrics").join(format!("{m}_{split}.json")), &report)?;
        let mut w = create(&ctx.path("scatter").join(format!("{m}_{split}.csv")))?;
        write_scatter(&split_ids, &p, &l, &mut w).map_err(|e| CliError::usage(e.to_string()))?;
        reports.push(report);
    }
    let out = predictions_path(ctx, split);
    save_score_table(&pred, &out)?;
    Ok(EvalSummary {
        split,
        reports,
        predictions: out,
    })
}

// ---------------------------------------------------------------------------
// recommend

#[derive(Debug, Clone, Serialize)]
pub struct RecommendSummary {
    pub images: usize,
    pub methods: usize,
    pub p_at_1: f64,
    pub p_at_3: Option<f64>,
    pub ranked: Vec<(String, Vec<String>)>,
}

impl std::fmt::Display for RecommendSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "{} images, {} methods", self.images, self.methods)?;
        write!(f, "P@1 = {:.4}", self.p_at_1)?;
        match self.p_at_3 {
            Some(p) => writeln!(f, ", P@3 = {p:.4}")?,
            None => writeln!(f, ", P@3 n/a (fewer than 3 methods)")?,
        }
        for (id, ranked) in &self.ranked {
            writeln!(f, "  {id}: {}", ranked.join(" > "))?;
        }
        Ok(())
    }
}

pub fn cmd_recommend(ctx: &RunContext) -> CliResult<RecommendSummary> {
    let cfg = &ctx.config;
    let ppath = cfg
        .recommend
        .predictions
        .clone()
        .unwrap_or_else(|| predictions_path(ctx, cfg.metrics.split));
    require(&ppath)?;
    let mpath = ctx.manifest_path();
    require(&mpath)?;
    let pred = load_score_table(&ppath)?;
    let manifest = load_manifest(&mpath)?;
    let truth = truth_table(&manifest, pred.image_ids(), pred.method_ids())?;
    let tol = Tolerances {
        pred: cfg.recommend.pred_tol,
        truth: cfg.recommend.truth_tol,
    };
    let result = recommend(&pred, &truth, tol)?;
    write_json(&ctx.path("recommendation.json"), &result)?;
    let mut w = create(&ctx.path("ranked.csv"))?;
    write_ranked_csv(&pred, &mut w).map_err(|e| CliError::usage(e.to_string()))?;
    Ok(RecommendSummary {
        images: pred.n_images(),
        methods: pred.n_methods(),
        p_at_1: result.p_at_1,
        p_at_3: result.p_at_3,
        ranked: result
            .per_image
            .iter()
            .map(|r| (r.patch_id.clone(), r.ranked_methods.clone()))
            .collect(),
    })
}

// ---------------------------------------------------------------------------
// purify

impl std::fmt::Display for PurifyReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "tau = {:.6} ({})", self.tau, self.tau_source)?;
        write!(
            f,
            "{} captions: {} high, {} low -> {} refined, {} failed",
            self.total, self.counts.high, self.low, self.counts.refined, self.counts.failed
        )
    }
}

pub fn cmd_purify(ctx: &RunContext) -> CliResult<PurifyReport> {
    let cfg = &ctx.config.purify;
    cfg.prompt.validate()?;
    let fixture = |name: &str| ctx.path("fixtures").join(name);
    let captions = cfg.captions.clone().unwrap_or_else(|| fixture("captions.jsonl"));
    let images = cfg.image_embeddings.clone().unwrap_or_else(|| fixture("caption_images.jsonl"));
    let texts = cfg.text_embeddings.clone().unwrap_or_else(|| fixture("caption_texts.jsonl"));
    for p in [&captions, &images, &texts] {
        require(p)?;
    }
    let lines = load_caption_lines(&captions)?;
    let images = crate::features::EmbeddingStore::load(&images)?;
    let texts = crate::features::EmbeddingStore::load(&texts)?;
    let mut records = join_records(lines, &images, &texts)?;
    let total = records.len();
    score_records(&mut records)?;
    let tau = resolve_threshold(&records, cfg.tau, cfg.tau_quantile)?;
    let (high, low) = partition_by_threshold(records, tau)?;
    let n_low = low.len();
    let client: Box<dyn CaptionClient> = match cfg.client {
        ClientKind::Mock => Box::new(MockCaptionClient::echo("refined caption for ")),
        ClientKind::Http => Box::new(HttpCaptionClient::new(
            cfg.endpoint.clone(),
            std::time::Duration::from_millis(cfg.refine.timeout_ms),
        )),
    };
    let refined = refine_captions(low, client.as_ref(), &cfg.prompt, &cfg.refine);
    let attempts = refined.iter().map(|r| (r.id.clone(), r.provenance.attempts)).collect();
    let ds = assemble_purified(high, refined)?;
    save_captions(&ds.records, &ctx.path("purified.jsonl"))?;
    let report = PurifyReport {
        tau,
        tau_source: match cfg.tau {
            Some(_) => "configured".into(),
            None => format!("{} quantile of observed similarity", cfg.tau_quantile),
        },
        total,
        low: n_low,
        counts: ds.counts,
        attempts,
    };
    write_json(&ctx.path("purify_report.json"), &report)?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// report

#[derive(Debug, Clone, Serialize)]
pub struct ReportTable {
    pub split: String,
    pub methods: Vec<String>,
    /// metric name → one value per method
    pub rows: BTreeMap<String, Vec<f64>>,
}

impl std::fmt::Display for ReportTable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:<8}", "metric")?;
        for m in &self.methods {
            write!(f, " {m:>10}")?;
        }
        writeln!(f)?;
        for k in REPORT_METRICS {
            let Some(vals) = self.rows.get(k) else { continue };
            write!(f, "{k:<8}")?;
            for v in vals {
                write!(f, " {v:>10.4}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

pub const REPORT_METRICS: [&str; 5] = ["plcc", "srocc", "krocc", "rmse", "n"];

pub fn cmd_report(ctx: &RunContext) -> CliResult<ReportTable> {
    let split = ctx.config.metrics.split.to_string();
    let dir = ctx.path("metrics");
    require(&dir)?;
    let mut entries: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(|e| CliError::missing(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    entries.sort();
    let mut reports = Vec::new();
    for p in entries {
        let text = fs::read_to_string(&p).map_err(|e| CliError::usage(format!("{}: {e}", p.display())))?;
        let r: MetricReport =
            serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", p.display())))?;
        if r.split == split {
            reports.push(r);
        }
    }
    if reports.is_empty() {
        return Err(CliError::missing(format!("no {split} metric reports in {}", dir.display())));
    }
    let methods: Vec<String> = reports.iter().map(|r| r.method_id.clone()).collect();
    let mut rows = BTreeMap::new();
    for k in REPORT_METRICS {
        let vals = reports
            .iter()
            .map(|r| match k {
                "plcc" => r.plcc,
                "srocc" => r.srocc,
                "krocc" => r.krocc,
                "rmse" => r.rmse,
                _ => r.n as f64,
            })
            .collect();
        rows.insert(k.to_string(), vals);
    }
    let table = ReportTable { split, methods, rows };
    let mut w = create(&ctx.path("report.csv"))?;
    let mut csvw = csv::Writer::from_writer(&mut w);
    let mut header = vec!["metric".to_string()];
    header.extend(table.methods.iter().cloned());
    csvw.write_record(&header).map_err(|e| CliError::usage(e.to_string()))?;
    for k in REPORT_METRICS {
        let mut rec = vec![k.to_string()];
        rec.extend(table.rows[k].iter().map(|v| v.to_string()));
        csvw.write_record(&rec).map_err(|e| CliError::usage(e.to_string()))?;
    }
    csvw.flush().map_err(|e| CliError::usage(e.to_string()))?;
    drop(csvw);
    write_json(&ctx.path("report.json"), &table)?;
    Ok(table)
}
