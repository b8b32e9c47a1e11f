//! Synthetic fixtures standing in for real imagery and segmentation runs.
//!
//! Every patch gets a latent vector `z`. Semantic embeddings, raster images
//! and per-method segmentation feature maps are noisy linear images of `z`,
//! and each method's target accuracy is `0.55 + 0.4·σ(w_m·z + b_m)`. Label
//! maps are simulated pixel by pixel at that accuracy and counted into
//! confusion matrices, so OA labels carry realistic sampling noise while
//! staying predictable from the features.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::SourceSpec;
use crate::dataset::{confusion_from_labels, crop_patches, ConfusionSet, DatasetError};
use crate::features::{EmbeddingStore, FeatureError, FeatureMapStore};
use crate::model::StoredSegmentation;
use crate::nn::sigmoid;
use crate::purify::{CaptionLine, Provenance, Quality};
use crate::types::{FeatureMap, FeatureVector, RngSeed, TypeError};

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Type(#[from] TypeError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Generate fixtures in `build-dataset` instead of reading them.
    pub enabled: bool,
    pub sources: usize,
    pub extent: u32,
    pub methods: usize,
    pub latent_dim: usize,
    /// Side of the raster images fed to the tiny encoder.
    pub image_size: usize,
    pub image_channels: usize,
    /// Side of the segmentation feature maps.
    pub map_size: usize,
    /// Side of the simulated label maps behind each confusion matrix.
    pub label_map_size: usize,
    pub classes: usize,
    pub noise: f64,
    /// Number of synthetic captions for the purification fixtures.
    pub captions: usize,
    pub caption_dim: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            sources: 1,
            extent: 4096,
            methods: 8,
            latent_dim: 4,
            image_size: 16,
            image_channels: 3,
            map_size: 4,
            label_map_size: 32,
            classes: 4,
            noise: 0.05,
            captions: 40,
            caption_dim: 16,
        }
    }
}

/// Everything a dataset build and training run needs.
pub struct SynthData {
    pub sources: Vec<SourceSpec>,
    pub method_ids: Vec<String>,
    pub patch_ids: Vec<String>,
    pub latents: Vec<Vec<f64>>,
    /// Target accuracy per patch and method before pixel sampling.
    pub target_oa: Vec<Vec<f64>>,
    pub confusions: ConfusionSet,
    pub embeddings: EmbeddingStore,
    pub images: FeatureMapStore,
    pub segmentation: StoredSegmentation,
}

pub fn method_names(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("m{i}")).collect()
}

fn gaussian_matrix(rows: usize, cols: usize, std: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = Normal::new(0.0, std).expect("valid std");
    (0..rows).map(|_| (0..cols).map(|_| n.sample(rng)).collect()).collect()
}

fn matvec(m: &[Vec<f64>], z: &[f64]) -> Vec<f64> {
    m.iter().map(|r| r.iter().zip(z).map(|(a, b)| a * b).sum()).collect()
}

/// Simulated label maps at the given accuracy, counted into a confusion matrix.
pub fn simulate_confusion(
    target: f64,
    side: usize,
    classes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<crate::types::ConfusionMatrix, DatasetError> {
    let n = side * side;
    let truth: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
    let pred: Vec<usize> = truth
        .iter()
        .map(|&t| {
            if rng.gen::<f64>() < target {
                t
            } else {
                (t + rng.gen_range(1..classes)) % classes
            }
        })
        .collect();
    confusion_from_labels(&truth, &pred, classes)
}

/// Generates fixtures for `patch_size` crops of `cfg.sources` square sources.
pub fn generate(
    cfg: &SynthConfig,
    patch_size: u32,
    d_sem: usize,
    seg_channels: usize,
    seed: RngSeed,
) -> Result<SynthData, SynthError> {
    let sources: Vec<SourceSpec> = (0..cfg.sources)
        .map(|i| SourceSpec {
            id: format!("scene{i}"),
            tag: "synthetic".into(),
            width: cfg.extent,
            height: cfg.extent,
        })
        .collect();
    let mut patch_ids = Vec::new();
    for s in &sources {
        for c in crop_patches(&s.id, (s.width, s.height), patch_size)? {
            patch_ids.push(c.patch_id());
        }
    }
    generate_for(cfg, sources, patch_ids, d_sem, seg_channels, seed)
}

/// Same as [`generate`] for an explicit list of patch ids.
pub fn generate_for(
    cfg: &SynthConfig,
    sources: Vec<SourceSpec>,
    patch_ids: Vec<String>,
    d_sem: usize,
    seg_channels: usize,
    seed: RngSeed,
) -> Result<SynthData, SynthError> {
    let k = cfg.latent_dim;
    let method_ids = method_names(cfg.methods);
    let mut wrng = seed.stream("synth/weights");
    let sem_proj = gaussian_matrix(d_sem, k, 1.0 / (k as f64).sqrt(), &mut wrng);
    let px = cfg.image_size * cfg.image_size * cfg.image_channels;
    let img_proj = gaussian_matrix(px, k, 0.5, &mut wrng);
    let seg_proj: Vec<Vec<Vec<f64>>> = method_ids
        .iter()
        .map(|_| gaussian_matrix(seg_channels, k, 1.0 / (k as f64).sqrt(), &mut wrng))
        .collect();
    let acc_w = gaussian_matrix(method_ids.len(), k, 1.0, &mut wrng);
    let acc_b: Vec<f64> = (0..method_ids.len()).map(|_| wrng.gen_range(-0.5..0.5)).collect();

    let mut rng = seed.stream("synth/patches");
    let noise = Normal::new(0.0, cfg.noise.max(1e-12)).expect("valid noise");
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut latents = Vec::with_capacity(patch_ids.len());
    let mut target_oa = Vec::with_capacity(patch_ids.len());
    let mut confusions = ConfusionSet::new();
    let mut embeddings = EmbeddingStore::new(d_sem);
    let mut images = FeatureMapStore::new(cfg.image_channels);
    let mut stores: BTreeMap<String, FeatureMapStore> =
        method_ids.iter().map(|m| (m.clone(), FeatureMapStore::new(seg_channels))).collect();

    for pid in &patch_ids {
        let z: Vec<f64> = (0..k).map(|_| unit.sample(&mut rng)).collect();
        let sem: Vec<f64> = matvec(&sem_proj, &z).into_iter().map(|v| v + noise.sample(&mut rng)).collect();
        embeddings.insert(pid.clone(), FeatureVector::new(sem)?)?;
        let raster: Vec<f64> = matvec(&img_proj, &z).into_iter().map(|v| v + noise.sample(&mut rng)).collect();
        images.insert(
            pid.clone(),
            FeatureMap::new(cfg.image_size, cfg.image_size, cfg.image_channels, raster)?,
        )?;
        let mut row = Vec::with_capacity(method_ids.len());
        for (mi, m) in method_ids.iter().enumerate() {
            let centre = matvec(&seg_proj[mi], &z);
            let map = FeatureMap::from_fn(cfg.map_size, cfg.map_size, seg_channels, |_, _, c| {
                centre[c] + noise.sample(&mut rng)
            })?;
            stores.get_mut(m).expect("method store").insert(pid.clone(), map)?;
            let logit: f64 = acc_w[mi].iter().zip(&z).map(|(a, b)| a * b).sum::<f64>() + acc_b[mi];
            let target = 0.55 + 0.4 * sigmoid(logit);
            let cm = simulate_confusion(target, cfg.label_map_size, cfg.classes, &mut rng)?;
            confusions.insert((pid.clone(), m.clone()), cm);
            row.push(target);
        }
        latents.push(z);
        target_oa.push(row);
    }
    Ok(SynthData {
        sources,
        method_ids,
        patch_ids,
        latents,
        target_oa,
        confusions,
        embeddings,
        images,
        segmentation: StoredSegmentation { stores },
    })
}

/// File names written by [`write_fixtures`], relative to its directory.
#[derive(Debug, Clone, PartialEq)]
pub struct FixturePaths {
    pub confusions: PathBuf,
    /// Branch name → file, suitable for `dataset.feature_files`.
    pub feature_files: BTreeMap<String, String>,
}

pub fn write_fixtures(data: &SynthData, dir: &Path) -> Result<FixturePaths, SynthError> {
    let io = |p: &Path| {
        let path = p.display().to_string();
        move |source| FeatureError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let conf = dir.join("confusions.csv");
    let mut w = std::io::BufWriter::new(std::fs::File::create(&conf).map_err(io(&conf))?);
    crate::dataset::write_confusions(&data.confusions, &mut w)?;
    w.flush().map_err(io(&conf))?;
    drop(w);
    let mut files = BTreeMap::new();
    data.embeddings.save(&dir.join("semantic.jsonl"))?;
    files.insert("semantic".to_string(), "semantic.jsonl".to_string());
    data.images.save(&dir.join("images.jsonl"))?;
    files.insert("image".to_string(), "images.jsonl".to_string());
    for (m, store) in &data.segmentation.stores {
        let name = format!("seg_{m}.jsonl");
        store.save(&dir.join(&name))?;
        files.insert(format!("seg/{m}"), name);
    }
    Ok(FixturePaths {
        confusions: PathBuf::from("confusions.csv"),
        feature_files: files,
    })
}

/// Captions with image/text embeddings. Roughly a third are "noisy": their
/// text embedding is unrelated to the image, so similarity is low.
pub struct SynthCaptions {
    pub lines: Vec<CaptionLine>,
    pub images: EmbeddingStore,
    pub texts: EmbeddingStore,
}

pub fn synthetic_captions(n: usize, dim: usize, seed: RngSeed) -> Result<SynthCaptions, SynthError> {
    let mut rng = seed.stream("synth/captions");
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut images = EmbeddingStore::new(dim);
    let mut texts = EmbeddingStore::new(dim);
    let mut lines = Vec::with_capacity(n);
    for i in 0..n {
        let id = format!("cap{i:04}");
        let img: Vec<f64> = (0..dim).map(|_| unit.sample(&mut rng)).collect();
        let noisy = rng.gen::<f64>() < 1.0 / 3.0;
        let txt: Vec<f64> = if noisy {
            (0..dim).map(|_| unit.sample(&mut rng)).collect()
        } else {
            img.iter().map(|v| v + 0.3 * unit.sample(&mut rng)).collect()
        };
        let caption = if noisy {
            format!("photo {i} uploaded by a user")
        } else {
            format!("a satellite image of scene {i} with roads and buildings")
        };
        images.insert(id.clone(), FeatureVector::new(img)?)?;
        texts.insert(id.clone(), FeatureVector::new(txt)?)?;
        lines.push(CaptionLine {
            id: id.clone(),
            caption,
            quality: Quality::Unscored,
            provenance: Provenance {
                image_ref: Some(format!("{id}.png")),
                ..Default::default()
            },
        });
    }
    Ok(SynthCaptions { lines, images, texts })
}
