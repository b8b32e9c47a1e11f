//! Dual-branch quality model.
//!
//! ```text
//!   patch ──► frozen semantic encoder ──► SemanticAdapter ──► f_sem ─┐
//!                                                                    ├─► Scgb ─► QualityHead ─► score ∈ (0,1)
//!   segmentation feature map ──► gap ──► SegmentationAdapter ► f_seg ┘
//! ```
//!
//! Trainable parts live in [`QualityNet`]; the encoder sits outside it behind
//! [`SemanticEncoder`] and never receives gradients.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::features::{EmbeddingStore, FeatureError, FeatureMapStore};
use crate::nn::{
    apply_mask, dropout, gelu, gelu_grad, prefixed, sigmoid, to_f64, BlockCache, LayerNorm, Linear, Module, Scalar,
    TransformerBlock,
};
use crate::types::{FeatureMap, FeatureVector, RngSeed, TypeError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    Dim {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("encoder failure: {0}")]
    Encoder(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Type(#[from] TypeError),
    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: String, msg: String },
}

fn check_dim(what: &'static str, expected: usize, actual: usize) -> Result<(), ModelError> {
    if expected == actual {
        Ok(())
    } else {
        Err(ModelError::Dim { what, expected, actual })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenMode {
    /// Adapter sees only the CLS embedding, as a length-1 sequence.
    Cls,
    /// Adapter sees every token the encoder exposes; its output is read at token 0.
    Sequence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    /// Precomputed embeddings from an embedding file.
    File,
    /// Small frozen vision transformer over raster patches.
    TinyVit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentationSource {
    /// Precomputed pre-classifier maps from a feature-map file.
    File,
    /// Seeded 3×3 convolution stub applied to raster patches.
    ToyConv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TinyVitConfig {
    pub image_size: usize,
    pub in_channels: usize,
    pub patch: usize,
    pub depth: usize,
    pub heads: usize,
}

impl Default for TinyVitConfig {
    fn default() -> Self {
        Self {
            image_size: 16,
            in_channels: 3,
            patch: 4,
            depth: 2,
            heads: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_sem: usize,
    pub d_fused: usize,
    pub d_hidden: usize,
    pub seg_channels: usize,
    pub heads: usize,
    pub adapter_blocks: usize,
    pub ffn_expansion: usize,
    pub dropout: f64,
    pub init_std: f64,
    pub token_mode: TokenMode,
    pub encoder: EncoderKind,
    pub segmentation: SegmentationSource,
    pub tiny_vit: TinyVitConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_sem: 768,
            d_fused: 256,
            d_hidden: 64,
            seg_channels: 64,
            heads: 4,
            adapter_blocks: 3,
            ffn_expansion: 4,
            dropout: 0.1,
            init_std: 0.02,
            token_mode: TokenMode::Cls,
            encoder: EncoderKind::File,
            segmentation: SegmentationSource::File,
            tiny_vit: TinyVitConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.d_sem == 0 || self.d_fused == 0 || self.d_hidden == 0 || self.seg_channels == 0 {
            return bad("all widths must be positive".into());
        }
        if self.heads == 0 || self.d_sem % self.heads != 0 {
            return bad(format!("d_sem {} not divisible by heads {}", self.d_sem, self.heads));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.ffn_expansion == 0 {
            return bad("ffn_expansion must be positive".into());
        }
        if self.encoder == EncoderKind::TinyVit {
            let v = &self.tiny_vit;
            if v.patch == 0 || v.image_size % v.patch != 0 {
                return bad(format!("tiny_vit image_size {} not divisible by patch {}", v.image_size, v.patch));
            }
            if v.heads == 0 || self.d_sem % v.heads != 0 {
                return bad(format!("d_sem {} not divisible by tiny_vit heads {}", self.d_sem, v.heads));
            }
        }
        Ok(())
    }
}

/// Spatial global average pooling: per-channel mean over all pixels.
pub fn gap(m: &FeatureMap) -> FeatureVector {
    let (h, w, c) = m.shape();
    let mut acc = vec![0.0f64; c];
    for i in 0..h {
        for j in 0..w {
            for (a, v) in acc.iter_mut().zip(m.pixel(i, j)) {
                *a += v;
            }
        }
    }
    let n = (h * w) as f64;
    FeatureVector::new(acc.into_iter().map(|s| s / n).collect()).expect("mean of finite values is finite")
}

// ---------------------------------------------------------------------------
// Semantic branch

/// Stack of pre-norm transformer blocks followed by a linear projection from
/// `d_sem` to `d_fused`, read at the first token.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticAdapter<T> {
    pub blocks: Vec<TransformerBlock<T>>,
    pub proj: Linear<T>,
}

pub struct SemanticCache<T> {
    blocks: Vec<BlockCache<T>>,
    len: usize,
    cls: Vec<T>,
}

impl<T: Scalar> SemanticAdapter<T> {
    pub fn new(cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        let blocks = (0..cfg.adapter_blocks)
            .map(|_| TransformerBlock::new(cfg.d_sem, cfg.heads, cfg.ffn_expansion, cfg.init_std, rng))
            .collect();
        Self {
            blocks,
            proj: Linear::new(cfg.d_sem, cfg.d_fused, cfg.init_std, rng),
        }
    }

    /// Blocks reduced to identity maps and an identity projection.
    pub fn passthrough(cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        let mut a = Self::new(cfg, rng);
        a.blocks.iter_mut().for_each(TransformerBlock::zero_residual_branches);
        a.proj = Linear::identity(cfg.d_sem, cfg.d_fused);
        a
    }

    pub fn in_dim(&self) -> usize {
        self.proj.in_dim
    }

    pub fn forward(&self, tokens: &[Vec<T>]) -> (Vec<T>, SemanticCache<T>) {
        let mut x = tokens.to_vec();
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (y, c) = b.forward(&x);
            caches.push(c);
            x = y;
        }
        let cls = x.swap_remove(0);
        let out = self.proj.forward(&cls);
        (
            out,
            SemanticCache {
                blocks: caches,
                len: tokens.len(),
                cls,
            },
        )
    }

    /// Returns gradients with respect to the input tokens.
    pub fn backward(&self, cache: &SemanticCache<T>, dout: &[T], grad: &mut SemanticAdapter<T>) -> Vec<Vec<T>> {
        let dcls = self.proj.backward(&cache.cls, dout, &mut grad.proj);
        let mut dx = vec![vec![T::zero(); self.in_dim()]; cache.len];
        dx[0] = dcls;
        for (i, b) in self.blocks.iter().enumerate().rev() {
            dx = b.backward(&cache.blocks[i], &dx, &mut grad.blocks[i]);
        }
        dx
    }
}

impl<T: Scalar> Module<T> for SemanticAdapter<T> {
    fn tensors(&self) -> Vec<(String, &Vec<T>)> {
        let mut v = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            v.extend(prefixed(&format!("blocks.{i}"), b.tensors()));
        }
        v.extend(prefixed("proj", self.proj.tensors()));
        v
    }
    fn tensors_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut v = Vec::new();
        for b in &mut self.blocks {
            v.extend(b.tensors_mut());
        }
        v.extend(self.proj.tensors_mut());
        v
    }
}

// ---------------------------------------------------------------------------
// Segmentation branch

/// `fc2(gelu(fc1(v)))`, mapping pooled segmentation features to `d_fused`.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationAdapter<T> {
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

pub struct SegmentationCache<T> {
    x: Vec<T>,
    pre: Vec<T>,
    act: Vec<T>,
}

impl<T: Scalar> SegmentationAdapter<T> {
    pub fn new(cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        Self {
            fc1: Linear::new(cfg.seg_channels, cfg.d_fused, cfg.init_std, rng),
            fc2: Linear::new(cfg.d_fused, cfg.d_fused, cfg.init_std, rng),
        }
    }

    pub fn forward(&self, x: &[T]) -> (Vec<T>, SegmentationCache<T>) {
        let pre = self.fc1.forward(x);
        let act: Vec<T> = pre.iter().map(|&v| gelu(v)).collect();
        let y = self.fc2.forward(&act);
        (y, SegmentationCache { x: x.to_vec(), pre, act })
    }

    pub fn backward(&self, c: &SegmentationCache<T>, dy: &[T], grad: &mut SegmentationAdapter<T>) -> Vec<T> {
        let dact = self.fc2.backward(&c.act, dy, &mut grad.fc2);
        let dpre: Vec<T> = dact.iter().zip(&c.pre).map(|(&g, &p)| g * gelu_grad(p)).collect();
        self.fc1.backward(&c.x, &dpre, &mut grad.fc1)
    }
}

impl<T: Scalar> Module<T> for SegmentationAdapter<T> {
    fn tensors(&self) -> Vec<(String, &Vec<T>)> {
        let mut v = prefixed("fc1", self.fc1.tensors());
        v.extend(prefixed("fc2", self.fc2.tensors()));
        v
    }
    fn tensors_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut v = self.fc1.tensors_mut();
        v.extend(self.fc2.tensors_mut());
        v
    }
}

// ---------------------------------------------------------------------------
// Fusion

/// Simple cross-gating block:
///
/// ```text
/// gate  = gelu(W_sem · f_sem)
/// seg'  = W_seg · f_seg
/// out   = W_fusion · (gate ⊙ seg') + seg'
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct Scgb<T> {
    pub w_sem: Linear<T>,
    pub w_seg: Linear<T>,
    pub w_fusion: Linear<T>,
}

pub struct ScgbCache<T> {
    f_sem: Vec<T>,
    f_seg: Vec<T>,
    pre_gate: Vec<T>,
    gate: Vec<T>,
    seg_proj: Vec<T>,
    gated: Vec<T>,
}

impl<T: Scalar> Scgb<T> {
    pub fn new(dim: usize, std: f64, rng: &mut impl Rng) -> Self {
        Self {
            w_sem: Linear::new(dim, dim, std, rng),
            w_seg: Linear::new(dim, dim, std, rng),
            w_fusion: Linear::new(dim, dim, std, rng),
        }
    }

    pub fn dim(&self) -> usize {
        self.w_seg.out_dim
    }

    pub fn forward(&self, f_sem: &[T], f_seg: &[T]) -> (Vec<T>, ScgbCache<T>) {
        let pre_gate = self.w_sem.forward(f_sem);
        let gate: Vec<T> = pre_gate.iter().map(|&v| gelu(v)).collect();
        let seg_proj = self.w_seg.forward(f_seg);
        let gated: Vec<T> = gate.iter().zip(&seg_proj).map(|(&g, &s)| g * s).collect();
        let out = self
            .w_fusion
            .forward(&gated)
            .into_iter()
            .zip(&seg_proj)
            .map(|(a, &s)| a + s)
            .collect();
        (
            out,
            ScgbCache {
                f_sem: f_sem.to_vec(),
                f_seg: f_seg.to_vec(),
                pre_gate,
                gate,
                seg_proj,
                gated,
            },
        )
    }

    /// Returns `(d f_sem, d f_seg)`.
    pub fn backward(&self, c: &ScgbCache<T>, dout: &[T], grad: &mut Scgb<T>) -> (Vec<T>, Vec<T>) {
        let dgated = self.w_fusion.backward(&c.gated, dout, &mut grad.w_fusion);
        let dseg_proj: Vec<T> = dout
            .iter()
            .zip(&dgated)
            .zip(&c.gate)
            .map(|((&d, &dg), &g)| d + dg * g)
            .collect();
        let dpre: Vec<T> = dgated
            .iter()
            .zip(&c.seg_proj)
            .zip(&c.pre_gate)
            .map(|((&dg, &s), &p)| dg * s * gelu_grad(p))
            .collect();
        let dsem = self.w_sem.backward(&c.f_sem, &dpre, &mut grad.w_sem);
        let dseg = self.w_seg.backward(&c.f_seg, &dseg_proj, &mut grad.w_seg);
        (dsem, dseg)
    }
}

impl<T: Scalar> Module<T> for Scgb<T> {
    fn tensors(&self) -> Vec<(String, &Vec<T>)> {
        let mut v = prefixed("w_sem", self.w_sem.tensors());
        v.extend(prefixed("w_seg", self.w_seg.tensors()));
        v.extend(prefixed("w_fusion", self.w_fusion.tensors()));
        v
    }
    fn tensors_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut v = self.w_sem.tensors_mut();
        v.extend(self.w_seg.tensors_mut());
        v.extend(self.w_fusion.tensors_mut());
        v
    }
}

/// Checked 64-bit fusion of two feature vectors.
pub fn scgb_forward(f_sem: &FeatureVector, f_seg: &FeatureVector, p: &Scgb<f64>) -> Result<FeatureVector, ModelError> {
    check_dim("scgb semantic input", p.w_sem.in_dim, f_sem.dim())?;
    check_dim("scgb segmentation input", p.w_seg.in_dim, f_seg.dim())?;
    let (out, _) = p.forward(f_sem.values(), f_seg.values());
    Ok(FeatureVector::new(out)?)
}

// ---------------------------------------------------------------------------
// Quality head

/// dropout → fc1 → gelu → dropout → fc2 → sigmoid.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityHead<T> {
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
    pub dropout: f64,
}

pub struct HeadCache<T> {
    x_drop: Vec<T>,
    mask1: Option<Vec<T>>,
    pre: Vec<T>,
    act_drop: Vec<T>,
    mask2: Option<Vec<T>>,
    score: T,
}

impl<T: Scalar> QualityHead<T> {
    pub fn new(cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        Self {
            fc1: Linear::new(cfg.d_fused, cfg.d_hidden, cfg.init_std, rng),
            fc2: Linear::new(cfg.d_hidden, 1, cfg.init_std, rng),
            dropout: cfg.dropout,
        }
    }

    /// Pass `Some(rng)` for training mode (dropout active).
    pub fn forward(&self, x: &[T], mut rng: Option<&mut ChaCha8Rng>) -> (T, HeadCache<T>) {
        let (x_drop, mask1) = dropout(x, self.dropout, rng.as_deref_mut());
        let pre = self.fc1.forward(&x_drop);
        let act: Vec<T> = pre.iter().map(|&v| gelu(v)).collect();
        let (act_drop, mask2) = dropout(&act, self.dropout, rng.as_deref_mut());
        let z = self.fc2.forward(&act_drop)[0];
        let score = sigmoid(z);
        (
            score,
            HeadCache {
                x_drop,
                mask1,
                pre,
                act_drop,
                mask2,
                score,
            },
        )
    }

    pub fn backward(&self, c: &HeadCache<T>, dscore: T, grad: &mut QualityHead<T>) -> Vec<T> {
        let dz = dscore * c.score * (T::one() - c.score);
        let dact_drop = self.fc2.backward(&c.act_drop, &[dz], &mut grad.fc2);
        let dact = apply_mask(&dact_drop, &c.mask2);
        let dpre: Vec<T> = dact.iter().zip(&c.pre).map(|(&g, &p)| g * gelu_grad(p)).collect();
        let dx_drop = self.fc1.backward(&c.x_drop, &dpre, &mut grad.fc1);
        apply_mask(&dx_drop, &c.mask1)
    }
}

impl<T: Scalar> Module<T> for QualityHead<T> {
    fn tensors(&self) -> Vec<(String, &Vec<T>)> {
        let mut v = prefixed("fc1", self.fc1.tensors());
        v.extend(prefixed("fc2", self.fc2.tensors()));
        v
    }
    fn tensors_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut v = self.fc1.tensors_mut();
        v.extend(self.fc2.tensors_mut());
        v
    }
}

// ---------------------------------------------------------------------------
// Full trainable network

/// Encoder output and pooled segmentation features for one patch.
#[derive(Debug, Clone, PartialEq)]
pub struct NetInput<T> {
    pub semantic_tokens: Vec<Vec<T>>,
    pub pooled_segmentation: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QualityNet<T> {
    pub semantic: SemanticAdapter<T>,
    pub segmentation: SegmentationAdapter<T>,
    pub fusion: Scgb<T>,
    pub head: QualityHead<T>,
}

pub struct NetCache<T> {
    semantic: SemanticCache<T>,
    segmentation: SegmentationCache<T>,
    fusion: ScgbCache<T>,
    head: HeadCache<T>,
}

impl<T: Scalar> QualityNet<T> {
    /// Parameters are drawn from the `"init"` stream of `seed`.
    pub fn new(cfg: &ModelConfig, seed: RngSeed) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut rng = seed.stream("init");
        Ok(Self {
            semantic: SemanticAdapter::new(cfg, &mut rng),
            segmentation: SegmentationAdapter::new(cfg, &mut rng),
            fusion: Scgb::new(cfg.d_fused, cfg.init_std, &mut rng),
            head: QualityHead::new(cfg, &mut rng),
        })
    }

    pub fn check_input(&self, input: &NetInput<T>) -> Result<(), ModelError> {
        if input.semantic_tokens.is_empty() {
            return Err(ModelError::Dim {
                what: "semantic token count",
                expected: 1,
                actual: 0,
            });
        }
        for t in &input.semantic_tokens {
            check_dim("semantic token", self.semantic.in_dim(), t.len())?;
        }
        check_dim("pooled segmentation", self.segmentation.fc1.in_dim, input.pooled_segmentation.len())
    }

    pub fn forward(&self, input: &NetInput<T>, rng: Option<&mut ChaCha8Rng>) -> (T, NetCache<T>) {
        let (f_sem, semantic) = self.semantic.forward(&input.semantic_tokens);
        let (f_seg, segmentation) = self.segmentation.forward(&input.pooled_segmentation);
        let (fused, fusion) = self.fusion.forward(&f_sem, &f_seg);
        let (score, head) = self.head.forward(&fused, rng);
        (
            score,
            NetCache {
                semantic,
                segmentation,
                fusion,
                head,
            },
        )
    }

    /// Eval-mode score.
    pub fn predict(&self, input: &NetInput<T>) -> T {
        self.forward(input, None).0
    }

    pub fn backward(&self, cache: &NetCache<T>, dscore: T, grad: &mut QualityNet<T>) {
        let dfused = self.head.backward(&cache.head, dscore, &mut grad.head);
        let (dsem, dseg) = self.fusion.backward(&cache.fusion, &dfused, &mut grad.fusion);
        self.segmentation.backward(&cache.segmentation, &dseg, &mut grad.segmentation);
        self.semantic.backward(&cache.semantic, &dsem, &mut grad.semantic);
    }
}

impl<T: Scalar> Module<T> for QualityNet<T> {
    fn tensors(&self) -> Vec<(String, &Vec<T>)> {
        let mut v = prefixed("semantic", self.semantic.tensors());
        v.extend(prefixed("segmentation", self.segmentation.tensors()));
        v.extend(prefixed("fusion", self.fusion.tensors()));
        v.extend(prefixed("head", self.head.tensors()));
        v
    }
    fn tensors_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut v = self.semantic.tensors_mut();
        v.extend(self.segmentation.tensors_mut());
        v.extend(self.fusion.tensors_mut());
        v.extend(self.head.tensors_mut());
        v
    }
}

/// SHA-256 over parameter names and little-endian values.
pub fn param_checksum<T: Scalar, M: Module<T>>(m: &M) -> String {
    let mut h = Sha256::new();
    for (name, t) in m.tensors() {
        h.update(name.as_bytes());
        for &v in t {
            h.update(to_f64(v).to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

// ---------------------------------------------------------------------------
// Encoders

/// Frozen semantic feature provider. Implementations must be deterministic.
pub trait SemanticEncoder: Send + Sync {
    fn dim(&self) -> usize;

    /// Global (CLS) embedding of a patch.
    fn encode(&self, patch_id: &str) -> Result<FeatureVector, ModelError>;

    /// Full token sequence with the CLS token first. Encoders that only
    /// expose a global embedding return it as a single token.
    fn encode_tokens(&self, patch_id: &str) -> Result<Vec<FeatureVector>, ModelError> {
        Ok(vec![self.encode(patch_id)?])
    }

    /// Fingerprint of the frozen state; must not change during training.
    fn checksum(&self) -> String;
}

/// Reads precomputed embeddings.
pub struct FileEncoder {
    store: EmbeddingStore,
}

impl FileEncoder {
    pub fn new(store: EmbeddingStore) -> Self {
        Self { store }
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Ok(Self::new(EmbeddingStore::load(path)?))
    }
}

impl SemanticEncoder for FileEncoder {
    fn dim(&self) -> usize {
        self.store.dim()
    }

    fn encode(&self, patch_id: &str) -> Result<FeatureVector, ModelError> {
        self.store
            .get(patch_id)
            .cloned()
            .ok_or_else(|| ModelError::Encoder(format!("no embedding for {patch_id}")))
    }

    fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for id in self.store.ids() {
            h.update(id.as_bytes());
            for v in self.store.get(id).expect("listed id").values() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// A small vision transformer with seeded random weights, frozen. Patches are
/// raster images stored as `image_size × image_size × in_channels` maps.
pub struct TinyVitEncoder {
    cfg: TinyVitConfig,
    dim: usize,
    patch_embed: Linear<f64>,
    cls: Vec<f64>,
    pos: Vec<Vec<f64>>,
    blocks: Vec<TransformerBlock<f64>>,
    norm: LayerNorm<f64>,
    images: FeatureMapStore,
}

impl TinyVitEncoder {
    pub fn new(cfg: TinyVitConfig, dim: usize, images: FeatureMapStore, seed: RngSeed) -> Result<Self, ModelError> {
        if cfg.patch == 0 || cfg.image_size % cfg.patch != 0 {
            return Err(ModelError::Config(format!(
                "image_size {} not divisible by patch {}",
                cfg.image_size, cfg.patch
            )));
        }
        check_dim("tiny_vit image channels", cfg.in_channels, images.channels())?;
        let mut rng = seed.stream("tiny_vit");
        let grid = cfg.image_size / cfg.patch;
        let patch_len = cfg.patch * cfg.patch * cfg.in_channels;
        let patch_embed = Linear::new(patch_len, dim, (1.0 / patch_len as f64).sqrt(), &mut rng);
        let cls = crate::nn::trunc_normal(dim, 0.02, &mut rng);
        let pos = (0..grid * grid + 1).map(|_| crate::nn::trunc_normal(dim, 0.02, &mut rng)).collect();
        let blocks = (0..cfg.depth)
            .map(|_| TransformerBlock::new(dim, cfg.heads, 4, 0.02, &mut rng))
            .collect();
        Ok(Self {
            cfg,
            dim,
            patch_embed,
            cls,
            pos,
            blocks,
            norm: LayerNorm::new(dim),
            images,
        })
    }

    fn run(&self, patch_id: &str) -> Result<Vec<Vec<f64>>, ModelError> {
        let img = self
            .images
            .get(patch_id)
            .ok_or_else(|| ModelError::Encoder(format!("no raster for {patch_id}")))?;
        let s = self.cfg.image_size;
        if img.height() != s || img.width() != s {
            return Err(ModelError::Encoder(format!(
                "raster {patch_id} is {}x{}, encoder expects {s}x{s}",
                img.height(),
                img.width()
            )));
        }
        let p = self.cfg.patch;
        let mut tokens = vec![self.cls.clone()];
        for gi in 0..s / p {
            for gj in 0..s / p {
                let mut flat = Vec::with_capacity(p * p * img.channels());
                for i in 0..p {
                    for j in 0..p {
                        flat.extend_from_slice(img.pixel(gi * p + i, gj * p + j));
                    }
                }
                tokens.push(self.patch_embed.forward(&flat));
            }
        }
        for (t, pe) in tokens.iter_mut().zip(&self.pos) {
            for (a, b) in t.iter_mut().zip(pe) {
                *a += b;
            }
        }
        for b in &self.blocks {
            tokens = b.forward(&tokens).0;
        }
        Ok(tokens.iter().map(|t| self.norm.forward(t).0).collect())
    }
}

impl SemanticEncoder for TinyVitEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, patch_id: &str) -> Result<FeatureVector, ModelError> {
        let mut tokens = self.run(patch_id)?;
        Ok(FeatureVector::new(tokens.swap_remove(0))?)
    }

    fn encode_tokens(&self, patch_id: &str) -> Result<Vec<FeatureVector>, ModelError> {
        self.run(patch_id)?
            .into_iter()
            .map(|t| FeatureVector::new(t).map_err(ModelError::from))
            .collect()
    }

    fn checksum(&self) -> String {
        let mut h = Sha256::new();
        let mut feed = |t: &[f64]| t.iter().for_each(|v| h.update(v.to_le_bytes()));
        for (_, t) in self.patch_embed.tensors() {
            feed(t);
        }
        feed(&self.cls);
        self.pos.iter().for_each(|p| feed(p));
        for b in &self.blocks {
            for (_, t) in b.tensors() {
                feed(t);
            }
        }
        hex::encode(h.finalize())
    }
}

/// Stand-in for a segmentation network's pre-classifier layer: one seeded
/// 3×3 convolution (zero padding) with ReLU.
#[derive(Debug, Clone)]
pub struct ToyConvSegmenter {
    in_c: usize,
    out_c: usize,
    /// `[out][ky][kx][in]`
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl ToyConvSegmenter {
    pub fn new(in_c: usize, out_c: usize, seed: RngSeed) -> Self {
        let mut rng = seed.stream("toy_conv");
        let std = (2.0 / (9 * in_c) as f64).sqrt();
        Self {
            in_c,
            out_c,
            weights: crate::nn::trunc_normal(out_c * 9 * in_c, std, &mut rng),
            bias: crate::nn::trunc_normal(out_c, 0.1, &mut rng),
        }
    }

    /// One segmenter per method, seeded from the method id.
    pub fn for_method(in_c: usize, out_c: usize, seed: RngSeed, method_id: &str) -> Self {
        Self::new(in_c, out_c, seed.derive(&format!("segmenter/{method_id}")))
    }

    pub fn features(&self, image: &FeatureMap) -> Result<FeatureMap, ModelError> {
        check_dim("segmenter input channels", self.in_c, image.channels())?;
        let (h, w, _) = image.shape();
        let map = FeatureMap::from_fn(h, w, self.out_c, |i, j, o| {
            let mut acc = self.bias[o];
            for ky in 0..3 {
                for kx in 0..3 {
                    let (y, x) = (i as isize + ky as isize - 1, j as isize + kx as isize - 1);
                    if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
                        continue;
                    }
                    let px = image.pixel(y as usize, x as usize);
                    let base = ((o * 3 + ky) * 3 + kx) * self.in_c;
                    acc += self.weights[base..base + self.in_c].iter().zip(px).map(|(a, b)| a * b).sum::<f64>();
                }
            }
            acc.max(0.0)
        })?;
        Ok(map)
    }
}

/// Segmentation feature maps for a (patch, method) pair.
pub trait SegmentationProvider: Send + Sync {
    fn seg_map(&self, patch_id: &str, method_id: &str) -> Result<FeatureMap, ModelError>;
}

/// Precomputed maps, one store per method.
#[derive(Debug, Clone, Default)]
pub struct StoredSegmentation {
    pub stores: std::collections::BTreeMap<String, FeatureMapStore>,
}

impl SegmentationProvider for StoredSegmentation {
    fn seg_map(&self, patch_id: &str, method_id: &str) -> Result<FeatureMap, ModelError> {
        self.stores
            .get(method_id)
            .ok_or_else(|| ModelError::Feature(FeatureError::Missing(format!("segmentation features for method {method_id}"))))?
            .get(patch_id)
            .cloned()
            .ok_or_else(|| ModelError::Feature(FeatureError::Missing(format!("{patch_id} (method {method_id})"))))
    }
}

/// Runs a per-method [`ToyConvSegmenter`] over stored raster images.
pub struct ToySegmentation {
    images: FeatureMapStore,
    out_c: usize,
    seed: RngSeed,
}

impl ToySegmentation {
    pub fn new(images: FeatureMapStore, out_c: usize, seed: RngSeed) -> Self {
        Self { images, out_c, seed }
    }
}

impl SegmentationProvider for ToySegmentation {
    fn seg_map(&self, patch_id: &str, method_id: &str) -> Result<FeatureMap, ModelError> {
        let img = self
            .images
            .get(patch_id)
            .ok_or_else(|| ModelError::Feature(FeatureError::Missing(patch_id.to_string())))?;
        ToyConvSegmenter::for_method(self.images.channels(), self.out_c, self.seed, method_id).features(img)
    }
}

// ---------------------------------------------------------------------------
// Assembled model

/// Trainable network plus its frozen encoder.
pub struct QualityModel {
    pub config: ModelConfig,
    pub net: QualityNet<f32>,
    pub encoder: Arc<dyn SemanticEncoder>,
}

impl QualityModel {
    pub fn new(config: ModelConfig, encoder: Arc<dyn SemanticEncoder>, seed: RngSeed) -> Result<Self, ModelError> {
        check_dim("encoder output", config.d_sem, encoder.dim())?;
        let net = QualityNet::new(&config, seed)?;
        Ok(Self { config, net, encoder })
    }

    fn semantic_tokens(&self, patch_id: &str) -> Result<Vec<Vec<f32>>, ModelError> {
        let tokens = match self.config.token_mode {
            TokenMode::Cls => vec![self.encoder.encode(patch_id)?],
            TokenMode::Sequence => self.encoder.encode_tokens(patch_id)?,
        };
        for t in &tokens {
            check_dim("encoder output", self.config.d_sem, t.dim())?;
        }
        Ok(tokens.iter().map(FeatureVector::to_f32).collect())
    }

    /// Frozen parts of the forward pass: encoder tokens and pooled map.
    pub fn prepare_input(&self, patch_id: &str, seg_map: &FeatureMap) -> Result<NetInput<f32>, ModelError> {
        check_dim("segmentation map channels", self.config.seg_channels, seg_map.channels())?;
        Ok(NetInput {
            semantic_tokens: self.semantic_tokens(patch_id)?,
            pooled_segmentation: gap(seg_map).to_f32(),
        })
    }

    pub fn semantic_branch(&self, patch_id: &str) -> Result<FeatureVector, ModelError> {
        let tokens = self.semantic_tokens(patch_id)?;
        let (out, _) = self.net.semantic.forward(&tokens);
        Ok(FeatureVector::new(out.into_iter().map(f64::from).collect())?)
    }

    pub fn segmentation_branch(&self, seg_map: &FeatureMap) -> Result<FeatureVector, ModelError> {
        check_dim("segmentation map channels", self.config.seg_channels, seg_map.channels())?;
        let (out, _) = self.net.segmentation.forward(&gap(seg_map).to_f32());
        Ok(FeatureVector::new(out.into_iter().map(f64::from).collect())?)
    }

    /// Eval-mode quality score in (0, 1).
    pub fn forward(&self, patch_id: &str, seg_map: &FeatureMap) -> Result<f64, ModelError> {
        let input = self.prepare_input(patch_id, seg_map)?;
        Ok(f64::from(self.net.predict(&input)))
    }
}

// ---------------------------------------------------------------------------
// Checkpoints: a binary parameter blob plus a JSON sidecar.

const MAGIC: &[u8; 8] = b"SEGQAPv1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config_hash: String,
    pub step: usize,
    pub train_loss: f64,
    pub metrics: serde_json::Value,
    pub method_id: String,
    pub model: ModelConfig,
}

pub fn sidecar_path(blob: &Path) -> PathBuf {
    let mut p = blob.as_os_str().to_owned();
    p.push(".json");
    PathBuf::from(p)
}

/// Blob layout: magic, u32 tensor count, then per tensor a u32 name length,
/// UTF-8 name, u64 element count and little-endian f32 values.
pub fn write_params<M: Module<f32>>(m: &M, out: &mut impl Write) -> std::io::Result<()> {
    let tensors = m.tensors();
    out.write_all(MAGIC)?;
    out.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in tensors {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(t.len() as u64).to_le_bytes())?;
        for v in t {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Loads parameters into `m`, which must have the same tensor names and sizes.
pub fn read_params<M: Module<f32>>(m: &mut M, input: &mut impl Read) -> Result<(), String> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic).map_err(|e| e.to_string())?;
    if &magic != MAGIC {
        return Err("bad magic".into());
    }
    let mut u32b = [0u8; 4];
    let mut u64b = [0u8; 8];
    input.read_exact(&mut u32b).map_err(|e| e.to_string())?;
    let count = u32::from_le_bytes(u32b) as usize;
    let names: Vec<(String, usize)> = m.tensors().into_iter().map(|(n, t)| (n, t.len())).collect();
    if count != names.len() {
        return Err(format!("blob has {count} tensors, model has {}", names.len()));
    }
    let mut targets = m.tensors_mut();
    for (i, (name, len)) in names.iter().enumerate() {
        input.read_exact(&mut u32b).map_err(|e| e.to_string())?;
        let mut nb = vec![0u8; u32::from_le_bytes(u32b) as usize];
        input.read_exact(&mut nb).map_err(|e| e.to_string())?;
        let got = String::from_utf8(nb).map_err(|e| e.to_string())?;
        if &got != name {
            return Err(format!("tensor {i}: expected {name}, found {got}"));
        }
        input.read_exact(&mut u64b).map_err(|e| e.to_string())?;
        let n = u64::from_le_bytes(u64b) as usize;
        if n != *len {
            return Err(format!("tensor {name}: expected {len} values, found {n}"));
        }
        for v in targets[i].iter_mut() {
            input.read_exact(&mut u32b).map_err(|e| e.to_string())?;
            *v = f32::from_le_bytes(u32b);
        }
    }
    Ok(())
}

pub fn save_checkpoint(net: &QualityNet<f32>, meta: &CheckpointMeta, path: &Path) -> Result<(), ModelError> {
    let err = |msg: String| ModelError::Checkpoint {
        path: path.display().to_string(),
        msg,
    };
    let f = File::create(path).map_err(|e| err(e.to_string()))?;
    let mut w = BufWriter::new(f);
    write_params(net, &mut w).map_err(|e| err(e.to_string()))?;
    w.flush().map_err(|e| err(e.to_string()))?;
    let side = serde_json::to_string_pretty(meta).map_err(|e| err(e.to_string()))?;
    std::fs::write(sidecar_path(path), side + "\n").map_err(|e| err(e.to_string()))
}

pub fn load_checkpoint(path: &Path) -> Result<(QualityNet<f32>, CheckpointMeta), ModelError> {
    let err = |msg: String| ModelError::Checkpoint {
        path: path.display().to_string(),
        msg,
    };
    let side = std::fs::read_to_string(sidecar_path(path)).map_err(|e| err(format!("sidecar: {e}")))?;
    let meta: CheckpointMeta = serde_json::from_str(&side).map_err(|e| err(format!("sidecar: {e}")))?;
    let mut net = QualityNet::new(&meta.model, RngSeed(0))?;
    let f = File::open(path).map_err(|e| err(e.to_string()))?;
    read_params(&mut net, &mut BufReader::new(f)).map_err(err)?;
    Ok((net, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{check_input, check_params};
    use crate::nn::zeros_like;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    fn randv(n: usize, rng: &mut impl Rng) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            d_sem: 8,
            d_fused: 4,
            d_hidden: 4,
            seg_channels: 3,
            heads: 2,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn gap_examples() {
        let constant = FeatureMap::from_fn(3, 5, 2, |_, _, _| 3.5).unwrap();
        assert_eq!(gap(&constant).values(), &[3.5, 3.5]);
        let m = FeatureMap::new(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let oracle = (1.0 + 2.0 + 3.0 + 4.0) / 4.0;
        assert_eq!(gap(&m).values(), &[oracle]);
        assert_eq!(oracle, 2.5);
        let single = FeatureMap::new(1, 1, 3, vec![0.1, -2.0, 7.0]).unwrap();
        assert_eq!(gap(&single).values(), &[0.1, -2.0, 7.0]);
    }

    #[test]
    fn scgb_zero_gate_collapses_to_residual() {
        let mut r = rng();
        let d = 3;
        let f_sem = FeatureVector::new(randv(d, &mut r)).unwrap();
        let f_seg = FeatureVector::new(randv(d, &mut r)).unwrap();
        let p = Scgb {
            w_sem: Linear::zeros(d, d),
            w_seg: Linear::identity(d, d),
            w_fusion: Linear::from_parts(d, d, randv(d * d, &mut r), vec![0.0; d]),
        };
        assert_eq!(scgb_forward(&f_sem, &f_seg, &p).unwrap(), f_seg);

        let zero_sem = FeatureVector::zeros(d);
        let p2 = Scgb {
            w_sem: Linear::from_parts(d, d, randv(d * d, &mut r), vec![0.0; d]),
            ..p
        };
        assert_eq!(scgb_forward(&zero_sem, &f_seg, &p2).unwrap(), f_seg);
    }

    #[test]
    fn scgb_matches_hand_evaluation() {
        // d = 2; every step written out with scalars
        let w_sem = [0.5, -1.0, 2.0, 0.25];
        let w_seg = [1.0, 2.0, -0.5, 1.5];
        let w_fus = [0.3, 0.7, -1.2, 0.4];
        let (b_sem, b_seg, b_fus) = ([0.1, -0.2], [0.05, 0.0], [0.0, 0.3]);
        let f_sem = [0.8, -0.6];
        let f_seg = [-1.5, 2.0];
        let phi = |x: f64| 0.5 * x * (1.0 + libm::erf(x / 2f64.sqrt()));
        let g0 = phi(w_sem[0] * f_sem[0] + w_sem[1] * f_sem[1] + b_sem[0]);
        let g1 = phi(w_sem[2] * f_sem[0] + w_sem[3] * f_sem[1] + b_sem[1]);
        let s0 = w_seg[0] * f_seg[0] + w_seg[1] * f_seg[1] + b_seg[0];
        let s1 = w_seg[2] * f_seg[0] + w_seg[3] * f_seg[1] + b_seg[1];
        let (m0, m1) = (g0 * s0, g1 * s1);
        let o0 = w_fus[0] * m0 + w_fus[1] * m1 + b_fus[0] + s0;
        let o1 = w_fus[2] * m0 + w_fus[3] * m1 + b_fus[1] + s1;
        let p = Scgb {
            w_sem: Linear::from_parts(2, 2, w_sem.to_vec(), b_sem.to_vec()),
            w_seg: Linear::from_parts(2, 2, w_seg.to_vec(), b_seg.to_vec()),
            w_fusion: Linear::from_parts(2, 2, w_fus.to_vec(), b_fus.to_vec()),
        };
        let out = scgb_forward(
            &FeatureVector::new(f_sem.to_vec()).unwrap(),
            &FeatureVector::new(f_seg.to_vec()).unwrap(),
            &p,
        )
        .unwrap();
        assert!((out.values()[0] - o0).abs() < 1e-14);
        assert!((out.values()[1] - o1).abs() < 1e-14);
    }

    #[test]
    fn scgb_rejects_dim_mismatch() {
        let p: Scgb<f64> = Scgb::new(3, 0.1, &mut rng());
        let err = scgb_forward(&FeatureVector::zeros(2), &FeatureVector::zeros(3), &p).unwrap_err();
        assert!(matches!(err, ModelError::Dim { .. }));
    }

    #[test]
    fn scgb_gradients() {
        let mut r = rng();
        for _ in 0..3 {
            let p: Scgb<f64> = Scgb::new(4, 0.7, &mut r);
            let a = randv(4, &mut r);
            let b = randv(4, &mut r);
            let c = randv(4, &mut r);
            let obj = |p: &Scgb<f64>, a: &[f64], b: &[f64]| p.forward(a, b).0.iter().zip(&c).map(|(x, y)| x * y).sum::<f64>();
            let (_, cache) = p.forward(&a, &b);
            let mut g = zeros_like(&p);
            let (da, db) = p.backward(&cache, &c, &mut g);
            assert!(check_params(&p, &g, |m| obj(m, &a, &b)) < 1e-4);
            assert!(check_input(&a, &da, |x| obj(&p, x, &b)) < 1e-4);
            assert!(check_input(&b, &db, |x| obj(&p, &a, x)) < 1e-4);
        }
    }

    #[test]
    fn head_output_in_open_interval_and_saturates() {
        let cfg = small_cfg();
        let mut head: QualityHead<f64> = QualityHead::new(&cfg, &mut rng());
        let x = randv(cfg.d_fused, &mut rng());
        let (s, _) = head.forward(&x, None);
        assert!(s > 0.0 && s < 1.0);
        head.fc2.bias[0] = 20.0;
        let (s, _) = head.forward(&x, None);
        assert!(s > 0.999_999);
    }

    #[test]
    fn semantic_passthrough_is_projection() {
        let cfg = small_cfg();
        let adapter: SemanticAdapter<f64> = SemanticAdapter::passthrough(&cfg, &mut rng());
        let v = randv(cfg.d_sem, &mut rng());
        let (out, _) = adapter.forward(&[v.clone()]);
        assert_eq!(out, adapter.proj.forward(&v));
        assert_eq!(out, v[..cfg.d_fused].to_vec());
    }

    #[test]
    fn segmentation_identity_path() {
        let d = 3;
        let adapter = SegmentationAdapter::<f64> {
            fc1: Linear::identity(d, d),
            fc2: Linear::identity(d, d),
        };
        let m = FeatureMap::from_fn(4, 4, d, |_, _, k| [0.5, -1.0, 2.0][k]).unwrap();
        let v = gap(&m);
        let (out, _) = adapter.forward(v.values());
        let expected: Vec<f64> = v.values().iter().map(|&x| gelu(x)).collect();
        assert_eq!(out, expected);
    }

    #[test]
    fn net_output_range_and_eval_determinism() {
        let cfg = small_cfg();
        let net: QualityNet<f64> = QualityNet::new(&cfg, RngSeed(5)).unwrap();
        let mut r = rng();
        for _ in 0..20 {
            let input = NetInput {
                semantic_tokens: vec![randv(cfg.d_sem, &mut r).iter().map(|v| v * 50.0).collect()],
                pooled_segmentation: randv(cfg.seg_channels, &mut r),
            };
            let a = net.predict(&input);
            assert!(a > 0.0 && a < 1.0);
            assert_eq!(a.to_bits(), net.predict(&input).to_bits());
        }
        let again: QualityNet<f64> = QualityNet::new(&cfg, RngSeed(5)).unwrap();
        assert_eq!(net, again);
    }

    #[test]
    fn toy_segmenter_is_seeded_per_method() {
        let img = FeatureMap::from_fn(4, 4, 3, |i, j, k| ((i + 2 * j + k) % 5) as f64 / 5.0).unwrap();
        let a = ToyConvSegmenter::for_method(3, 6, RngSeed(1), "m1").features(&img).unwrap();
        let b = ToyConvSegmenter::for_method(3, 6, RngSeed(1), "m1").features(&img).unwrap();
        let c = ToyConvSegmenter::for_method(3, 6, RngSeed(1), "m2").features(&img).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.shape(), (4, 4, 6));
        assert!(a.values().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn tiny_vit_is_deterministic() {
        let mut images = FeatureMapStore::new(3);
        let img = FeatureMap::from_fn(8, 8, 3, |i, j, k| (i * j + k) as f64 / 64.0).unwrap();
        images.insert("p", img).unwrap();
        let cfg = TinyVitConfig {
            image_size: 8,
            patch: 4,
            depth: 1,
            heads: 2,
            in_channels: 3,
        };
        let enc = TinyVitEncoder::new(cfg.clone(), 8, images.clone(), RngSeed(3)).unwrap();
        let a = enc.encode("p").unwrap();
        assert_eq!(a.dim(), 8);
        assert_eq!(enc.encode_tokens("p").unwrap().len(), 5);
        let enc2 = TinyVitEncoder::new(cfg, 8, images, RngSeed(3)).unwrap();
        assert_eq!(a, enc2.encode("p").unwrap());
        assert_eq!(enc.checksum(), enc2.checksum());
        assert!(enc.encode("missing").is_err());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let cfg = small_cfg();
        let net: QualityNet<f32> = QualityNet::new(&cfg, RngSeed(8)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        let meta = CheckpointMeta {
            config_hash: "abc".into(),
            step: 3,
            train_loss: 0.5,
            metrics: serde_json::json!({"srocc": 0.9}),
            method_id: "m".into(),
            model: cfg,
        };
        save_checkpoint(&net, &meta, &path).unwrap();
        let (back, meta2) = load_checkpoint(&path).unwrap();
        assert_eq!(back, net);
        assert_eq!(meta2, meta);
    }

    #[test]
    fn config_validation() {
        let mut cfg = small_cfg();
        cfg.heads = 3;
        assert!(cfg.validate().is_err());
        let mut cfg = small_cfg();
        cfg.dropout = 1.0;
        assert!(cfg.validate().is_err());
        assert!(ModelConfig::default().validate().is_ok());
    }
}
