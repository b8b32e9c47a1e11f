//! Minimal dense layers with explicit forward caches and backward passes.
//!
//! Layers are generic over [`Scalar`] so the same code runs in `f32` for
//! training and in `f64` for finite-difference gradient checks. Gradients are
//! accumulated into a value of the same type as the layer (see [`zeros_like`]).

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Default + Send + Sync + Sum + AddAssign + SubAssign + MulAssign + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[inline]
pub fn cast<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("f64 converts to scalar")
}

#[inline]
pub fn to_f64<T: Scalar>(x: T) -> f64 {
    x.to_f64().expect("scalar converts to f64")
}

/// Exact (erf-based) GELU.
pub fn gelu<T: Scalar>(x: T) -> T {
    let v = to_f64(x);
    cast(0.5 * v * (1.0 + libm::erf(v / std::f64::consts::SQRT_2)))
}

pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let v = to_f64(x);
    let cdf = 0.5 * (1.0 + libm::erf(v / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * v * v).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cast(cdf + v * pdf)
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Anything holding trainable tensors. `tensors` and `tensors_mut` must list
/// the same tensors in the same order.
pub trait Module<T: Scalar> {
    fn tensors(&self) -> Vec<(String, &Vec<T>)>;
    fn tensors_mut(&mut self) -> Vec<&mut Vec<T>>;

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    fn zero_(&mut self) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v = T::zero());
        }
    }
}

/// Gradient accumulator with the same layout as `m`.
pub fn zeros_like<T: Scalar, M: Module<T> + Clone>(m: &M) -> M {
    let mut g = m.clone();
    g.zero_();
    g
}

pub(crate) fn prefixed<'a, T>(prefix: &str, items: Vec<(String, &'a Vec<T>)>) -> Vec<(String, &'a Vec<T>)> {
    items.into_iter().map(|(n, t)| (format!("{prefix}.{n}"), t)).collect()
}

/// Weight init: normal(0, std) truncated to two standard deviations.
pub fn trunc_normal<T: Scalar>(n: usize, std: f64, rng: &mut impl Rng) -> Vec<T> {
    if std == 0.0 {
        return vec![T::zero(); n];
    }
    let dist = Normal::new(0.0, std).expect("valid std");
    (0..n)
        .map(|_| loop {
            let v: f64 = dist.sample(rng);
            if v.abs() <= 2.0 * std {
                break cast(v);
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `out_dim × in_dim`.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(in_dim: usize, out_dim: usize, std: f64, rng: &mut impl Rng) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: trunc_normal(in_dim * out_dim, std, rng),
            bias: vec![T::zero(); out_dim],
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![T::zero(); in_dim * out_dim],
            bias: vec![T::zero(); out_dim],
        }
    }

    /// Identity on the leading `min(in, out)` coordinates, zero bias.
    pub fn identity(in_dim: usize, out_dim: usize) -> Self {
        let mut l = Self::zeros(in_dim, out_dim);
        for i in 0..in_dim.min(out_dim) {
            l.weight[i * in_dim + i] = T::one();
        }
        l
    }

    pub fn from_parts(in_dim: usize, out_dim: usize, weight: Vec<T>, bias: Vec<T>) -> Self {
        assert_eq!(weight.len(), in_dim * out_dim, "weight shape");
        assert_eq!(bias.len(), out_dim, "bias shape");
        Self {
            in_dim,
            out_dim,
            weight,
            bias,
        }
    }

    pub fn forward(&self, x: &[T]) -> Vec<T> {
        debug_assert_eq!(x.len(), self.in_dim);
        self.weight
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, &b)| row.iter().zip(x).fold(b, |acc, (&w, &xi)| acc + w * xi))
            .collect()
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&self, x: &[T], dy: &[T], grad: &mut Linear<T>) -> Vec<T> {
        let mut dx = vec![T::zero(); self.in_dim];
        for (o, &g) in dy.iter().enumerate() {
            if g == T::zero() {
                continue;
            }
            grad.bias[o] += g;
            let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
            let grow = &mut grad.weight[o * self.in_dim..(o + 1) * self.in_dim];
            for i in 0..self.in_dim {
                grow[i] += g * x[i];
                dx[i] += row[i] * g;
            }
        }
        dx
    }
}

impl<T: Scalar> Module<T> for Linear<T> {
    fn tensors(&self) -> Vec<(String, &Vec<T>)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }
    fn tensors_mut(&mut self) -> Vec<&mut Vec<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache<T> {
    xhat: Vec<T>,
    inv_std: T,
}

impl<T: Scalar> LayerNorm<T> {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: vec![T::one(); dim],
            beta: vec![T::zero(); dim],
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &[T]) -> (Vec<T>, LayerNormCache<T>) {
        let n: T = cast(x.len() as f64);
        let mean = x.iter().copied().sum::<T>() / n;
        let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let inv_std = T::one() / (var + cast(self.eps)).sqrt();
        let xhat: Vec<T> = x.iter().map(|&v| (v - mean) * inv_std).collect();
        let y = xhat
            .iter()
            .zip(self.gamma.iter().zip(&self.beta))
            .map(|(&h, (&g, &b))| h * g + b)
            .collect();
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&self, cache: &LayerNormCache<T>, dy: &[T], grad: &mut LayerNorm<T>) -> Vec<T> {
        let n = dy.len();
        let nf: T = cast(n as f64);
        let mut dxhat = vec![T::zero(); n];
        let mut sum_d = T::zero();
        let mut sum_dx = T::zero();
        for i in 0..n {
            grad.gamma[i] += dy[i] * cache.xhat[i];
            grad.beta[i] += dy[i];
            dxhat[i] = dy[i] * self.gamma[i];
            sum_d += dxhat[i];
            sum_dx += dxhat[i] * cache.xhat[i];
        }
        (0..n)
            .map(|i| cache.inv_std / nf * (nf * dxhat[i] - sum_d - cache.xhat[i] * sum_dx))
            .collect()
    }
}

impl<T: Scalar> Module<T> for LayerNorm<T> {
    fn tensors(&self) -> Vec<(String, &Vec<T>)> {
        vec![("gamma".into(), &self.gamma), ("beta".into(), &self.beta)]
    }
    fn tensors_mut(&mut self) -> Vec<&mut Vec<T>> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

/// Multi-head self-attention over a token sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfAttention<T> {
    pub heads: usize,
    pub q: Linear<T>,
    pub k: Linear<T>,
    pub v: Linear<T>,
    pub out: Linear<T>,
}

#[derive(Debug, Clone)]
pub struct AttentionCache<T> {
    x: Vec<Vec<T>>,
    q: Vec<Vec<T>>,
    k: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    /// `attn[h][t][s]`
    attn: Vec<Vec<Vec<T>>>,
    o: Vec<Vec<T>>,
}

impl<T: Scalar> SelfAttention<T> {
    pub fn new(dim: usize, heads: usize, std: f64, rng: &mut impl Rng) -> Self {
        assert!(heads > 0 && dim % heads == 0, "dim {dim} not divisible by {heads} heads");
        Self {
            heads,
            q: Linear::new(dim, dim, std, rng),
            k: Linear::new(dim, dim, std, rng),
            v: Linear::new(dim, dim, std, rng),
            out: Linear::new(dim, dim, std, rng),
        }
    }

    fn head_dim(&self) -> usize {
        self.q.out_dim / self.heads
    }

    pub fn forward(&self, x: &[Vec<T>]) -> (Vec<Vec<T>>, AttentionCache<T>) {
        let len = x.len();
        let dh = self.head_dim();
        let scale: T = cast(1.0 / (dh as f64).sqrt());
        let q: Vec<Vec<T>> = x.iter().map(|t| self.q.forward(t)).collect();
        let k: Vec<Vec<T>> = x.iter().map(|t| self.k.forward(t)).collect();
        let v: Vec<Vec<T>> = x.iter().map(|t| self.v.forward(t)).collect();
        let dim = self.q.out_dim;
        let mut o = vec![vec![T::zero(); dim]; len];
        let mut attn = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let r = h * dh..(h + 1) * dh;
            let mut a_h = Vec::with_capacity(len);
            for t in 0..len {
                let scores: Vec<T> = (0..len)
                    .map(|s| q[t][r.clone()].iter().zip(&k[s][r.clone()]).map(|(&a, &b)| a * b).sum::<T>() * scale)
                    .collect();
                let max = scores.iter().copied().fold(T::neg_infinity(), T::max);
                let exps: Vec<T> = scores.iter().map(|&s| (s - max).exp()).collect();
                let z: T = exps.iter().copied().sum();
                let a: Vec<T> = exps.into_iter().map(|e| e / z).collect();
                for s in 0..len {
                    for idx in r.clone() {
                        o[t][idx] += a[s] * v[s][idx];
                    }
                }
                a_h.push(a);
            }
            attn.push(a_h);
        }
        let y = o.iter().map(|ot| self.out.forward(ot)).collect();
        (
            y,
            AttentionCache {
                x: x.to_vec(),
                q,
                k,
                v,
                attn,
                o,
            },
        )
    }

    pub fn backward(&self, c: &AttentionCache<T>, dy: &[Vec<T>], grad: &mut SelfAttention<T>) -> Vec<Vec<T>> {
        let len = dy.len();
        let dh = self.head_dim();
        let dim = self.q.out_dim;
        let scale: T = cast(1.0 / (dh as f64).sqrt());
        let d_o: Vec<Vec<T>> = (0..len).map(|t| self.out.backward(&c.o[t], &dy[t], &mut grad.out)).collect();
        let mut dq = vec![vec![T::zero(); dim]; len];
        let mut dk = vec![vec![T::zero(); dim]; len];
        let mut dv = vec![vec![T::zero(); dim]; len];
        for h in 0..self.heads {
            let r = h * dh..(h + 1) * dh;
            for t in 0..len {
                let a = &c.attn[h][t];
                let da: Vec<T> = (0..len)
                    .map(|s| d_o[t][r.clone()].iter().zip(&c.v[s][r.clone()]).map(|(&g, &vv)| g * vv).sum())
                    .collect();
                let dot: T = a.iter().zip(&da).map(|(&ai, &di)| ai * di).sum();
                for s in 0..len {
                    for idx in r.clone() {
                        dv[s][idx] += a[s] * d_o[t][idx];
                    }
                    let ds = a[s] * (da[s] - dot) * scale;
                    if ds == T::zero() {
                        continue;
                    }
                    for idx in r.clone() {
                        dq[t][idx] += ds * c.k[s][idx];
                        dk[s][idx] += ds * c.q[t][idx];
                    }
                }
            }
        }
        let mut dx = vec![vec![T::zero(); self.q.in_dim]; len];
        for t in 0..len {
            let a = self.q.backward(&c.x[t], &dq[t], &mut grad.q);
            let b = self.k.backward(&c.x[t], &dk[t], &mut grad.k);
            let d = self.v.backward(&c.x[t], &dv[t], &mut grad.v);
            for i in 0..dx[t].len() {
                dx[t][i] = a[i] + b[i] + d[i];
            }
        }
        dx
    }
}

impl<T: Scalar> Module<T> for SelfAttention<T> {
    fn tensors(&self) -> Vec<(String, &Vec<T>)> {
        let mut v = prefixed("q", self.q.tensors());
        v.extend(prefixed("k", self.k.tensors()));
        v.extend(prefixed("v", self.v.tensors()));
        v.extend(prefixed("out", self.out.tensors()));
        v
    }
    fn tensors_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut v = self.q.tensors_mut();
        v.extend(self.k.tensors_mut());
        v.extend(self.v.tensors_mut());
        v.extend(self.out.tensors_mut());
        v
    }
}

/// Pre-norm transformer block: `x + attn(ln1(x))`, then `+ ffn(ln2(·))`,
/// with a GELU feed-forward of width `expansion × dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerBlock<T> {
    pub ln1: LayerNorm<T>,
    pub attn: SelfAttention<T>,
    pub ln2: LayerNorm<T>,
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

#[derive(Debug, Clone)]
pub struct BlockCache<T> {
    ln1: Vec<LayerNormCache<T>>,
    attn: AttentionCache<T>,
    ln2: Vec<LayerNormCache<T>>,
    h2: Vec<Vec<T>>,
    pre_act: Vec<Vec<T>>,
    act: Vec<Vec<T>>,
}

impl<T: Scalar> TransformerBlock<T> {
    pub fn new(dim: usize, heads: usize, expansion: usize, std: f64, rng: &mut impl Rng) -> Self {
        Self {
            ln1: LayerNorm::new(dim),
            attn: SelfAttention::new(dim, heads, std, rng),
            ln2: LayerNorm::new(dim),
            fc1: Linear::new(dim, dim * expansion, std, rng),
            fc2: Linear::new(dim * expansion, dim, std, rng),
        }
    }

    pub fn forward(&self, x: &[Vec<T>]) -> (Vec<Vec<T>>, BlockCache<T>) {
        let (h1, ln1): (Vec<_>, Vec<_>) = x.iter().map(|t| self.ln1.forward(t)).unzip();
        let (a, attn) = self.attn.forward(&h1);
        let x1: Vec<Vec<T>> = x.iter().zip(&a).map(|(xi, ai)| xi.iter().zip(ai).map(|(&p, &q)| p + q).collect()).collect();
        let (h2, ln2): (Vec<_>, Vec<_>) = x1.iter().map(|t| self.ln2.forward(t)).unzip();
        let pre_act: Vec<Vec<T>> = h2.iter().map(|t| self.fc1.forward(t)).collect();
        let act: Vec<Vec<T>> = pre_act.iter().map(|t| t.iter().map(|&v| gelu(v)).collect()).collect();
        let y = x1
            .iter()
            .zip(&act)
            .map(|(xi, ai)| xi.iter().zip(self.fc2.forward(ai)).map(|(&p, q)| p + q).collect())
            .collect();
        (
            y,
            BlockCache {
                ln1,
                attn,
                ln2,
                h2,
                pre_act,
                act,
            },
        )
    }

    pub fn backward(&self, c: &BlockCache<T>, dy: &[Vec<T>], grad: &mut TransformerBlock<T>) -> Vec<Vec<T>> {
        let len = dy.len();
        let mut dx1: Vec<Vec<T>> = dy.to_vec();
        for t in 0..len {
            let dact = self.fc2.backward(&c.act[t], &dy[t], &mut grad.fc2);
            let dpre: Vec<T> = dact.iter().zip(&c.pre_act[t]).map(|(&g, &p)| g * gelu_grad(p)).collect();
            let dh2 = self.fc1.backward(&c.h2[t], &dpre, &mut grad.fc1);
            let dln = self.ln2.backward(&c.ln2[t], &dh2, &mut grad.ln2);
            for (a, b) in dx1[t].iter_mut().zip(dln) {
                *a += b;
            }
        }
        let dh1 = self.attn.backward(&c.attn, &dx1, &mut grad.attn);
        let mut dx = dx1;
        for t in 0..len {
            let dln = self.ln1.backward(&c.ln1[t], &dh1[t], &mut grad.ln1);
            for (a, b) in dx[t].iter_mut().zip(dln) {
                *a += b;
            }
        }
        dx
    }

    /// Zeroes the attention output and second feed-forward projections so the
    /// block is an exact identity map.
    pub fn zero_residual_branches(&mut self) {
        self.attn.out.zero_();
        self.fc2.zero_();
    }
}

impl<T: Scalar> Module<T> for TransformerBlock<T> {
    fn tensors(&self) -> Vec<(String, &Vec<T>)> {
        let mut v = prefixed("ln1", self.ln1.tensors());
        v.extend(prefixed("attn", self.attn.tensors()));
        v.extend(prefixed("ln2", self.ln2.tensors()));
        v.extend(prefixed("fc1", self.fc1.tensors()));
        v.extend(prefixed("fc2", self.fc2.tensors()));
        v
    }
    fn tensors_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut v = self.ln1.tensors_mut();
        v.extend(self.attn.tensors_mut());
        v.extend(self.ln2.tensors_mut());
        v.extend(self.fc1.tensors_mut());
        v.extend(self.fc2.tensors_mut());
        v
    }
}

/// Inverted dropout. Returns the output and the per-element scale mask.
pub fn dropout<T: Scalar>(x: &[T], rate: f64, rng: Option<&mut ChaCha8Rng>) -> (Vec<T>, Option<Vec<T>>) {
    match rng {
        Some(rng) if rate > 0.0 => {
            let keep: T = cast(1.0 / (1.0 - rate));
            let mask: Vec<T> = x
                .iter()
                .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
                .collect();
            (x.iter().zip(&mask).map(|(&a, &m)| a * m).collect(), Some(mask))
        }
        _ => (x.to_vec(), None),
    }
}

pub fn apply_mask<T: Scalar>(dy: &[T], mask: &Option<Vec<T>>) -> Vec<T> {
    match mask {
        Some(m) => dy.iter().zip(m).map(|(&g, &k)| g * k).collect(),
        None => dy.to_vec(),
    }
}
