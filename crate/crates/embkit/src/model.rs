//! Toy bi-encoder: hashing embedding bag with mean pooling, a single
//! projection, an optional low-rank adapter, and L2 normalization.
//!
//! The forward pass for a token-id sequence is
//!
//! ```text
//! p = mean of embed rows          (d_embed)
//! z = proj . p + (alpha/r) . B . (A . p)   (d_out; adapter term only when present)
//! h = z / ||z||
//! ```
//!
//! All arithmetic is in f64, and the gradients in [`backward_batch`] are
//! derived by hand through the normalize / projection / adapter / mean-pool /
//! lookup chain so they can be checked against central finite differences.

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::tokenizer::{tokenize, TokenizerConfig};

/// Norm below which [`embed_text`] refuses to normalize.
pub const DEGENERATE_NORM_THRESHOLD: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("cannot embed an empty token sequence")]
    EmptyInput,
    #[error("pre-normalization norm {norm:e} is below {DEGENERATE_NORM_THRESHOLD:e}")]
    DegenerateNorm { norm: f64 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// Low-rank adapter factors. The effective projection becomes
/// `proj + (alpha/rank) * b * a`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    /// First factor, `[rank x d_embed]`. Gaussian-initialized.
    pub a: Array2<f64>,
    /// Second factor, `[d_out x rank]`. Zero-initialized, so a fresh adapter
    /// is an exact no-op on the forward pass.
    pub b: Array2<f64>,
    /// Scale numerator; the applied scale is `alpha / rank`.
    pub alpha: f64,
}

impl LoraAdapter {
    pub fn rank(&self) -> usize {
        self.a.nrows()
    }

    pub fn scale(&self) -> f64 {
        self.alpha / self.rank() as f64
    }
}

/// Dimensions and adapter settings for a fresh model.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    pub d_embed: usize,
    pub d_out: usize,
    /// Adapter rank; 0 disables the adapter entirely.
    pub lora_rank: usize,
    pub lora_alpha: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_embed: 64,
            d_out: 64,
            lora_rank: 8,
            lora_alpha: 16.0,
        }
    }
}

/// All trainable parameters of the bi-encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// Token embedding table, `[hash_buckets x d_embed]`.
    pub embed: Array2<f64>,
    /// Projection applied after pooling, `[d_out x d_embed]`.
    pub proj: Array2<f64>,
    /// Optional low-rank adapter on the projection.
    pub lora: Option<LoraAdapter>,
}

impl ModelParams {
    /// Initialize parameters from a seed. Embedding rows and the adapter's
    /// first factor are drawn from N(0, 0.02), the projection from
    /// N(0, 1/sqrt(d_embed)), and the adapter's second factor is zero.
    ///
    /// Every entry is rounded to f32 precision at init so that a checkpoint
    /// round-trip is the identity on a freshly initialized model.
    pub fn init(hash_buckets: usize, cfg: &ModelConfig, seed: u64) -> Self {
        assert!(cfg.d_out >= 2, "d_out must be >= 2");
        assert!(cfg.d_embed >= 1, "d_embed must be >= 1");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embed_dist = Normal::new(0.0f64, 0.02).unwrap();
        let proj_dist = Normal::new(0.0f64, 1.0 / (cfg.d_embed as f64).sqrt()).unwrap();

        let quantize = |x: f64| x as f32 as f64;
        let embed = Array2::from_shape_fn((hash_buckets, cfg.d_embed), |_| {
            quantize(embed_dist.sample(&mut rng))
        });
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
        let proj = Array2::from_shape_fn((cfg.d_out, cfg.d_embed), |_| {
            quantize(proj_dist.sample(&mut rng))
        });
        let lora = if cfg.lora_rank > 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
            let a = Array2::from_shape_fn((cfg.lora_rank, cfg.d_embed), |_| {
                quantize(embed_dist.sample(&mut rng))
            });
            let b = Array2::zeros((cfg.d_out, cfg.lora_rank));
            Some(LoraAdapter {
                a,
                b,
                alpha: cfg.lora_alpha,
            })
        } else {
            None
        };
        Self { embed, proj, lora }
    }

    pub fn hash_buckets(&self) -> usize {
        self.embed.nrows()
    }

    pub fn d_embed(&self) -> usize {
        self.embed.ncols()
    }

    pub fn d_out(&self) -> usize {
        self.proj.nrows()
    }

    pub fn lora_rank(&self) -> usize {
        self.lora.as_ref().map_or(0, LoraAdapter::rank)
    }

    /// True if any parameter entry is non-finite.
    pub fn has_non_finite(&self) -> bool {
        let bad = |m: &Array2<f64>| m.iter().any(|x| !x.is_finite());
        bad(&self.embed)
            || bad(&self.proj)
            || self
                .lora
                .as_ref()
                .is_some_and(|l| bad(&l.a) || bad(&l.b))
    }
}

/// A unit-norm output vector of the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Array1<f64>);

impl EmbeddingVector {
    pub fn values(&self) -> &Array1<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array1<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Mean of the embedding rows selected by `ids`.
fn mean_pool(params: &ModelParams, ids: &[usize]) -> Result<Array1<f64>, ModelError> {
    let mut pooled = Array1::zeros(params.d_embed());
    for &id in ids {
        if id >= params.hash_buckets() {
            return Err(ModelError::ShapeMismatch(format!(
                "token id {id} out of range for {} buckets",
                params.hash_buckets()
            )));
        }
        pooled += &params.embed.row(id);
    }
    pooled /= ids.len() as f64;
    Ok(pooled)
}

/// Apply the effective projection `proj + (alpha/r) * B * A` to a pooled
/// vector, in factored form.
fn project(params: &ModelParams, pooled: &Array1<f64>) -> Array1<f64> {
    let mut z = params.proj.dot(pooled);
    if let Some(lora) = &params.lora {
        let low = lora.a.dot(pooled);
        z = z + lora.scale() * lora.b.dot(&low);
    }
    z
}

/// Embed a token-id sequence into a unit-norm vector.
///
/// Fails with [`ModelError::EmptyInput`] on an empty sequence and with
/// [`ModelError::DegenerateNorm`] when the pre-normalization norm falls below
/// [`DEGENERATE_NORM_THRESHOLD`] (never returns NaN).
pub fn embed_text(params: &ModelParams, ids: &[usize]) -> Result<EmbeddingVector, ModelError> {
    if ids.is_empty() {
        return Err(ModelError::EmptyInput);
    }
    let pooled = mean_pool(params, ids)?;
    let z = project(params, &pooled);
    let norm = z.dot(&z).sqrt();
    if norm < DEGENERATE_NORM_THRESHOLD {
        return Err(ModelError::DegenerateNorm { norm });
    }
    Ok(EmbeddingVector(z / norm))
}

/// Tokenize and embed in one step.
pub fn encode_text(
    params: &ModelParams,
    tokenizer: &TokenizerConfig,
    text: &str,
    is_query: bool,
) -> Result<EmbeddingVector, ModelError> {
    embed_text(params, &tokenize(text, tokenizer, is_query))
}

/// Cosine similarity between two unit-norm embeddings: their dot product,
/// clamped to [-1, 1].
pub fn cosine_sim(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    a.0.dot(&b.0).clamp(-1.0, 1.0)
}

/// A tokenizer and parameter bundle: everything needed to embed raw text,
/// and the unit that checkpoints serialize.
#[derive(Debug, Clone, PartialEq)]
pub struct BiEncoder {
    pub tokenizer: TokenizerConfig,
    pub params: ModelParams,
}

impl BiEncoder {
    pub fn init(tokenizer: TokenizerConfig, cfg: &ModelConfig, seed: u64) -> Self {
        tokenizer.validate();
        let params = ModelParams::init(tokenizer.hash_buckets, cfg, seed);
        Self { tokenizer, params }
    }

    pub fn encode(&self, text: &str, is_query: bool) -> Result<EmbeddingVector, ModelError> {
        encode_text(&self.params, &self.tokenizer, text, is_query)
    }
}

/// Parameter gradients produced by [`backward_batch`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub embed: Array2<f64>,
    pub proj: Array2<f64>,
    pub lora_a: Option<Array2<f64>>,
    pub lora_b: Option<Array2<f64>>,
    /// When set, `embed` and `proj` were computed but are to be treated as
    /// frozen by the optimizer (adapter-only training).
    pub base_frozen: bool,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams, base_frozen: bool) -> Self {
        Self {
            embed: Array2::zeros(params.embed.raw_dim()),
            proj: Array2::zeros(params.proj.raw_dim()),
            lora_a: params.lora.as_ref().map(|l| Array2::zeros(l.a.raw_dim())),
            lora_b: params.lora.as_ref().map(|l| Array2::zeros(l.b.raw_dim())),
            base_frozen,
        }
    }

    pub fn has_non_finite(&self) -> Option<&'static str> {
        let bad = |m: &Array2<f64>| m.iter().any(|x| !x.is_finite());
        if bad(&self.embed) {
            return Some("embed");
        }
        if bad(&self.proj) {
            return Some("proj");
        }
        if self.lora_a.as_ref().is_some_and(bad) {
            return Some("lora_a");
        }
        if self.lora_b.as_ref().is_some_and(bad) {
            return Some("lora_b");
        }
        None
    }
}

/// `acc += scale * u v^T`.
fn add_scaled_outer(acc: &mut Array2<f64>, u: &Array1<f64>, v: &Array1<f64>, scale: f64) {
    for (i, ui) in u.iter().enumerate() {
        let coeff = scale * ui;
        if coeff == 0.0 {
            continue;
        }
        let mut row = acc.row_mut(i);
        for (j, vj) in v.iter().enumerate() {
            row[j] += coeff * vj;
        }
    }
}

/// Backpropagate upstream gradients `dL/dh` for a batch of sequences into
/// parameter gradients, accumulated across the batch.
///
/// `freeze_base` marks the embedding table and projection as frozen in the
/// returned [`Gradients`] (their values are still computed). Duplicate token
/// ids within a sequence accumulate per-position contributions on the same
/// embedding row.
pub fn backward_batch(
    params: &ModelParams,
    batch: &[Vec<usize>],
    upstream: &[Array1<f64>],
    freeze_base: bool,
) -> Result<Gradients, ModelError> {
    if batch.len() != upstream.len() {
        return Err(ModelError::ShapeMismatch(format!(
            "{} sequences but {} upstream gradients",
            batch.len(),
            upstream.len()
        )));
    }
    let mut grads = Gradients::zeros_like(params, freeze_base);
    for (ids, g) in batch.iter().zip(upstream) {
        if g.len() != params.d_out() {
            return Err(ModelError::ShapeMismatch(format!(
                "upstream gradient has dim {} but d_out is {}",
                g.len(),
                params.d_out()
            )));
        }
        if ids.is_empty() {
            return Err(ModelError::EmptyInput);
        }
        let pooled = mean_pool(params, ids)?;
        let z = project(params, &pooled);
        let norm = z.dot(&z).sqrt();
        if norm < DEGENERATE_NORM_THRESHOLD {
            return Err(ModelError::DegenerateNorm { norm });
        }
        let h = &z / norm;

        // h = z/||z||  =>  dL/dz = (g - (g.h) h) / ||z||
        let gh = g.dot(&h);
        let dz = (g - &(gh * &h)) / norm;

        // z = proj.p + s B (A p)
        add_scaled_outer(&mut grads.proj, &dz, &pooled, 1.0);
        let mut dp = params.proj.t().dot(&dz);
        if let Some(lora) = &params.lora {
            let s = lora.scale();
            let low = lora.a.dot(&pooled); // A p, [rank]
            let bt_dz = lora.b.t().dot(&dz); // B^T dz, [rank]
            add_scaled_outer(grads.lora_b.as_mut().unwrap(), &dz, &low, s);
            add_scaled_outer(grads.lora_a.as_mut().unwrap(), &bt_dz, &pooled, s);
            dp = dp + s * lora.a.t().dot(&bt_dz);
        }

        // p = mean of embed rows: each position contributes dp / len.
        let inv_len = 1.0 / ids.len() as f64;
        for &id in ids {
            let mut row = grads.embed.row_mut(id);
            for (j, dpj) in dp.iter().enumerate() {
                row[j] += dpj * inv_len;
            }
        }
    }
    Ok(grads)
}
