//! Condition embeddings, the providers that produce them, and the affine map
//! from a condition to per-layer style codes.

use candle_core::{Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::generator::GeneratorSpec;
use crate::image::ImageTensor;
use crate::nn::{Linear, ParamStore};
use crate::resample::{resize_tensor, Filter};

/// Width of ViT-B/32 image and text embeddings.
pub const DEFAULT_EMBEDDING_DIM: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingSource {
    Image,
    Text,
    Interpolated,
}

impl EmbeddingSource {
    pub fn as_str(self) -> &'static str {
        match self {
            EmbeddingSource::Image => "image",
            EmbeddingSource::Text => "text",
            EmbeddingSource::Interpolated => "interpolated",
        }
    }
}

/// A point in the shared image/text embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionEmbedding {
    values: Vec<f32>,
    source: EmbeddingSource,
}

impl ConditionEmbedding {
    pub fn new(values: Vec<f32>, source: EmbeddingSource) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::validation("embedding must be non-empty"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(format!("embedding entry {i} is not finite")));
        }
        Ok(Self { values, source })
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn source(&self) -> EmbeddingSource {
        self.source
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt()
    }

    /// Unit-length copy; the zero vector is returned unchanged.
    pub fn normalized(&self) -> Self {
        let n = self.norm();
        if n == 0.0 {
            return self.clone();
        }
        Self {
            values: self.values.iter().map(|&v| (v as f64 / n) as f32).collect(),
            source: self.source,
        }
    }

    pub fn cosine_similarity(&self, other: &Self) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::validation(format!(
                "embedding length mismatch: {} vs {}",
                self.dim(),
                other.dim()
            )));
        }
        let dot: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum();
        Ok(dot / (self.norm() * other.norm()))
    }

    /// `1×D` tensor.
    pub fn to_tensor(&self, device: &Device) -> Result<Tensor> {
        Ok(Tensor::from_slice(&self.values, (1, self.values.len()), device)?)
    }
}

/// `β·text + (1 − β)·image`, elementwise and unnormalized.
pub fn interpolate_condition(
    text: &ConditionEmbedding,
    image: &ConditionEmbedding,
    beta: f64,
) -> Result<ConditionEmbedding> {
    if text.dim() != image.dim() {
        return Err(Error::validation(format!(
            "cannot interpolate embeddings of length {} and {}",
            text.dim(),
            image.dim()
        )));
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::validation(format!("beta {beta} outside [0, 1]")));
    }
    let values = text
        .values
        .iter()
        .zip(&image.values)
        .map(|(&t, &i)| (beta * t as f64 + (1.0 - beta) * i as f64) as f32)
        .collect();
    ConditionEmbedding::new(values, EmbeddingSource::Interpolated)
}

/// Arithmetic mean of several embeddings, taken before any normalization.
pub fn mean_embedding(embeddings: &[ConditionEmbedding]) -> Result<ConditionEmbedding> {
    let first = embeddings
        .first()
        .ok_or_else(|| Error::validation("cannot average zero embeddings"))?;
    if embeddings.len() == 1 {
        return Ok(first.clone());
    }
    let mut acc = vec![0f64; first.dim()];
    for e in embeddings {
        if e.dim() != first.dim() {
            return Err(Error::validation("embeddings differ in length"));
        }
        acc.iter_mut().zip(&e.values).for_each(|(a, &v)| *a += v as f64);
    }
    let n = embeddings.len() as f64;
    ConditionEmbedding::new(acc.into_iter().map(|v| (v / n) as f32).collect(), first.source)
}

/// How a provider wants images prepared before embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    /// Square side the RGB input is resized to.
    pub resize: usize,
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderSpec {
    pub name: String,
    pub embedding_dim: usize,
    pub preprocessing: Preprocessing,
}

impl ProviderSpec {
    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 {
            return Err(Error::config("embedding_dim must be positive"));
        }
        Ok(())
    }
}

/// A vision-language encoder with aligned image and text branches.
pub trait EmbeddingProvider: Send + Sync {
    fn spec(&self) -> &ProviderSpec;

    /// `B×3×H×W` RGB in `[0, 1]` → `B×D`, differentiable with respect to the input.
    fn embed_image_batch(&self, images: &Tensor) -> Result<Tensor>;

    fn embed_text(&self, prompt: &str) -> Result<ConditionEmbedding>;

    fn embed_image(&self, image: &ImageTensor) -> Result<ConditionEmbedding> {
        if image.channels() != 3 {
            return Err(Error::shape(format!(
                "image embedding needs RGB, got {} planes",
                image.channels()
            )));
        }
        let t = image.to_tensor(&Device::Cpu)?;
        let e = self.embed_image_batch(&t)?.squeeze(0)?.to_vec1::<f32>()?;
        ConditionEmbedding::new(e, EmbeddingSource::Image)
    }
}

pub(crate) fn l2_normalize_rows(x: &Tensor) -> Result<Tensor> {
    let norm = x.sqr()?.sum_keepdim(1)?.affine(1.0, 1e-12)?.sqrt()?;
    Ok(x.broadcast_div(&norm)?)
}

fn hash_seed(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Offline stand-in for a pretrained encoder.
///
/// Text maps to a unit vector drawn from a stream seeded by the prompt's
/// hash. Images are area-pooled to a small grid and sent through a fixed
/// hash-seeded random projection, so embeddings vary smoothly with the image
/// and gradients reach the pixels.
#[derive(Debug, Clone)]
pub struct StubProvider {
    spec: ProviderSpec,
    projection: Tensor,
}

impl StubProvider {
    pub const NAME: &'static str = "stub-hash-v1";
    const GRID: usize = 8;

    pub fn new() -> Self {
        Self::with_dim(DEFAULT_EMBEDDING_DIM)
    }

    pub fn with_dim(embedding_dim: usize) -> Self {
        let inputs = 3 * Self::GRID * Self::GRID;
        let mut rng = ChaCha8Rng::seed_from_u64(hash_seed(b"textir stub image projection"));
        let scale = (1.0 / inputs as f64).sqrt();
        let values: Vec<f32> = (0..inputs * embedding_dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                (z * scale) as f32
            })
            .collect();
        let projection = Tensor::from_vec(values, (inputs, embedding_dim), &Device::Cpu)
            .expect("projection shape");
        Self {
            spec: ProviderSpec {
                name: Self::NAME.to_string(),
                embedding_dim,
                preprocessing: Preprocessing {
                    resize: Self::GRID,
                    mean: [0.5; 3],
                    std: [0.5; 3],
                },
            },
            projection,
        }
    }
}

impl Default for StubProvider {
    fn default() -> Self {
        Self::new()
    }
}

impl EmbeddingProvider for StubProvider {
    fn spec(&self) -> &ProviderSpec {
        &self.spec
    }

    fn embed_image_batch(&self, images: &Tensor) -> Result<Tensor> {
        let (b, c, _, _) = images.dims4()?;
        if c != 3 {
            return Err(Error::shape(format!("image embedding needs RGB, got {c} planes")));
        }
        let g = Self::GRID;
        let pooled = resize_tensor(images, g, g, Filter::Area)?.affine(2.0, -1.0)?;
        let flat = pooled.reshape((b, 3 * g * g))?;
        let projection = self
            .projection
            .to_device(images.device())?
            .to_dtype(images.dtype())?;
        l2_normalize_rows(&flat.matmul(&projection)?)
    }

    fn embed_text(&self, prompt: &str) -> Result<ConditionEmbedding> {
        if prompt.trim().is_empty() {
            return Err(Error::validation("prompt must be non-empty"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(hash_seed(prompt.as_bytes()));
        let raw: Vec<f64> = (0..self.spec.embedding_dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        ConditionEmbedding::new(
            raw.into_iter().map(|v| (v / norm) as f32).collect(),
            EmbeddingSource::Text,
        )
    }
}

/// Per-layer style vectors, coarse to fine: `[w⁰, w¹₁, w¹₂, …, wˡ₁, wˡ₂]`.
/// Each entry is `B×dimₖ`.
#[derive(Debug, Clone)]
pub struct StyleCode {
    codes: Vec<Tensor>,
}

impl StyleCode {
    pub fn new(codes: Vec<Tensor>, levels: usize) -> Result<Self> {
        if codes.len() != 2 * levels + 1 {
            return Err(Error::config(format!(
                "{} style vectors for {levels} upsampling levels (need {})",
                codes.len(),
                2 * levels + 1
            )));
        }
        Ok(Self { codes })
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    /// The level-0 code.
    pub fn base(&self) -> &Tensor {
        &self.codes[0]
    }

    /// `(wⁱ₁, wⁱ₂)` for `i ≥ 1`.
    pub fn level(&self, i: usize) -> (&Tensor, &Tensor) {
        (&self.codes[2 * i - 1], &self.codes[2 * i])
    }

    pub fn codes(&self) -> &[Tensor] {
        &self.codes
    }

    /// Copy with vector `k` replaced.
    pub fn with_code(&self, k: usize, code: Tensor) -> Self {
        let mut codes = self.codes.clone();
        codes[k] = code;
        Self { codes }
    }

    /// First batch entry of each vector.
    pub fn to_vecs(&self) -> Result<Vec<Vec<f32>>> {
        self.codes
            .iter()
            .map(|c| Ok(c.get(0)?.to_vec1::<f32>()?))
            .collect()
    }
}

/// The single affine layer taking a condition to the flattened style code.
#[derive(Debug, Clone)]
pub struct StyleMapping {
    fc: Linear,
    dims: Vec<usize>,
    levels: usize,
}

impl StyleMapping {
    pub fn new(store: &mut ParamStore, spec: &GeneratorSpec) -> Result<Self> {
        let dims = spec.style_dims();
        let fc = Linear::new(store, "mapping.fc", spec.embedding_dim, dims.iter().sum(), 1.0)?;
        Ok(Self {
            fc,
            dims,
            levels: spec.levels,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.fc.in_features()
    }

    pub fn bias(&self) -> &Tensor {
        self.fc.bias()
    }

    /// `B×D` conditions → style code (reshape of one affine output).
    pub fn forward(&self, conditions: &Tensor) -> Result<StyleCode> {
        let (_, d) = conditions.dims2()?;
        if d != self.input_dim() {
            return Err(Error::config(format!(
                "condition has {d} entries, mapping expects {}",
                self.input_dim()
            )));
        }
        let flat = self.fc.forward(conditions)?;
        let mut offset = 0;
        let mut codes = Vec::with_capacity(self.dims.len());
        for &n in &self.dims {
            codes.push(flat.narrow(1, offset, n)?);
            offset += n;
        }
        StyleCode::new(codes, self.levels)
    }
}

/// Maps one condition to its style code.
pub fn condition_to_style_codes(c: &ConditionEmbedding, mapping: &StyleMapping) -> Result<StyleCode> {
    let device = mapping.bias().device().clone();
    mapping.forward(&c.to_tensor(&device)?)
}
