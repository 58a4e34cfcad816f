//! Loading a checkpoint and answering restore requests against it.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use candle_core::Device;
use serde::Serialize;

use textir::checkpoint::{file_hash, load_checkpoint};
use textir::clip::ClipProvider;
use textir::conditioning::{interpolate_condition, EmbeddingSource, ProviderSpec};
use textir::degradations::{compose_inpaint, degrade_gray, degrade_inpaint, degrade_sr, TaskSample};
use textir::generator::StrengthFactor;
use textir::resample::resize_bicubic;
use textir::{ConditionEmbedding, EmbeddingProvider, GeneratorSpec, ImageTensor, StubProvider, Task, TextIr};

use crate::request::{RequestError, RestoreRequest};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("invalid request: {0}")]
    Invalid(#[from] RequestError),
    #[error("model restores {model}, request asked for {requested}")]
    TaskMismatch { model: Task, requested: Task },
    #[error("no model loaded")]
    NotLoaded,
    #[error("too many requests in flight")]
    Busy,
    #[error(transparent)]
    Internal(#[from] textir::Error),
}

impl ServiceError {
    pub fn status(&self) -> u16 {
        match self {
            ServiceError::Invalid(_) => 400,
            ServiceError::TaskMismatch { .. } => 409,
            ServiceError::NotLoaded => 503,
            ServiceError::Busy => 429,
            ServiceError::Internal(_) => 500,
        }
    }
}

/// What the client gets back besides the pixels.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RestoreMetadata {
    pub model_version: String,
    pub checkpoint_hash: String,
    pub timing_ms: f64,
    pub condition_source: EmbeddingSource,
    pub beta: f64,
    pub strength: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct RestoreOutput {
    pub png: Vec<u8>,
    pub image: ImageTensor,
    pub metadata: RestoreMetadata,
}

/// A degraded input ready for any number of conditions.
pub struct Prepared {
    sample: TaskSample,
    strength: Option<StrengthFactor>,
    image_embedding: ConditionEmbedding,
    text_embedding: Option<ConditionEmbedding>,
    seed: u64,
}

impl Prepared {
    pub fn sample(&self) -> &TaskSample {
        &self.sample
    }
}

/// Weights, provider and identity of one checkpoint; immutable once built.
pub struct LoadedModel {
    model: TextIr,
    provider: Arc<dyn EmbeddingProvider>,
    checkpoint_hash: String,
    step: u64,
}

fn provider_for(spec: Option<&ProviderSpec>, model_dim: usize, clip_dir: Option<&Path>, dev: &Device) -> textir::Result<Arc<dyn EmbeddingProvider>> {
    let provider: Arc<dyn EmbeddingProvider> = match spec.map(|s| s.name.as_str()) {
        None | Some(StubProvider::NAME) => Arc::new(StubProvider::with_dim(model_dim)),
        Some(ClipProvider::NAME) => {
            let dir: PathBuf = clip_dir
                .map(Path::to_path_buf)
                .or_else(ClipProvider::dir_from_env)
                .ok_or_else(|| textir::Error::BackendMissing("checkpoint needs CLIP weights; set TEXTIR_CLIP_DIR".into()))?;
            Arc::new(ClipProvider::load(dir, dev)?)
        }
        Some(other) => return Err(textir::Error::BackendMissing(format!("unknown embedding provider `{other}`"))),
    };
    if let Some(spec) = spec {
        if spec != provider.spec() {
            return Err(textir::Error::Config(format!(
                "checkpoint was trained with provider {spec:?}, available provider is {:?}",
                provider.spec()
            )));
        }
    }
    Ok(provider)
}

impl LoadedModel {
    pub fn load(path: impl AsRef<Path>, clip_dir: Option<&Path>, dev: &Device) -> textir::Result<Self> {
        let path = path.as_ref();
        let checkpoint_hash = file_hash(path)?;
        let (model, ckpt) = load_checkpoint(path, None, dev)?;
        let provider = provider_for(ckpt.provider.as_ref(), ckpt.spec.embedding_dim, clip_dir, dev)?;
        Ok(Self {
            model,
            provider,
            checkpoint_hash,
            step: ckpt.step,
        })
    }

    /// An in-memory model, e.g. for tests.
    pub fn from_parts(model: TextIr, provider: Arc<dyn EmbeddingProvider>, checkpoint_hash: String, step: u64) -> textir::Result<Self> {
        if provider.spec().embedding_dim != model.spec().embedding_dim {
            return Err(textir::Error::Config(format!(
                "provider embeds to {} dims, model expects {}",
                provider.spec().embedding_dim,
                model.spec().embedding_dim
            )));
        }
        Ok(Self {
            model,
            provider,
            checkpoint_hash,
            step,
        })
    }

    pub fn model(&self) -> &TextIr {
        &self.model
    }

    pub fn spec(&self) -> &GeneratorSpec {
        self.model.spec()
    }

    pub fn provider(&self) -> &Arc<dyn EmbeddingProvider> {
        &self.provider
    }

    pub fn checkpoint_hash(&self) -> &str {
        &self.checkpoint_hash
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn version(&self) -> String {
        let short = &self.checkpoint_hash[..self.checkpoint_hash.len().min(12)];
        format!("{}@{}+{}", self.spec().task, self.step, short)
    }

    /// Validates the request against this model and degrades the image.
    ///
    /// A full-resolution upload is treated as a clean image and degraded
    /// per task. For super-resolution an upload of `resolution / factor`
    /// pixels is taken as the low-resolution input and upsampled instead.
    pub fn prepare(&self, req: &RestoreRequest) -> Result<Prepared, ServiceError> {
        let task = self.spec().task;
        if req.task != task {
            return Err(ServiceError::TaskMismatch {
                model: task,
                requested: req.task,
            });
        }
        let res = self.spec().resolution;
        let (h, w) = (req.image.height(), req.image.width());
        if h != w {
            return Err(RequestError::new("image", format!("must be square, got {w}x{h}")).into());
        }
        let sample = match task {
            Task::Inpaint | Task::Colorize if h != res => {
                return Err(RequestError::new("image", format!("must be {res}x{res}, got {w}x{h}")).into())
            }
            Task::Inpaint => {
                let mask = req.mask.as_ref().ok_or_else(|| RequestError::new("mask", "required for inpainting"))?;
                degrade_inpaint(&req.image, mask).map_err(|e| RequestError::new("mask", e.to_string()))?
            }
            Task::Colorize => degrade_gray(&req.image).map_err(|e| RequestError::new("image", e.to_string()))?,
            Task::SuperResolution => {
                let f = req.sr_factor.ok_or_else(|| RequestError::new("sr_factor", "required for super-resolution"))?;
                if h == res {
                    degrade_sr(&req.image, f).map_err(|e| RequestError::new("sr_factor", e.to_string()))?
                } else if h * f as usize == res {
                    let up = resize_bicubic(&req.image, res, res)?;
                    TaskSample {
                        task,
                        degraded: up.clone(),
                        ground_truth: up,
                        mask: None,
                        scale: Some(f),
                        color_target: None,
                    }
                } else {
                    return Err(RequestError::new(
                        "image",
                        format!("must be {res}x{res} or {0}x{0} for factor {f}, got {w}x{h}", res / f as usize),
                    )
                    .into());
                }
            }
        };
        let strength = sample.scale.map(StrengthFactor::from_sr_factor).transpose()?;
        let image_embedding = self.provider.embed_image(&sample.ground_truth)?;
        let text_embedding = match req.prompt.as_deref() {
            Some(p) if !p.trim().is_empty() => Some(self.provider.embed_text(p)?),
            _ => None,
        };
        Ok(Prepared {
            sample,
            strength,
            image_embedding,
            text_embedding,
            seed: req.seed,
        })
    }

    /// `β·text + (1 − β)·image`, with the endpoints taken verbatim.
    pub fn condition(&self, prepared: &Prepared, beta: f64) -> Result<ConditionEmbedding, ServiceError> {
        if beta == 0.0 {
            return Ok(prepared.image_embedding.clone());
        }
        let text = prepared
            .text_embedding
            .as_ref()
            .ok_or_else(|| RequestError::new("prompt", format!("required when beta > 0 (beta = {beta})")))?;
        if beta == 1.0 {
            return Ok(text.clone());
        }
        Ok(interpolate_condition(text, &prepared.image_embedding, beta).map_err(|e| RequestError::new("beta", e.to_string()))?)
    }

    /// Restores a prepared input under an explicit condition.
    pub fn restore_with(&self, prepared: &Prepared, condition: &ConditionEmbedding) -> textir::Result<(ImageTensor, StrengthFactor)> {
        let out = self.model.restore(&prepared.sample.degraded, condition, prepared.strength)?;
        let rgb = match &prepared.sample.mask {
            Some(mask) => compose_inpaint(&prepared.sample.ground_truth, &out.rgb, mask)?,
            None => out.rgb,
        };
        Ok((rgb, out.strength))
    }

    pub fn run(&self, prepared: &Prepared, beta: f64) -> Result<RestoreOutput, ServiceError> {
        let start = Instant::now();
        let condition = self.condition(prepared, beta)?;
        let (image, strength) = self.restore_with(prepared, &condition)?;
        let png = image.to_png_bytes()?;
        Ok(RestoreOutput {
            png,
            image,
            metadata: RestoreMetadata {
                model_version: self.version(),
                checkpoint_hash: self.checkpoint_hash.clone(),
                timing_ms: start.elapsed().as_secs_f64() * 1e3,
                condition_source: condition.source(),
                beta,
                strength: strength.value,
                seed: prepared.seed,
            },
        })
    }

    pub fn restore(&self, req: &RestoreRequest) -> Result<RestoreOutput, ServiceError> {
        let prepared = self.prepare(req)?;
        self.run(&prepared, req.beta)
    }

    /// One restoration per β over a single prepared input, in request order.
    pub fn sweep(&self, req: &RestoreRequest, betas: &[f64]) -> Result<Vec<RestoreOutput>, ServiceError> {
        let prepared = self.prepare(req)?;
        betas.iter().map(|&b| self.run(&prepared, b)).collect()
    }
}
