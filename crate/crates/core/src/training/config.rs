use std::path::{Path, PathBuf};
use std::sync::Arc;

use candle_core::Device;
use serde::{Deserialize, Serialize};

use crate::clip::ClipProvider;
use crate::conditioning::{EmbeddingProvider, StubProvider};
use crate::degradations::StrokeConfig;
use crate::error::{Error, Result};
use crate::features::{FeatureExtractor, RandomConvExtractor, Vgg16Extractor};
use crate::generator::GeneratorSpec;
use crate::image::Task;
use crate::losses::LossConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProviderChoice {
    Stub {
        #[serde(default = "default_embedding_dim")]
        embedding_dim: usize,
    },
    /// A directory holding `model.safetensors` and `tokenizer.json`.
    Clip { dir: PathBuf },
}

fn default_embedding_dim() -> usize {
    crate::conditioning::DEFAULT_EMBEDDING_DIM
}

impl ProviderChoice {
    pub fn build(&self, device: &Device) -> Result<Arc<dyn EmbeddingProvider>> {
        Ok(match self {
            ProviderChoice::Stub { embedding_dim } => Arc::new(StubProvider::with_dim(*embedding_dim)),
            ProviderChoice::Clip { dir } => Arc::new(ClipProvider::load(dir, device)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExtractorChoice {
    RandomConv {
        #[serde(default)]
        seed: u64,
    },
    Vgg16 { weights: PathBuf },
}

impl ExtractorChoice {
    pub fn build(&self, device: &Device) -> Result<Arc<dyn FeatureExtractor>> {
        Ok(match self {
            ExtractorChoice::RandomConv { seed } => Arc::new(RandomConvExtractor::new(*seed)),
            ExtractorChoice::Vgg16 { weights } => Arc::new(Vgg16Extractor::load(weights, device)?),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LrSchedule {
    Constant,
    /// Linear decay to zero between `start` and the last iteration.
    LinearDecay { start: u64 },
}

impl LrSchedule {
    pub fn factor(&self, step: u64, max_iters: u64) -> f64 {
        match *self {
            LrSchedule::Constant => 1.0,
            LrSchedule::LinearDecay { start } => {
                if step < start || max_iters <= start {
                    1.0
                } else {
                    1.0 - (step - start) as f64 / (max_iters - start) as f64
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub base_width: usize,
    pub max_width: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            base_width: 64,
            max_width: 512,
        }
    }
}

/// A complete, resolved run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub task: Task,
    pub seed: u64,
    pub learning_rate: f64,
    /// Discriminator learning rate; equal to `learning_rate` unless set.
    pub d_learning_rate: Option<f64>,
    pub betas: (f64, f64),
    pub adam_eps: f64,
    pub batch_size: usize,
    pub max_iters: u64,
    pub lr_schedule: LrSchedule,
    /// Decay of an exponential moving average of generator weights; off when unset.
    pub ema_decay: Option<f64>,
    pub dataset: PathBuf,
    pub split: Option<String>,
    pub output_dir: PathBuf,
    pub checkpoint_every: u64,
    pub keep_last: usize,
    pub max_consecutive_failures: usize,
    pub losses: LossConfig,
    pub generator: GeneratorSpec,
    pub discriminator: DiscriminatorConfig,
    pub strokes: StrokeConfig,
    pub provider: ProviderChoice,
    pub extractor: ExtractorChoice,
}

/// The on-disk form, where everything except `task` and `dataset` may be omitted.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    task: Task,
    dataset: PathBuf,
    seed: Option<u64>,
    learning_rate: Option<f64>,
    d_learning_rate: Option<f64>,
    betas: Option<(f64, f64)>,
    adam_eps: Option<f64>,
    batch_size: Option<usize>,
    max_iters: Option<u64>,
    lr_schedule: Option<LrSchedule>,
    ema_decay: Option<f64>,
    split: Option<String>,
    output_dir: Option<PathBuf>,
    checkpoint_every: Option<u64>,
    keep_last: Option<usize>,
    max_consecutive_failures: Option<usize>,
    losses: Option<LossConfig>,
    generator: Option<GeneratorSpec>,
    discriminator: Option<DiscriminatorConfig>,
    strokes: Option<StrokeConfig>,
    provider: Option<ProviderChoice>,
    extractor: Option<ExtractorChoice>,
}

impl TrainConfig {
    pub fn new(task: Task, dataset: impl Into<PathBuf>) -> Self {
        Self {
            task,
            seed: 0,
            learning_rate: 2e-3,
            d_learning_rate: None,
            betas: (0.0, 0.99),
            adam_eps: 1e-8,
            batch_size: 16,
            max_iters: 300_000,
            lr_schedule: LrSchedule::Constant,
            ema_decay: None,
            dataset: dataset.into(),
            split: Some("train".into()),
            output_dir: PathBuf::from("runs").join(task.as_str()),
            checkpoint_every: 5_000,
            keep_last: 3,
            max_consecutive_failures: 32,
            losses: LossConfig::for_task(task),
            generator: GeneratorSpec::standard(task),
            discriminator: DiscriminatorConfig::default(),
            strokes: StrokeConfig::default(),
            provider: ProviderChoice::Stub {
                embedding_dim: default_embedding_dim(),
            },
            extractor: ExtractorChoice::RandomConv { seed: 0 },
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        let base = Self::new(raw.task, raw.dataset);
        let config = Self {
            task: base.task,
            seed: raw.seed.unwrap_or(base.seed),
            learning_rate: raw.learning_rate.unwrap_or(base.learning_rate),
            d_learning_rate: raw.d_learning_rate,
            betas: raw.betas.unwrap_or(base.betas),
            adam_eps: raw.adam_eps.unwrap_or(base.adam_eps),
            batch_size: raw.batch_size.unwrap_or(base.batch_size),
            max_iters: raw.max_iters.unwrap_or(base.max_iters),
            lr_schedule: raw.lr_schedule.unwrap_or(base.lr_schedule),
            ema_decay: raw.ema_decay,
            dataset: base.dataset,
            split: raw.split.or(base.split),
            output_dir: raw.output_dir.unwrap_or(base.output_dir),
            checkpoint_every: raw.checkpoint_every.unwrap_or(base.checkpoint_every),
            keep_last: raw.keep_last.unwrap_or(base.keep_last),
            max_consecutive_failures: raw.max_consecutive_failures.unwrap_or(base.max_consecutive_failures),
            losses: raw.losses.unwrap_or(base.losses),
            generator: raw.generator.unwrap_or(base.generator),
            discriminator: raw.discriminator.unwrap_or(base.discriminator),
            strokes: raw.strokes.unwrap_or(base.strokes),
            provider: raw.provider.unwrap_or(base.provider),
            extractor: raw.extractor.unwrap_or(base.extractor),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn d_lr(&self) -> f64 {
        self.d_learning_rate.unwrap_or(self.learning_rate)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be > 0"));
        }
        if !(self.d_lr() > 0.0 && self.d_lr().is_finite()) {
            return Err(Error::config("d_learning_rate must be > 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be ≥ 1"));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::config("checkpoint_every must be ≥ 1"));
        }
        if let Some(d) = self.ema_decay {
            if !(0.0..1.0).contains(&d) {
                return Err(Error::config("ema_decay must be in [0, 1)"));
            }
        }
        if self.generator.task != self.task {
            return Err(Error::config(format!(
                "generator spec is for {}, run is for {}",
                self.generator.task, self.task
            )));
        }
        self.generator.validate()?;
        self.losses.validate()?;
        self.strokes.validate()?;
        Ok(())
    }
}
