//! Pretrained CLIP ViT-B/32 as an [`EmbeddingProvider`].

use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use candle_nn::VarBuilder;
use candle_transformers::models::clip::{ClipConfig, ClipModel};
use tokenizers::Tokenizer;

use crate::conditioning::{ConditionEmbedding, EmbeddingProvider, EmbeddingSource, Preprocessing, ProviderSpec};
use crate::error::{Error, Result};
use crate::resample::{resize_tensor, Filter};

const CONTEXT: usize = 77;
const IMAGE_SIDE: usize = 224;
const END_OF_TEXT: &str = "<|endoftext|>";

/// Loads `model.safetensors` (Hugging Face key layout) and `tokenizer.json`
/// from one directory.
pub struct ClipProvider {
    spec: ProviderSpec,
    model: ClipModel,
    tokenizer: Tokenizer,
    eot: u32,
    device: Device,
}

impl ClipProvider {
    pub const NAME: &'static str = "clip-vit-b32";

    pub fn load(dir: impl AsRef<Path>, device: &Device) -> Result<Self> {
        let dir = dir.as_ref();
        let weights = dir.join("model.safetensors");
        let tokenizer_path = dir.join("tokenizer.json");
        for p in [&weights, &tokenizer_path] {
            if !p.exists() {
                return Err(Error::BackendMissing(format!("{} not found", p.display())));
            }
        }
        let tensors = candle_core::safetensors::load(&weights, device)
            .map_err(|e| Error::BackendMissing(format!("{}: {e}", weights.display())))?;
        let vb = VarBuilder::from_tensors(tensors, DType::F32, device);
        let config = ClipConfig::vit_base_patch32();
        let model = ClipModel::new(vb, &config)
            .map_err(|e| Error::BackendMissing(format!("{}: {e}", weights.display())))?;
        let tokenizer = Tokenizer::from_file(&tokenizer_path)
            .map_err(|e| Error::BackendMissing(format!("{}: {e}", tokenizer_path.display())))?;
        let eot = tokenizer
            .token_to_id(END_OF_TEXT)
            .ok_or_else(|| Error::BackendMissing(format!("tokenizer has no `{END_OF_TEXT}` token")))?;
        Ok(Self {
            spec: ProviderSpec {
                name: Self::NAME.to_string(),
                embedding_dim: 512,
                preprocessing: Preprocessing {
                    resize: IMAGE_SIDE,
                    mean: [0.481_454_66, 0.457_827_5, 0.408_210_73],
                    std: [0.268_629_54, 0.261_302_6, 0.275_777_1],
                },
            },
            model,
            tokenizer,
            eot,
            device: device.clone(),
        })
    }

    /// `$TEXTIR_CLIP_DIR`, if set.
    pub fn dir_from_env() -> Option<PathBuf> {
        std::env::var_os("TEXTIR_CLIP_DIR").map(PathBuf::from)
    }

    fn token_ids(&self, prompt: &str) -> Result<Vec<u32>> {
        let enc = self
            .tokenizer
            .encode(prompt, true)
            .map_err(|e| Error::validation(format!("cannot tokenize prompt: {e}")))?;
        let mut ids = enc.get_ids().to_vec();
        if ids.len() > CONTEXT {
            ids.truncate(CONTEXT);
            ids[CONTEXT - 1] = self.eot;
        }
        // pooling reads the position of the largest id, which is the end token
        ids.resize(CONTEXT, self.eot);
        Ok(ids)
    }
}

impl EmbeddingProvider for ClipProvider {
    fn spec(&self) -> &ProviderSpec {
        &self.spec
    }

    fn embed_image_batch(&self, images: &Tensor) -> Result<Tensor> {
        let (_, c, _, _) = images.dims4()?;
        if c != 3 {
            return Err(Error::shape(format!("image embedding needs RGB, got {c} planes")));
        }
        let p = &self.spec.preprocessing;
        let x = resize_tensor(&images.to_device(&self.device)?, IMAGE_SIDE, IMAGE_SIDE, Filter::Bilinear)?;
        let mean = Tensor::new(&p.mean, &self.device)?.reshape((1, 3, 1, 1))?;
        let std = Tensor::new(&p.std, &self.device)?.reshape((1, 3, 1, 1))?;
        let x = x.broadcast_sub(&mean)?.broadcast_div(&std)?;
        Ok(self.model.get_image_features(&x)?)
    }

    fn embed_text(&self, prompt: &str) -> Result<ConditionEmbedding> {
        if prompt.trim().is_empty() {
            return Err(Error::validation("prompt must be non-empty"));
        }
        let ids = Tensor::new(self.token_ids(prompt)?.as_slice(), &self.device)?.unsqueeze(0)?;
        let e = self.model.get_text_features(&ids)?.squeeze(0)?.to_vec1::<f32>()?;
        ConditionEmbedding::new(e, EmbeddingSource::Text)
    }
}
