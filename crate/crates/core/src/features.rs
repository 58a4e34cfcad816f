//! Frozen image feature extractors for the perceptual loss and the
//! perceptual distance metric.

use std::path::Path;

use candle_core::{Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// A fixed network mapping `B×3×H×W` RGB in `[0, 1]` to a list of feature maps.
pub trait FeatureExtractor: Send + Sync {
    fn name(&self) -> &str;

    /// Names of the layers returned by [`features`](Self::features), in order.
    fn layers(&self) -> Vec<String>;

    fn features(&self, images: &Tensor) -> Result<Vec<Tensor>>;
}

struct FrozenConv {
    weight: Tensor,
    bias: Tensor,
}

impl FrozenConv {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let pad = self.weight.dims()[2] / 2;
        let y = x.conv2d(&self.weight, pad, 1, 1, 1)?;
        Ok(y.broadcast_add(&self.bias.reshape((1, (), 1, 1))?)?)
    }
}

/// Deterministic random-weight conv stack; three stages with 2× average
/// pooling between them.
pub struct RandomConvExtractor {
    stages: Vec<FrozenConv>,
}

impl RandomConvExtractor {
    pub const WIDTHS: [usize; 3] = [16, 32, 64];

    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut inputs = 3;
        let stages = Self::WIDTHS
            .iter()
            .map(|&out| {
                let fan_in = (inputs * 9) as f64;
                let std = (2.0 / fan_in).sqrt();
                let w: Vec<f32> = (0..out * inputs * 9)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        (z * std) as f32
                    })
                    .collect();
                let conv = FrozenConv {
                    weight: Tensor::from_vec(w, (out, inputs, 3, 3), &Device::Cpu).expect("shape"),
                    bias: Tensor::zeros(out, candle_core::DType::F32, &Device::Cpu).expect("shape"),
                };
                inputs = out;
                conv
            })
            .collect();
        Self { stages }
    }
}

impl FeatureExtractor for RandomConvExtractor {
    fn name(&self) -> &str {
        "random-conv"
    }

    fn layers(&self) -> Vec<String> {
        (1..=self.stages.len()).map(|i| format!("stage{i}")).collect()
    }

    fn features(&self, images: &Tensor) -> Result<Vec<Tensor>> {
        let mut x = images.affine(2.0, -1.0)?;
        let mut out = Vec::with_capacity(self.stages.len());
        for (i, stage) in self.stages.iter().enumerate() {
            if i > 0 {
                let (_, _, h, w) = x.dims4()?;
                if h >= 2 && w >= 2 {
                    x = x.avg_pool2d(2)?;
                }
            }
            x = candle_nn::ops::leaky_relu(&stage.forward(&x)?, 0.2)?;
            out.push(x.clone());
        }
        Ok(out)
    }
}

/// VGG-16 convolutional trunk read from a safetensors file using the
/// torchvision key layout (`features.{i}.weight` / `.bias`). Features are
/// taken after relu1_2, relu2_2, relu3_3 and relu4_3.
pub struct Vgg16Extractor {
    blocks: Vec<Vec<FrozenConv>>,
}

impl Vgg16Extractor {
    const BLOCKS: [usize; 4] = [2, 2, 3, 3];
    const MEAN: [f32; 3] = [0.485, 0.456, 0.406];
    const STD: [f32; 3] = [0.229, 0.224, 0.225];

    pub fn load(path: impl AsRef<Path>, device: &Device) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::ExtractorMissing(format!(
                "VGG-16 weights not found at {}",
                path.display()
            )));
        }
        let tensors = candle_core::safetensors::load(path, device)?;
        let mut index = 0;
        let mut blocks = Vec::new();
        for &convs in &Self::BLOCKS {
            let mut block = Vec::new();
            for _ in 0..convs {
                let get = |suffix: &str| {
                    let key = format!("features.{index}.{suffix}");
                    tensors
                        .get(&key)
                        .cloned()
                        .ok_or_else(|| Error::ExtractorMissing(format!("missing `{key}` in {}", path.display())))
                };
                block.push(FrozenConv {
                    weight: get("weight")?,
                    bias: get("bias")?,
                });
                index += 2; // conv, relu
            }
            index += 1; // max pool
            blocks.push(block);
        }
        Ok(Self { blocks })
    }
}

impl FeatureExtractor for Vgg16Extractor {
    fn name(&self) -> &str {
        "vgg16"
    }

    fn layers(&self) -> Vec<String> {
        ["relu1_2", "relu2_2", "relu3_3", "relu4_3"].map(String::from).to_vec()
    }

    fn features(&self, images: &Tensor) -> Result<Vec<Tensor>> {
        let dev = images.device();
        let mean = Tensor::new(&Self::MEAN, dev)?.reshape((1, 3, 1, 1))?.to_dtype(images.dtype())?;
        let std = Tensor::new(&Self::STD, dev)?.reshape((1, 3, 1, 1))?.to_dtype(images.dtype())?;
        let mut x = images.broadcast_sub(&mean)?.broadcast_div(&std)?;
        let mut out = Vec::with_capacity(self.blocks.len());
        for (i, block) in self.blocks.iter().enumerate() {
            if i > 0 {
                x = x.max_pool2d(2)?;
            }
            for conv in block {
                x = conv.forward(&x)?.relu()?;
            }
            out.push(x.clone());
        }
        Ok(out)
    }
}
