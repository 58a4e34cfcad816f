//! The end-to-end restorer `G(I_d, c)`.

use candle_core::{Device, Tensor};

use crate::color::lab_to_rgb_tensor;
use crate::conditioning::{l2_normalize_rows, ConditionEmbedding, StyleCode, StyleMapping};
use crate::error::{Error, Result};
use crate::generator::{
    Encoder, FeaturePyramid, FusionWeights, GeneratorSpec, StrengthFactor, StrengthMlp, StrengthMode, StyleGenerator,
};
use crate::image::{ColorSpace, ImageTensor, Task};
use crate::nn::ParamStore;

/// Result of one restoration.
#[derive(Debug, Clone)]
pub struct Restoration {
    /// Raw network output: RGB, or scaled ab planes for colorization.
    pub output: ImageTensor,
    /// The restored RGB image.
    pub rgb: ImageTensor,
    pub strength: StrengthFactor,
}

#[derive(Debug)]
pub struct TextIr {
    spec: GeneratorSpec,
    params: ParamStore,
    encoder: Encoder,
    mapping: StyleMapping,
    strength: StrengthMlp,
    generator: StyleGenerator,
}

impl TextIr {
    pub fn new(spec: GeneratorSpec, device: &Device, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut params = ParamStore::new(device, seed);
        let encoder = Encoder::new(&mut params, &spec)?;
        let mapping = StyleMapping::new(&mut params, &spec)?;
        let strength = StrengthMlp::new(&mut params, &spec)?;
        let generator = StyleGenerator::new(&mut params, &spec)?;
        Ok(Self {
            spec,
            params,
            encoder,
            mapping,
            strength,
            generator,
        })
    }

    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    pub fn task(&self) -> Task {
        self.spec.task
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn device(&self) -> &Device {
        self.params.device()
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn mapping(&self) -> &StyleMapping {
        &self.mapping
    }

    pub fn strength_mlp(&self) -> &StrengthMlp {
        &self.strength
    }

    pub fn generator(&self) -> &StyleGenerator {
        &self.generator
    }

    /// Checks task shape and stacks degraded inputs into a network batch.
    /// L planes are brought from `[0, 100]` to `[0, 1]`.
    pub fn network_input(&self, degraded: &[&ImageTensor]) -> Result<Tensor> {
        let task = self.spec.task;
        let expect = (task.input_channels(), self.spec.resolution, self.spec.resolution);
        let mut batch = Vec::with_capacity(degraded.len());
        for img in degraded {
            if img.dims() != expect {
                return Err(Error::TaskShape {
                    task,
                    msg: format!("degraded input is {:?}, expected {:?}", img.dims(), expect),
                });
            }
            let t = img.to_tensor(self.device())?;
            batch.push(match task {
                Task::Colorize => t.affine(0.01, 0.0)?,
                _ => t,
            });
        }
        if batch.is_empty() {
            return Err(Error::validation("empty batch"));
        }
        Ok(Tensor::cat(&batch, 0)?)
    }

    /// Pyramid plus the predicted strength; super-resolution predicts none.
    pub fn encode(&self, x: &Tensor) -> Result<(FeaturePyramid, Option<Tensor>)> {
        self.encoder.forward(x)
    }

    /// Conditions are L2-normalized, then mapped affinely.
    pub fn style_codes(&self, conditions: &Tensor) -> Result<StyleCode> {
        self.mapping.forward(&l2_normalize_rows(conditions)?)
    }

    pub fn fusion_weights(&self, strength: &Tensor) -> Result<FusionWeights> {
        self.strength.forward(strength)
    }

    /// Network output for a batch. `strength` (`B×1`, normalized) replaces
    /// the encoder's prediction when given and is required for
    /// super-resolution.
    pub fn forward(&self, x: &Tensor, conditions: &Tensor, strength: Option<&Tensor>) -> Result<Tensor> {
        Ok(self.forward_detailed(x, conditions, strength)?.0)
    }

    /// Output plus the strength actually used.
    pub fn forward_detailed(
        &self,
        x: &Tensor,
        conditions: &Tensor,
        strength: Option<&Tensor>,
    ) -> Result<(Tensor, Tensor)> {
        let (b, _, _, _) = x.dims4()?;
        let (cb, _) = conditions.dims2()?;
        if cb != b {
            return Err(Error::shape(format!("{cb} conditions for a batch of {b}")));
        }
        let (pyramid, s_pred) = self.encode(x)?;
        let s = match (strength, s_pred) {
            (Some(s), _) => s.clone(),
            (None, Some(s)) => s,
            (None, None) => {
                return Err(Error::validation(
                    "super-resolution needs the downscale factor as strength",
                ))
            }
        };
        let codes = self.style_codes(conditions)?;
        let weights = self.fusion_weights(&s)?;
        Ok((self.generator.forward(&pyramid, &codes, &weights)?, s))
    }

    /// RGB batch from the network output; for colorization the L plane is
    /// taken from the network input.
    pub fn output_to_rgb(&self, output: &Tensor, x: &Tensor) -> Result<Tensor> {
        match self.spec.task {
            Task::Colorize => lab_to_rgb_tensor(&x.affine(100.0, 0.0)?, output),
            _ => Ok(output.clone()),
        }
    }

    /// Restores one degraded image under `condition`.
    pub fn restore(
        &self,
        degraded: &ImageTensor,
        condition: &ConditionEmbedding,
        s_override: Option<StrengthFactor>,
    ) -> Result<Restoration> {
        if condition.dim() != self.spec.embedding_dim {
            return Err(Error::validation(format!(
                "condition has {} entries, model expects {}",
                condition.dim(),
                self.spec.embedding_dim
            )));
        }
        let x = self.network_input(&[degraded])?;
        let c = condition.to_tensor(self.device())?;
        let s_tensor = s_override
            .map(|s| Tensor::new(&[[s.value as f32]], self.device()))
            .transpose()?;
        let (out, s) = self.forward_detailed(&x, &c, s_tensor.as_ref())?;
        let rgb = self.output_to_rgb(&out, &x)?;
        let strength = match s_override {
            Some(s) => s,
            None => StrengthFactor {
                value: s.flatten_all()?.to_vec1::<f32>()?[0] as f64,
                mode: StrengthMode::EncoderPredicted,
            },
        };
        Ok(Restoration {
            output: ImageTensor::from_tensor(&out, self.spec.task.output_space())?,
            rgb: ImageTensor::from_tensor(&rgb, ColorSpace::Rgb)?,
            strength,
        })
    }
}
