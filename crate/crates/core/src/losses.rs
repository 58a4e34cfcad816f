//! Training objective: adversarial, CLIP-space, pixel and perceptual terms,
//! plus the discriminator.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::conditioning::EmbeddingProvider;
use crate::error::{Error, Result};
use crate::features::FeatureExtractor;
use crate::image::Task;
use crate::nn::{global_avg_pool, leaky_relu, softplus, Conv2d, Linear, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PixelMode {
    L1,
    SmoothL1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub lambda_adv: f64,
    pub lambda_clip: f64,
    pub lambda_l1: f64,
    pub lambda_perc: f64,
    pub pixel_mode: PixelMode,
    /// Threshold of the smooth-L1 pixel loss.
    #[serde(default = "default_delta")]
    pub smooth_l1_delta: f64,
    /// R1 penalty weight on real images. Only `0` is supported.
    #[serde(default)]
    pub r1_gamma: f64,
}

fn default_delta() -> f64 {
    1.0
}

impl LossConfig {
    pub fn for_task(task: Task) -> Self {
        Self {
            lambda_adv: 0.01,
            lambda_clip: match task {
                Task::Inpaint => 0.5,
                Task::SuperResolution | Task::Colorize => 0.1,
            },
            lambda_l1: 1.0,
            lambda_perc: 0.01,
            pixel_mode: match task {
                Task::Colorize => PixelMode::SmoothL1,
                _ => PixelMode::L1,
            },
            smooth_l1_delta: 1.0,
            r1_gamma: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_adv", self.lambda_adv),
            ("lambda_clip", self.lambda_clip),
            ("lambda_l1", self.lambda_l1),
            ("lambda_perc", self.lambda_perc),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(format!("{name} must be a finite value ≥ 0, got {v}")));
            }
        }
        if !(self.smooth_l1_delta.is_finite() && self.smooth_l1_delta > 0.0) {
            return Err(Error::config("smooth_l1_delta must be positive"));
        }
        if self.r1_gamma != 0.0 {
            return Err(Error::config(
                "r1_gamma > 0 needs second-order gradients, which this backend does not provide",
            ));
        }
        Ok(())
    }
}

/// Unweighted generator loss terms.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub adv: f64,
    pub clip: f64,
    pub pixel: f64,
    pub perceptual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub terms: LossTerms,
    pub total: f64,
}

pub fn total_g_loss(terms: LossTerms, config: &LossConfig) -> Result<LossReport> {
    for (name, v) in [
        ("adv", terms.adv),
        ("clip", terms.clip),
        ("pixel", terms.pixel),
        ("perceptual", terms.perceptual),
    ] {
        if !v.is_finite() {
            return Err(Error::validation(format!("loss term `{name}` is {v}")));
        }
    }
    let total = config.lambda_adv * terms.adv
        + config.lambda_clip * terms.clip
        + config.lambda_l1 * terms.pixel
        + config.lambda_perc * terms.perceptual;
    Ok(LossReport { terms, total })
}

/// `mean(softplus(−real) + softplus(fake))`.
pub fn adv_loss_d(real_logits: &Tensor, fake_logits: &Tensor) -> Result<Tensor> {
    if real_logits.dims() != fake_logits.dims() {
        return Err(Error::shape(format!(
            "real logits {:?} vs fake logits {:?}",
            real_logits.dims(),
            fake_logits.dims()
        )));
    }
    let real = softplus(&real_logits.neg()?)?;
    let fake = softplus(fake_logits)?;
    Ok((real + fake)?.mean_all()?)
}

/// `mean(softplus(−fake))`.
pub fn adv_loss_g(fake_logits: &Tensor) -> Result<Tensor> {
    Ok(softplus(&fake_logits.neg()?)?.mean_all()?)
}

/// `1 − cos` between two batches of embeddings, averaged over the batch.
pub fn clip_loss_from_embeddings(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.dims() != b.dims() {
        return Err(Error::shape(format!("embeddings {:?} vs {:?}", a.dims(), b.dims())));
    }
    let dot = (a * b)?.sum(1)?;
    let na = a.sqr()?.sum(1)?.sqrt()?;
    let nb = b.sqr()?.sum(1)?.sqrt()?;
    let cos = dot.div(&(na * nb)?.affine(1.0, 1e-12)?)?;
    Ok(cos.affine(-1.0, 1.0)?.mean_all()?)
}

/// `1 − cos(E_I(restored), E_I(target))` for RGB batches.
pub fn clip_loss(restored: &Tensor, target: &Tensor, provider: &dyn EmbeddingProvider) -> Result<Tensor> {
    if restored.dims() != target.dims() {
        return Err(Error::shape(format!(
            "restored {:?} vs target {:?}",
            restored.dims(),
            target.dims()
        )));
    }
    let a = provider.embed_image_batch(restored)?;
    let b = provider.embed_image_batch(target)?;
    clip_loss_from_embeddings(&a, &b)
}

pub fn pixel_loss(restored: &Tensor, target: &Tensor, mode: PixelMode, delta: f64) -> Result<Tensor> {
    if restored.dims() != target.dims() {
        return Err(Error::shape(format!(
            "restored {:?} vs target {:?}",
            restored.dims(),
            target.dims()
        )));
    }
    let diff = (restored - target)?.abs()?;
    match mode {
        PixelMode::L1 => Ok(diff.mean_all()?),
        PixelMode::SmoothL1 => {
            let quad = diff.sqr()?.affine(0.5 / delta, 0.0)?;
            let lin = diff.affine(1.0, -0.5 * delta)?;
            let small = diff.lt(delta)?;
            Ok(small.where_cond(&quad, &lin)?.mean_all()?)
        }
    }
}

/// Sum over the extractor's layers of the mean absolute feature difference.
pub fn perceptual_loss(restored: &Tensor, target: &Tensor, extractor: &dyn FeatureExtractor) -> Result<Tensor> {
    if restored.dims() != target.dims() {
        return Err(Error::shape(format!(
            "restored {:?} vs target {:?}",
            restored.dims(),
            target.dims()
        )));
    }
    let fa = extractor.features(restored)?;
    let fb = extractor.features(target)?;
    let mut total: Option<Tensor> = None;
    for (a, b) in fa.iter().zip(&fb) {
        let term = (a - b)?.abs()?.mean_all()?;
        total = Some(match total {
            Some(t) => (t + term)?,
            None => term,
        });
    }
    total.ok_or_else(|| Error::config("feature extractor returned no layers"))
}

/// Stride-2 conv stack down to 4×4, global average, linear logit.
#[derive(Debug, Clone)]
pub struct Discriminator {
    stem: Conv2d,
    downs: Vec<Conv2d>,
    head: Linear,
    resolution: usize,
}

impl Discriminator {
    pub fn new(store: &mut ParamStore, resolution: usize, base_width: usize, max_width: usize) -> Result<Self> {
        if resolution < 4 || base_width == 0 {
            return Err(Error::config("discriminator needs resolution ≥ 4 and a positive width"));
        }
        let stem = Conv2d::new(store, "disc.stem", 3, base_width, 3, 1)?;
        let mut downs = Vec::new();
        let (mut side, mut width) = (resolution, base_width);
        while side > 4 {
            let next = (width * 2).min(max_width.max(base_width));
            downs.push(Conv2d::new(store, &format!("disc.down{}", downs.len()), width, next, 3, 2)?);
            width = next;
            side = side.div_ceil(2);
        }
        let head = Linear::new(store, "disc.head", width, 1, 0.0)?;
        Ok(Self {
            stem,
            downs,
            head,
            resolution,
        })
    }

    /// `B×3×R×R` RGB → `B` logits.
    pub fn forward(&self, images: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = images.dims4()?;
        if (c, h, w) != (3, self.resolution, self.resolution) {
            return Err(Error::shape(format!(
                "discriminator expects 3×{r}×{r}, got {c}×{h}×{w}",
                r = self.resolution
            )));
        }
        let mut x = leaky_relu(&self.stem.forward(&images.affine(2.0, -1.0)?)?)?;
        for conv in &self.downs {
            x = leaky_relu(&conv.forward(&x)?)?;
        }
        Ok(self.head.forward(&global_avg_pool(&x)?)?.squeeze(1)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    fn scalar(t: &Tensor) -> f64 {
        t.to_scalar::<f32>().unwrap() as f64
    }

    #[test]
    fn adversarial_values() {
        let dev = Device::Cpu;
        let z = Tensor::zeros(4, candle_core::DType::F32, &dev).unwrap();
        assert!((scalar(&adv_loss_d(&z, &z).unwrap()) - 2.0 * 2f64.ln()).abs() < 1e-4);
        assert!((scalar(&adv_loss_g(&z).unwrap()) - 2f64.ln()).abs() < 1e-4);
        let hi = Tensor::new(&[20f32, 20.0], &dev).unwrap();
        let lo = Tensor::new(&[-20f32, -20.0], &dev).unwrap();
        assert!(scalar(&adv_loss_d(&hi, &lo).unwrap()) < 1e-6);
        assert!(scalar(&adv_loss_g(&hi).unwrap()) < 1e-6);
    }

    #[test]
    fn pixel_values() {
        let dev = Device::Cpu;
        let a = Tensor::full(0.3f32, (1, 3, 4, 4), &dev).unwrap();
        let b = Tensor::full(0.4f32, (1, 3, 4, 4), &dev).unwrap();
        assert!((scalar(&pixel_loss(&a, &b, PixelMode::L1, 1.0).unwrap()) - 0.1).abs() < 1e-6);
        let c = Tensor::full(0.8f32, (1, 3, 4, 4), &dev).unwrap();
        assert!((scalar(&pixel_loss(&a, &c, PixelMode::SmoothL1, 1.0).unwrap()) - 0.125).abs() < 1e-6);
        let d = Tensor::full(2.3f32, (1, 3, 4, 4), &dev).unwrap();
        assert!((scalar(&pixel_loss(&a, &d, PixelMode::SmoothL1, 1.0).unwrap()) - 1.5).abs() < 1e-6);
        assert_eq!(scalar(&pixel_loss(&a, &a, PixelMode::L1, 1.0).unwrap()), 0.0);
    }

    #[test]
    fn task_defaults() {
        let c = LossConfig::for_task(Task::Colorize);
        assert_eq!(c.pixel_mode, PixelMode::SmoothL1);
        assert_eq!(c.lambda_clip, 0.1);
        assert_eq!(LossConfig::for_task(Task::Inpaint).pixel_mode, PixelMode::L1);
        let mut bad = c.clone();
        bad.lambda_perc = -1.0;
        assert!(bad.validate().is_err());
        bad = c;
        bad.r1_gamma = 10.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn discriminator_shapes() {
        let dev = Device::Cpu;
        let mut store = ParamStore::new(&dev, 0);
        let d = Discriminator::new(&mut store, 16, 8, 32).unwrap();
        let x = Tensor::zeros((5, 3, 16, 16), candle_core::DType::F32, &dev).unwrap();
        let logits = d.forward(&x).unwrap();
        assert_eq!(logits.dims(), &[5]);
        assert!(logits.to_vec1::<f32>().unwrap().iter().all(|v| v.is_finite()));
        let bad = Tensor::zeros((1, 2, 16, 16), candle_core::DType::F32, &dev).unwrap();
        assert!(d.forward(&bad).is_err());
    }
}
