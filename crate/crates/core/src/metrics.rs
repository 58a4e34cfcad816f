//! PSNR, SSIM, an LPIPS-style perceptual distance, and dataset evaluation.

use std::sync::Arc;

use candle_core::{Device, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::conditioning::{mean_embedding, ConditionEmbedding, EmbeddingProvider};
use crate::degradations::{compose_inpaint, degrade_random, StrokeConfig, TaskSample};
use crate::error::{Error, Result};
use crate::features::FeatureExtractor;
use crate::generator::StrengthFactor;
use crate::image::{ColorSpace, ImageTensor, Task};
use crate::model::TextIr;
use crate::training::{load_square, Dataset};

/// `10·log10(peak² / MSE)`; identical images give `f64::INFINITY`.
pub fn psnr(a: &ImageTensor, b: &ImageTensor, peak: f64) -> Result<f64> {
    a.ensure_same_dims(b)?;
    if !(peak > 0.0) {
        return Err(Error::validation("peak must be positive"));
    }
    let n = a.data().len() as f64;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub peak: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            peak: 1.0,
        }
    }
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable valid-mode filtering of an `h×w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over every channel and every position where the window fits.
pub fn ssim(a: &ImageTensor, b: &ImageTensor, config: &SsimConfig) -> Result<f64> {
    a.ensure_same_dims(b)?;
    let (c, h, w) = a.dims();
    if h < config.window || w < config.window {
        return Err(Error::validation(format!(
            "image {h}x{w} is smaller than the {0}x{0} SSIM window",
            config.window
        )));
    }
    let k = gaussian_window(config.window, config.sigma);
    let c1 = (config.k1 * config.peak).powi(2);
    let c2 = (config.k2 * config.peak).powi(2);
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..c {
        let x: Vec<f64> = a.plane(ch).iter().map(|&v| v as f64).collect();
        let y: Vec<f64> = b.plane(ch).iter().map(|&v| v as f64).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let mx = filter_valid(&x, h, w, &k);
        let my = filter_valid(&y, h, w, &k);
        let sxx = filter_valid(&xx, h, w, &k);
        let syy = filter_valid(&yy, h, w, &k);
        let sxy = filter_valid(&xy, h, w, &k);
        for i in 0..mx.len() {
            let (mu_x, mu_y) = (mx[i], my[i]);
            let var_x = sxx[i] - mu_x * mu_x;
            let var_y = syy[i] - mu_y * mu_y;
            let cov = sxy[i] - mu_x * mu_y;
            total += ((2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2))
                / ((mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// LPIPS-style distance: features are unit-normalized across channels at
/// every position, squared differences are weighted per channel, averaged
/// spatially and summed over layers. Without calibrated weights every
/// channel weighs 1, so values are a proxy rather than published LPIPS.
pub struct PerceptualMetric {
    extractor: Arc<dyn FeatureExtractor>,
    weights: Option<Vec<Vec<f32>>>,
}

impl PerceptualMetric {
    pub fn new(extractor: Arc<dyn FeatureExtractor>) -> Self {
        Self {
            extractor,
            weights: None,
        }
    }

    /// Per-layer, per-channel weights; one vector per extractor layer.
    pub fn with_weights(extractor: Arc<dyn FeatureExtractor>, weights: Vec<Vec<f32>>) -> Result<Self> {
        if weights.len() != extractor.layers().len() {
            return Err(Error::config(format!(
                "{} weight vectors for {} layers",
                weights.len(),
                extractor.layers().len()
            )));
        }
        Ok(Self {
            extractor,
            weights: Some(weights),
        })
    }

    pub fn is_calibrated(&self) -> bool {
        self.weights.is_some()
    }

    pub fn distance(&self, a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
        a.ensure_same_dims(b)?;
        if a.channels() != 3 {
            return Err(Error::shape("perceptual distance needs RGB images"));
        }
        let dev = Device::Cpu;
        let fa = self.extractor.features(&a.to_tensor(&dev)?)?;
        let fb = self.extractor.features(&b.to_tensor(&dev)?)?;
        let mut total = 0.0;
        for (layer, (x, y)) in fa.iter().zip(&fb).enumerate() {
            let nx = unit_channels(x)?;
            let ny = unit_channels(y)?;
            let mut d = (nx - ny)?.sqr()?;
            if let Some(w) = &self.weights {
                let c = d.dim(1)?;
                if w[layer].len() != c {
                    return Err(Error::config(format!(
                        "layer {layer} has {c} channels but {} weights",
                        w[layer].len()
                    )));
                }
                d = d.broadcast_mul(&Tensor::new(w[layer].as_slice(), &dev)?.reshape((1, c, 1, 1))?)?;
            }
            let v = d.sum(1)?.mean_all()?.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
            total += v;
        }
        Ok(total)
    }
}

fn unit_channels(x: &Tensor) -> Result<Tensor> {
    let norm = x.sqr()?.sum_keepdim(1)?.sqrt()?.affine(1.0, 1e-10)?;
    Ok(x.broadcast_div(&norm)?)
}

/// Something that restores a degraded sample under a condition and
/// returns RGB.
pub trait Restorer {
    fn restore_sample(&self, sample: &TaskSample, condition: &ConditionEmbedding) -> Result<ImageTensor>;
}

impl Restorer for TextIr {
    /// SR uses the sample's true factor; inpainting keeps the known pixels.
    fn restore_sample(&self, sample: &TaskSample, condition: &ConditionEmbedding) -> Result<ImageTensor> {
        let strength = sample.scale.map(StrengthFactor::from_sr_factor).transpose()?;
        let out = self.restore(&sample.degraded, condition, strength)?;
        match &sample.mask {
            Some(mask) if sample.task == Task::Inpaint => {
                let known = sample.degraded.select_channels(0, 3, ColorSpace::Rgb)?;
                compose_inpaint(&known, &out.rgb, mask)
            }
            _ => Ok(out.rgb),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextSource {
    /// Mean of the image's caption embeddings.
    Captions,
    /// The ground truth's own image embedding.
    Image,
}

impl std::str::FromStr for TextSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "captions" => Ok(TextSource::Captions),
            "image" => Ok(TextSource::Image),
            other => Err(Error::validation(format!(
                "unknown text source `{other}` (expected captions or image)"
            ))),
        }
    }
}

mod inf_as_string {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            "inf".serialize(s)
        } else {
            v.serialize(s)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("bad number `{t}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub path: String,
    #[serde(with = "inf_as_string")]
    pub psnr: f64,
    pub ssim: f64,
    pub perceptual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task: Task,
    pub text_source: TextSource,
    pub seed: u64,
    pub per_image: Vec<ImageMetrics>,
    #[serde(with = "inf_as_string")]
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub mean_perceptual: f64,
    pub evaluated: usize,
    pub skipped_missing_captions: usize,
    pub skipped_unreadable: usize,
    pub perceptual_calibrated: bool,
    pub config_hash: String,
}

impl MetricReport {
    /// Aligned plain-text table of the means and counts.
    pub fn table(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("task            {}\n", self.task));
        s.push_str(&format!("text source     {:?}\n", self.text_source));
        s.push_str(&format!("images          {}\n", self.evaluated));
        s.push_str(&format!(
            "skipped         {} (no captions), {} (unreadable)\n",
            self.skipped_missing_captions, self.skipped_unreadable
        ));
        s.push_str(&format!("PSNR (dB)       {:.4}\n", self.mean_psnr));
        s.push_str(&format!("SSIM            {:.4}\n", self.mean_ssim));
        let label = if self.perceptual_calibrated {
            "perceptual"
        } else {
            "perceptual*"
        };
        s.push_str(&format!("{label:<16}{:.4}\n", self.mean_perceptual));
        if !self.perceptual_calibrated {
            s.push_str("* uncalibrated LPIPS-style proxy\n");
        }
        s
    }
}

pub struct EvalOptions {
    pub task: Task,
    pub resolution: usize,
    pub text_source: TextSource,
    pub seed: u64,
    pub strokes: StrokeConfig,
    pub ssim: SsimConfig,
}

fn image_seed(seed: u64, key: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(key.as_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

/// Degrades every image, restores it and scores it against the original.
///
/// Each image's degradation seed depends only on the root seed and the
/// image's path, so the report does not depend on dataset order.
pub fn evaluate_dataset(
    restorer: &dyn Restorer,
    dataset: &Dataset,
    provider: &dyn EmbeddingProvider,
    metric: &PerceptualMetric,
    options: &EvalOptions,
) -> Result<MetricReport> {
    let mut per_image = Vec::new();
    let (mut no_captions, mut unreadable) = (0, 0);
    for entry in dataset.entries() {
        let key = entry
            .path
            .strip_prefix(dataset.root())
            .unwrap_or(&entry.path)
            .to_string_lossy()
            .into_owned();
        if options.text_source == TextSource::Captions && entry.captions.is_empty() {
            no_captions += 1;
            continue;
        }
        let gt = match load_square(&entry.path, options.resolution) {
            Ok(img) => img,
            Err(e) => {
                log::warn!("skipping {}: {e}", entry.path.display());
                unreadable += 1;
                continue;
            }
        };
        let condition = match options.text_source {
            TextSource::Captions => {
                let embeddings = entry
                    .captions
                    .iter()
                    .map(|c| provider.embed_text(c))
                    .collect::<Result<Vec<_>>>()?;
                mean_embedding(&embeddings)?
            }
            TextSource::Image => provider.embed_image(&gt)?,
        };
        let sample = degrade_random(options.task, &gt, image_seed(options.seed, &key), &options.strokes)?;
        let restored = restorer.restore_sample(&sample, &condition)?;
        per_image.push(ImageMetrics {
            path: key,
            psnr: psnr(&restored, &gt, 1.0)?,
            ssim: ssim(&restored, &gt, &options.ssim)?,
            perceptual: metric.distance(&restored, &gt)?,
        });
    }
    per_image.sort_by(|a, b| a.path.cmp(&b.path));
    let n = per_image.len();
    let mean = |f: fn(&ImageMetrics) -> f64| {
        if n == 0 {
            f64::NAN
        } else {
            per_image.iter().map(f).sum::<f64>() / n as f64
        }
    };
    let config_hash = {
        let desc = serde_json::json!({
            "task": options.task,
            "resolution": options.resolution,
            "text_source": options.text_source,
            "seed": options.seed,
            "strokes": options.strokes,
            "ssim": options.ssim,
            "provider": provider.spec(),
            "extractor": metric.extractor.name(),
        });
        hex::encode(Sha256::digest(desc.to_string().as_bytes()))
    };
    Ok(MetricReport {
        task: options.task,
        text_source: options.text_source,
        seed: options.seed,
        mean_psnr: mean(|m| m.psnr),
        mean_ssim: mean(|m| m.ssim),
        mean_perceptual: mean(|m| m.perceptual),
        evaluated: n,
        skipped_missing_captions: no_captions,
        skipped_unreadable: unreadable,
        perceptual_calibrated: metric.is_calibrated(),
        config_hash,
        per_image,
    })
}
