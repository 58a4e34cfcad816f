use candle_core::{Device, Tensor};
use rand::Rng;

use crate::conditioning::{EmbeddingProvider, EmbeddingSource};
use crate::degradations::{degrade_random, StrokeConfig, TaskSample};
use crate::error::{Error, Result};
use crate::generator::StrengthFactor;
use crate::image::{ImageTensor, Task};
use crate::training::dataset::{load_square, Dataset};

/// Degraded samples with their image-embedding conditions.
#[derive(Debug, Clone)]
pub struct Batch {
    pub samples: Vec<TaskSample>,
    /// Dataset index of each sample.
    pub indices: Vec<usize>,
    /// `B×D`, computed from the ground truth images.
    pub conditions: Tensor,
    /// Always [`EmbeddingSource::Image`]: training never conditions on text.
    pub condition_source: EmbeddingSource,
}

impl Batch {
    /// Builds a batch from clean samples, embedding each ground truth.
    pub fn from_samples(
        samples: Vec<TaskSample>,
        indices: Vec<usize>,
        provider: &dyn EmbeddingProvider,
        device: &Device,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::validation("empty batch"));
        }
        let gt = stack(samples.iter().map(|s| &s.ground_truth), device)?;
        let conditions = provider.embed_image_batch(&gt)?.detach();
        Ok(Self {
            samples,
            indices,
            conditions,
            condition_source: EmbeddingSource::Image,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn task(&self) -> Task {
        self.samples[0].task
    }

    /// Ground truth RGB, `B×3×R×R`.
    pub fn ground_truth(&self, device: &Device) -> Result<Tensor> {
        stack(self.samples.iter().map(|s| &s.ground_truth), device)
    }

    /// What the network output is compared against: RGB, or the ab planes.
    pub fn target(&self, device: &Device) -> Result<Tensor> {
        match self.task() {
            Task::Colorize => stack(
                self.samples.iter().map(|s| s.color_target.as_ref().expect("colorize target")),
                device,
            ),
            _ => self.ground_truth(device),
        }
    }

    /// Normalized SR strength per sample, `B×1`; `None` for other tasks.
    pub fn strength(&self, device: &Device) -> Result<Option<Tensor>> {
        if self.task() != Task::SuperResolution {
            return Ok(None);
        }
        let values = self
            .samples
            .iter()
            .map(|s| {
                let f = s.scale.ok_or_else(|| Error::validation("SR sample without a factor"))?;
                Ok(StrengthFactor::from_sr_factor(f)?.value as f32)
            })
            .collect::<Result<Vec<f32>>>()?;
        let n = values.len();
        Ok(Some(Tensor::from_vec(values, (n, 1), device)?))
    }
}

fn stack<'a>(images: impl Iterator<Item = &'a ImageTensor>, device: &Device) -> Result<Tensor> {
    let ts = images.map(|i| i.to_tensor(device)).collect::<Result<Vec<_>>>()?;
    Ok(Tensor::cat(&ts, 0)?)
}

/// Draws `batch_size` images uniformly with replacement and degrades each
/// with a seed taken from `rng`. Unreadable files are skipped; more than
/// `max_failures` in a row is an error.
#[allow(clippy::too_many_arguments)]
pub fn make_batch<R: Rng + ?Sized>(
    dataset: &Dataset,
    task: Task,
    resolution: usize,
    batch_size: usize,
    strokes: &StrokeConfig,
    provider: &dyn EmbeddingProvider,
    rng: &mut R,
    max_failures: usize,
    device: &Device,
) -> Result<Batch> {
    if dataset.is_empty() {
        return Err(Error::Dataset("dataset has no images".into()));
    }
    let mut samples = Vec::with_capacity(batch_size);
    let mut indices = Vec::with_capacity(batch_size);
    let mut failures = 0;
    while samples.len() < batch_size {
        let index = rng.gen_range(0..dataset.len());
        let seed: u64 = rng.gen();
        let entry = &dataset.entries()[index];
        match load_square(&entry.path, resolution) {
            Ok(gt) => {
                failures = 0;
                samples.push(degrade_random(task, &gt, seed, strokes)?);
                indices.push(index);
            }
            Err(e) => {
                failures += 1;
                log::warn!("skipping {}: {e}", entry.path.display());
                if failures > max_failures {
                    return Err(Error::Dataset(format!(
                        "{failures} unreadable images in a row, last {}",
                        entry.path.display()
                    )));
                }
            }
        }
    }
    Batch::from_samples(samples, indices, provider, device)
}
