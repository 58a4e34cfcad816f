use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use candle_core::{Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, EMA_PREFIX, MODEL_PREFIX};
use crate::conditioning::EmbeddingProvider;
use crate::error::{Error, Result};
use crate::features::FeatureExtractor;
use crate::losses::{
    adv_loss_d, adv_loss_g, clip_loss, perceptual_loss, pixel_loss, total_g_loss, Discriminator, LossReport,
    LossTerms,
};
use crate::model::TextIr;
use crate::nn::ParamStore;
use crate::training::adam::Adam;
use crate::training::batch::{make_batch, Batch};
use crate::training::config::TrainConfig;
use crate::training::dataset::Dataset;

const DISC_PREFIX: &str = "disc/";
const ADAM_G_PREFIX: &str = "adam_g/";
const ADAM_D_PREFIX: &str = "adam_d/";

/// Seed offset separating discriminator init from generator init.
const DISC_SEED_OFFSET: u64 = 0x5eed_d15c;
const DATA_STREAM: u64 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub d_loss: f64,
    pub report: LossReport,
    /// The scalar the generator step actually minimized.
    pub optimized_total: f64,
    pub lr: f64,
    pub wall_ms: f64,
}

/// Tensors of one generator forward pass over a batch.
pub struct BatchForward {
    pub input: Tensor,
    pub output: Tensor,
    pub rgb: Tensor,
    pub ground_truth: Tensor,
    pub target: Tensor,
}

/// Generator loss terms as graph tensors plus their weighted sum.
pub struct GeneratorObjective {
    pub adv: Tensor,
    pub clip: Tensor,
    pub pixel: Tensor,
    pub perceptual: Tensor,
    pub total: Tensor,
}

#[derive(Debug, Serialize, Deserialize)]
struct TrainMeta {
    config: TrainConfig,
    rng_seed: String,
    rng_stream: u64,
    rng_word_pos: String,
    adam_g_steps: u64,
    adam_d_steps: u64,
}

pub struct Trainer {
    config: TrainConfig,
    device: Device,
    model: TextIr,
    disc_params: ParamStore,
    disc: Discriminator,
    provider: Arc<dyn EmbeddingProvider>,
    extractor: Arc<dyn FeatureExtractor>,
    opt_g: Adam,
    opt_d: Adam,
    ema: Option<BTreeMap<String, Tensor>>,
    rng: ChaCha8Rng,
    step: u64,
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?)
}

impl Trainer {
    pub fn new(
        config: TrainConfig,
        provider: Arc<dyn EmbeddingProvider>,
        extractor: Arc<dyn FeatureExtractor>,
        device: &Device,
    ) -> Result<Self> {
        config.validate()?;
        let dim = provider.spec().embedding_dim;
        if dim != config.generator.embedding_dim {
            return Err(Error::config(format!(
                "provider `{}` embeds to {dim} dims, generator expects {}",
                provider.spec().name,
                config.generator.embedding_dim
            )));
        }
        let model = TextIr::new(config.generator.clone(), device, config.seed)?;
        let mut disc_params = ParamStore::new(device, config.seed.wrapping_add(DISC_SEED_OFFSET));
        let disc = Discriminator::new(
            &mut disc_params,
            config.generator.resolution,
            config.discriminator.base_width,
            config.discriminator.max_width,
        )?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(DATA_STREAM);
        let ema = match config.ema_decay {
            Some(_) => Some(model.params().snapshot()?),
            None => None,
        };
        Ok(Self {
            opt_g: Adam::new(config.betas, config.adam_eps)?,
            opt_d: Adam::new(config.betas, config.adam_eps)?,
            config,
            device: device.clone(),
            model,
            disc_params,
            disc,
            provider,
            extractor,
            ema,
            rng,
            step: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &TextIr {
        &self.model
    }

    pub fn discriminator(&self) -> &Discriminator {
        &self.disc
    }

    pub fn discriminator_params(&self) -> &ParamStore {
        &self.disc_params
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Moves the stopping point, e.g. to extend a resumed run.
    pub fn set_max_iters(&mut self, max_iters: u64) {
        self.config.max_iters = max_iters;
    }

    pub fn provider(&self) -> &Arc<dyn EmbeddingProvider> {
        &self.provider
    }

    pub fn next_batch(&mut self, dataset: &Dataset) -> Result<Batch> {
        make_batch(
            dataset,
            self.config.task,
            self.config.generator.resolution,
            self.config.batch_size,
            &self.config.strokes,
            self.provider.as_ref(),
            &mut self.rng,
            self.config.max_consecutive_failures,
            &self.device,
        )
    }

    pub fn forward_batch(&self, batch: &Batch) -> Result<BatchForward> {
        if batch.condition_source != crate::conditioning::EmbeddingSource::Image {
            return Err(Error::validation("training conditions must be image embeddings"));
        }
        let degraded: Vec<_> = batch.samples.iter().map(|s| &s.degraded).collect();
        let input = self.model.network_input(&degraded)?;
        let strength = batch.strength(&self.device)?;
        let output = self.model.forward(&input, &batch.conditions, strength.as_ref())?;
        let rgb = self.model.output_to_rgb(&output, &input)?;
        Ok(BatchForward {
            input,
            output,
            rgb,
            ground_truth: batch.ground_truth(&self.device)?,
            target: batch.target(&self.device)?,
        })
    }

    /// `λ_adv · L_adv,D` on detached fakes.
    pub fn d_objective(&self, fw: &BatchForward) -> Result<Tensor> {
        let real = self.disc.forward(&fw.ground_truth)?;
        let fake = self.disc.forward(&fw.rgb.detach())?;
        Ok(adv_loss_d(&real, &fake)?.affine(self.config.losses.lambda_adv, 0.0)?)
    }

    pub fn g_objective(&self, fw: &BatchForward) -> Result<GeneratorObjective> {
        let l = &self.config.losses;
        let adv = adv_loss_g(&self.disc.forward(&fw.rgb)?)?;
        let clip = clip_loss(&fw.rgb, &fw.ground_truth, self.provider.as_ref())?;
        let pixel = pixel_loss(&fw.output, &fw.target, l.pixel_mode, l.smooth_l1_delta)?;
        let perceptual = perceptual_loss(&fw.rgb, &fw.ground_truth, self.extractor.as_ref())?;
        let total = (adv.affine(l.lambda_adv, 0.0)?
            + clip.affine(l.lambda_clip, 0.0)?
            + pixel.affine(l.lambda_l1, 0.0)?
            + perceptual.affine(l.lambda_perc, 0.0)?)?;
        Ok(GeneratorObjective {
            adv,
            clip,
            pixel,
            perceptual,
            total,
        })
    }

    fn check_finite(&self, term: &str, value: f64) -> Result<()> {
        if value.is_finite() {
            Ok(())
        } else {
            log::error!("step {}: loss term `{term}` = {value}", self.step);
            Err(Error::NonFiniteLoss {
                term: term.to_string(),
                step: self.step,
                value,
            })
        }
    }

    fn lr_factor(&self) -> f64 {
        self.config.lr_schedule.factor(self.step, self.config.max_iters)
    }

    /// Updates the discriminator only; returns `λ_adv · L_adv,D`.
    pub fn discriminator_step(&mut self, fw: &BatchForward) -> Result<f64> {
        let d_loss = self.d_objective(fw)?;
        let value = scalar(&d_loss)?;
        self.check_finite("adv_d", value)?;
        let grads = d_loss.backward()?;
        self.opt_d.step(&self.disc_params, &grads, self.config.d_lr() * self.lr_factor())?;
        Ok(value)
    }

    /// Updates encoder, mapping, strength MLP and generator; returns the
    /// report and the scalar that was minimized.
    pub fn generator_step(&mut self, fw: &BatchForward) -> Result<(LossReport, f64)> {
        let obj = self.g_objective(fw)?;
        let terms = LossTerms {
            adv: scalar(&obj.adv)?,
            clip: scalar(&obj.clip)?,
            pixel: scalar(&obj.pixel)?,
            perceptual: scalar(&obj.perceptual)?,
        };
        for (name, v) in [
            ("adv_g", terms.adv),
            ("clip", terms.clip),
            ("pixel", terms.pixel),
            ("perceptual", terms.perceptual),
        ] {
            self.check_finite(name, v)?;
        }
        let optimized = scalar(&obj.total)?;
        self.check_finite("total", optimized)?;
        let report = total_g_loss(terms, &self.config.losses)?;
        let grads = obj.total.backward()?;
        let lr = self.config.learning_rate * self.lr_factor();
        self.opt_g.step(self.model.params(), &grads, lr)?;
        self.update_ema()?;
        Ok((report, optimized))
    }

    /// One discriminator update followed by one generator update on the
    /// same forward pass.
    pub fn train_step(&mut self, batch: &Batch) -> Result<StepMetrics> {
        let start = Instant::now();
        let lr = self.config.learning_rate * self.lr_factor();
        let fw = self.forward_batch(batch)?;
        let d_loss = self.discriminator_step(&fw)?;
        let (report, optimized_total) = self.generator_step(&fw)?;
        self.step += 1;
        Ok(StepMetrics {
            step: self.step,
            d_loss,
            report,
            optimized_total,
            lr,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        })
    }

    fn update_ema(&mut self) -> Result<()> {
        let (Some(decay), Some(ema)) = (self.config.ema_decay, self.ema.as_mut()) else {
            return Ok(());
        };
        for (name, var) in self.model.params().iter() {
            let avg = ema
                .get(name)
                .ok_or_else(|| Error::config(format!("no moving average for `{name}`")))?;
            let next = (avg.affine(decay, 0.0)? + var.as_tensor().detach().affine(1.0 - decay, 0.0)?)?;
            ema.insert(name.clone(), next);
        }
        Ok(())
    }

    /// Every piece of state needed to continue the run.
    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut ckpt = Checkpoint::from_model(&self.model, Some(self.provider.spec()))?;
        ckpt.step = self.step;
        ckpt.insert_section(DISC_PREFIX, self.disc_params.snapshot()?);
        ckpt.insert_section(ADAM_G_PREFIX, self.opt_g.state());
        ckpt.insert_section(ADAM_D_PREFIX, self.opt_d.state());
        if let Some(ema) = &self.ema {
            ckpt.insert_section(EMA_PREFIX, ema.clone());
        }
        let meta = TrainMeta {
            config: self.config.clone(),
            rng_seed: hex::encode(self.rng.get_seed()),
            rng_stream: self.rng.get_stream(),
            rng_word_pos: self.rng.get_word_pos().to_string(),
            adam_g_steps: self.opt_g.steps_taken(),
            adam_d_steps: self.opt_d.steps_taken(),
        };
        ckpt.extra = serde_json::json!({ "train": meta });
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<String> {
        self.checkpoint()?.save(path)
    }

    /// Continues a run from a checkpoint written by [`save`](Self::save).
    pub fn resume(
        path: impl AsRef<Path>,
        provider: Arc<dyn EmbeddingProvider>,
        extractor: Arc<dyn FeatureExtractor>,
        device: &Device,
    ) -> Result<Self> {
        let path = path.as_ref();
        let ckpt = Checkpoint::read(path, device)?;
        let bad = |reason: String| Error::Checkpoint {
            path: path.to_path_buf(),
            reason,
        };
        let meta: TrainMeta = serde_json::from_value(ckpt.extra.get("train").cloned().unwrap_or_default())
            .map_err(|e| bad(format!("no training state: {e}")))?;
        if meta.config.generator != ckpt.spec {
            return Err(Error::SpecMismatch {
                expected: meta.config.generator.describe(),
                found: ckpt.spec.describe(),
            });
        }
        let mut trainer = Self::new(meta.config, provider, extractor, device)?;
        trainer.model.params().load(&ckpt.section(MODEL_PREFIX))?;
        trainer.disc_params.load(&ckpt.section(DISC_PREFIX))?;
        trainer.opt_g.load_state(meta.adam_g_steps, &ckpt.section(ADAM_G_PREFIX))?;
        trainer.opt_d.load_state(meta.adam_d_steps, &ckpt.section(ADAM_D_PREFIX))?;
        if trainer.ema.is_some() {
            trainer.ema = Some(ckpt.section(EMA_PREFIX));
        }
        let seed: [u8; 32] = hex::decode(&meta.rng_seed)
            .ok()
            .and_then(|b| b.try_into().ok())
            .ok_or_else(|| bad("bad rng seed".into()))?;
        let word_pos: u128 = meta.rng_word_pos.parse().map_err(|_| bad("bad rng position".into()))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(meta.rng_stream);
        rng.set_word_pos(word_pos);
        trainer.rng = rng;
        trainer.step = ckpt.step;
        Ok(trainer)
    }

    /// Trains until `max_iters`, appending one JSON line per step to
    /// `metrics.jsonl` and checkpointing every `checkpoint_every` steps.
    pub fn fit(&mut self, dataset: &Dataset) -> Result<Option<StepMetrics>> {
        let out = self.config.output_dir.clone();
        fs::create_dir_all(&out)?;
        let mut log = OpenOptions::new().create(true).append(true).open(out.join("metrics.jsonl"))?;
        let mut last = None;
        while self.step < self.config.max_iters {
            let batch = self.next_batch(dataset)?;
            let m = self.train_step(&batch)?;
            let line = serde_json::json!({
                "step": m.step,
                "d_loss": m.d_loss,
                "adv": m.report.terms.adv,
                "clip": m.report.terms.clip,
                "pixel": m.report.terms.pixel,
                "perceptual": m.report.terms.perceptual,
                "total": m.report.total,
                "lr": m.lr,
                "wall_ms": m.wall_ms,
            });
            writeln!(log, "{line}")?;
            if m.step % self.config.checkpoint_every == 0 || m.step == self.config.max_iters {
                let path = out.join(format!("ckpt-{:08}.ckpt", m.step));
                let hash = self.save(&path)?;
                log::info!("step {}: checkpoint {} ({hash})", m.step, path.display());
                prune_checkpoints(&out, self.config.keep_last)?;
            }
            last = Some(m);
        }
        Ok(last)
    }
}

fn list_checkpoints(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut found: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("ckpt-") && n.ends_with(".ckpt"))
        })
        .collect();
    found.sort();
    Ok(found)
}

/// The newest `ckpt-*.ckpt` in `dir`.
pub fn latest_checkpoint(dir: impl AsRef<Path>) -> Result<Option<PathBuf>> {
    Ok(list_checkpoints(dir.as_ref())?.pop())
}

/// Deletes all but the newest `keep` checkpoints; `0` keeps everything.
pub fn prune_checkpoints(dir: &Path, keep: usize) -> Result<()> {
    if keep == 0 {
        return Ok(());
    }
    let all = list_checkpoints(dir)?;
    for old in all.iter().take(all.len().saturating_sub(keep)) {
        fs::remove_file(old)?;
    }
    Ok(())
}
