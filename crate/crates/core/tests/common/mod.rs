#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use candle_core::Device;
use textir::degradations::{degrade_inpaint, Mask, TaskSample};
use textir::features::RandomConvExtractor;
use textir::generator::GeneratorSpec;
use textir::training::{Batch, DiscriminatorConfig, ExtractorChoice, TrainConfig, Trainer};
use textir::{ColorSpace, ImageTensor, StubProvider, Task};

/// Smooth, colorful test image.
pub fn pattern(side: usize, phase: f32) -> ImageTensor {
    ImageTensor::from_fn(3, side, side, ColorSpace::Rgb, |c, y, x| {
        let (u, v) = (x as f32 / side as f32, y as f32 / side as f32);
        0.5 + 0.4 * ((u * 3.0 + v * 2.0 + c as f32 * 1.7 + phase) * std::f32::consts::PI).sin()
    })
}

pub fn centre_hole(side: usize) -> Mask {
    let keep = (0..side * side)
        .map(|i| {
            let (y, x) = (i / side, i % side);
            !(side / 4..3 * side / 4).contains(&y) || !(side / 4..3 * side / 4).contains(&x)
        })
        .collect();
    Mask::from_keep(side, side, keep).unwrap()
}

pub fn tiny_config(task: Task, side: usize, seed: u64) -> TrainConfig {
    let mut c = TrainConfig::new(task, "unused");
    c.seed = seed;
    c.batch_size = 1;
    c.generator = GeneratorSpec::tiny(task, side);
    c.discriminator = DiscriminatorConfig {
        base_width: 8,
        max_width: 16,
    };
    c.extractor = ExtractorChoice::RandomConv { seed: 0 };
    c
}

pub fn tiny_trainer(config: TrainConfig) -> Trainer {
    Trainer::new(
        config,
        Arc::new(StubProvider::new()),
        Arc::new(RandomConvExtractor::new(0)),
        &Device::Cpu,
    )
    .unwrap()
}

pub fn inpaint_sample(side: usize) -> TaskSample {
    degrade_inpaint(&pattern(side, 0.0), &centre_hole(side)).unwrap()
}

pub fn fixed_batch(samples: Vec<TaskSample>) -> Batch {
    let idx = (0..samples.len()).collect();
    Batch::from_samples(samples, idx, &StubProvider::new(), &Device::Cpu).unwrap()
}

/// Writes `n` distinct PNGs and an `index.tsv` with captions on every other image.
pub fn write_dataset(dir: &Path, n: usize, side: usize) {
    let mut index = String::new();
    for i in 0..n {
        let name = format!("img{i:02}.png");
        pattern(side, i as f32 * 0.37).save_png(dir.join(&name)).unwrap();
        if i % 2 == 0 {
            index.push_str(&format!("{name}\ttrain\ta smooth wave {i}\tstripes\n"));
        } else {
            index.push_str(&format!("{name}\ttrain\n"));
        }
    }
    std::fs::write(dir.join("index.tsv"), index).unwrap();
}
