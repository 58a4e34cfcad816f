#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use candle_core::Device;
use textir::checkpoint::Checkpoint;
use textir::degradations::Mask;
use textir::generator::GeneratorSpec;
use textir::{ColorSpace, EmbeddingProvider, ImageTensor, StubProvider, Task, TextIr};
use textir_server::LoadedModel;

pub const SIDE: usize = 16;

pub fn pattern(side: usize, phase: f32) -> ImageTensor {
    ImageTensor::from_fn(3, side, side, ColorSpace::Rgb, |c, y, x| {
        let (u, v) = (x as f32 / side as f32, y as f32 / side as f32);
        0.5 + 0.4 * ((u * 3.0 + v * 2.0 + c as f32 * 1.7 + phase) * std::f32::consts::PI).sin()
    })
}

/// The pattern after an 8-bit PNG round trip, i.e. what the service sees.
pub fn quantized(img: &ImageTensor) -> ImageTensor {
    ImageTensor::from_encoded(&img.to_png_bytes().unwrap()).unwrap()
}

pub fn png(img: &ImageTensor) -> Vec<u8> {
    img.to_png_bytes().unwrap()
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

pub fn tiny_model(task: Task, seed: u64) -> TextIr {
    TextIr::new(GeneratorSpec::tiny(task, SIDE), &Device::Cpu, seed).unwrap()
}

/// Saves a fresh tiny model with the stub provider recorded in its header.
pub fn write_checkpoint(dir: &Path, task: Task, seed: u64) -> PathBuf {
    let model = tiny_model(task, seed);
    let path = dir.join(format!("{task}-{seed}.ckpt"));
    let stub = StubProvider::new();
    Checkpoint::from_model(&model, Some(stub.spec())).unwrap().save(&path).unwrap();
    path
}

pub fn loaded(task: Task, seed: u64) -> LoadedModel {
    LoadedModel::from_parts(tiny_model(task, seed), Arc::new(StubProvider::new()), "0123456789abcdef".into(), 0).unwrap()
}

/// Writes `n` PNGs and an `index.tsv`, all in the `test` split and captioned.
pub fn write_dataset(dir: &Path, n: usize, side: usize) {
    let mut index = String::new();
    for i in 0..n {
        let name = format!("img{i:02}.png");
        pattern(side, i as f32 * 0.37).save_png(dir.join(&name)).unwrap();
        index.push_str(&format!("{name}\ttest\ta smooth wave {i}\n"));
    }
    std::fs::write(dir.join("index.tsv"), index).unwrap();
}
