//! Degraded/ground-truth pairs for the three tasks, plus procedural
//! free-form masks.

use std::io::Cursor;

use image::{GrayImage, ImageFormat};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::color::split_lightness_chroma;
use crate::error::{Error, Result};
use crate::image::{ColorSpace, ImageTensor, Task};
use crate::resample::resize_bicubic;

/// Downscale factors used for super-resolution training.
pub const SR_FACTORS: [u32; 5] = [4, 8, 16, 32, 64];

/// Largest hole fraction a training mask may have.
pub const MAX_HOLE_FRACTION: f64 = 0.95;

/// Binary keep-mask: 1 = keep, 0 = hole.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    keep: Vec<u8>,
}

impl Mask {
    pub fn all_keep(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            keep: vec![1; height * width],
        }
    }

    pub fn from_keep(height: usize, width: usize, keep: Vec<bool>) -> Result<Self> {
        if keep.len() != height * width || keep.is_empty() {
            return Err(Error::shape(format!(
                "mask of {} values does not fill {height}x{width}",
                keep.len()
            )));
        }
        Ok(Self {
            height,
            width,
            keep: keep.into_iter().map(u8::from).collect(),
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn keeps(&self, y: usize, x: usize) -> bool {
        self.keep[y * self.width + x] == 1
    }

    fn punch(&mut self, y: usize, x: usize) {
        self.keep[y * self.width + x] = 0;
    }

    pub fn hole_fraction(&self) -> f64 {
        let holes = self.keep.iter().filter(|&&k| k == 0).count();
        holes as f64 / self.keep.len() as f64
    }

    pub fn to_image(&self) -> ImageTensor {
        ImageTensor::new(
            1,
            self.height,
            self.width,
            ColorSpace::Mask,
            self.keep.iter().map(|&k| k as f32).collect(),
        )
        .expect("mask dims are non-empty")
    }

    /// Decodes an 8-bit mask; values ≥ 128 keep, the rest are holes.
    pub fn from_png_bytes(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory(bytes)?.to_luma8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        Self::from_keep(h, w, img.pixels().map(|p| p.0[0] >= 128).collect())
    }

    /// Encodes as 8-bit grayscale PNG, 255 = keep, 0 = hole.
    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        let img = GrayImage::from_raw(
            self.width as u32,
            self.height as u32,
            self.keep.iter().map(|&k| k * 255).collect(),
        )
        .expect("buffer matches dims");
        let mut buf = Cursor::new(Vec::new());
        img.write_to(&mut buf, ImageFormat::Png)?;
        Ok(buf.into_inner())
    }
}

/// Knobs for [`sample_freeform_mask`]. Lengths are fractions of the shorter side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StrokeConfig {
    pub min_strokes: usize,
    pub max_strokes: usize,
    pub min_vertices: usize,
    pub max_vertices: usize,
    pub max_step: f64,
    pub min_brush: f64,
    pub max_brush: f64,
    pub min_rects: usize,
    pub max_rects: usize,
    pub max_rect: f64,
    pub min_hole: f64,
    pub max_hole: f64,
    pub max_attempts: usize,
}

impl Default for StrokeConfig {
    fn default() -> Self {
        Self {
            min_strokes: 1,
            max_strokes: 4,
            min_vertices: 4,
            max_vertices: 10,
            max_step: 0.15,
            min_brush: 0.03,
            max_brush: 0.08,
            min_rects: 0,
            max_rects: 2,
            max_rect: 0.3,
            min_hole: 0.05,
            max_hole: 0.5,
            max_attempts: 64,
        }
    }
}

impl StrokeConfig {
    pub fn empty() -> Self {
        Self {
            min_strokes: 0,
            max_strokes: 0,
            min_rects: 0,
            max_rects: 0,
            ..Self::default()
        }
    }

    fn draws_nothing(&self) -> bool {
        self.max_strokes == 0 && self.max_rects == 0
    }

    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("strokes", self.min_strokes, self.max_strokes),
            ("vertices", self.min_vertices, self.max_vertices),
            ("rects", self.min_rects, self.max_rects),
        ];
        for (name, lo, hi) in ranges {
            if lo > hi {
                return Err(Error::config(format!("min {name} {lo} exceeds max {hi}")));
            }
        }
        if !(self.min_brush > 0.0 && self.min_brush <= self.max_brush) {
            return Err(Error::config("brush width range must satisfy 0 < min <= max"));
        }
        if !(0.0..=MAX_HOLE_FRACTION).contains(&self.min_hole)
            || !(self.min_hole..=MAX_HOLE_FRACTION).contains(&self.max_hole)
            || self.max_hole <= 0.0
        {
            return Err(Error::config(format!(
                "hole fraction bounds [{}, {}] must satisfy 0 <= min <= max <= {MAX_HOLE_FRACTION}, max > 0",
                self.min_hole, self.max_hole
            )));
        }
        if self.max_attempts == 0 {
            return Err(Error::config("max_attempts must be positive"));
        }
        Ok(())
    }
}

/// Draws a free-form mask of random-walk brush strokes and rectangles.
///
/// Candidates are redrawn from the same seeded stream until the hole
/// fraction falls inside `[min_hole, max_hole]`.
pub fn sample_freeform_mask(
    seed: u64,
    height: usize,
    width: usize,
    config: &StrokeConfig,
) -> Result<Mask> {
    if height == 0 || width == 0 {
        return Err(Error::validation("mask size must be positive"));
    }
    config.validate()?;
    if config.draws_nothing() {
        return Ok(Mask::all_keep(height, width));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..config.max_attempts {
        let mask = draw_candidate(&mut rng, height, width, config);
        let frac = mask.hole_fraction();
        if frac > 0.0 && frac >= config.min_hole && frac <= config.max_hole {
            return Ok(mask);
        }
    }
    Err(Error::config(format!(
        "no mask with hole fraction in [{}, {}] after {} attempts at {height}x{width}",
        config.min_hole, config.max_hole, config.max_attempts
    )))
}

fn draw_candidate(rng: &mut ChaCha8Rng, height: usize, width: usize, cfg: &StrokeConfig) -> Mask {
    let mut mask = Mask::all_keep(height, width);
    let side = height.min(width) as f64;
    let strokes = rng.gen_range(cfg.min_strokes..=cfg.max_strokes);
    for _ in 0..strokes {
        let radius = 0.5 * side * rng.gen_range(cfg.min_brush..=cfg.max_brush);
        let mut p = (rng.gen_range(0.0..width as f64), rng.gen_range(0.0..height as f64));
        let vertices = rng.gen_range(cfg.min_vertices..=cfg.max_vertices);
        for _ in 0..vertices {
            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
            let len = side * cfg.max_step * rng.gen_range(0.25..=1.0);
            let q = (
                (p.0 + len * angle.cos()).clamp(0.0, width as f64 - 1.0),
                (p.1 + len * angle.sin()).clamp(0.0, height as f64 - 1.0),
            );
            stamp_segment(&mut mask, p, q, radius);
            p = q;
        }
    }
    let rects = rng.gen_range(cfg.min_rects..=cfg.max_rects);
    for _ in 0..rects {
        let rh = ((side * rng.gen_range(0.05..=cfg.max_rect.max(0.05))) as usize).max(1);
        let rw = ((side * rng.gen_range(0.05..=cfg.max_rect.max(0.05))) as usize).max(1);
        let y0 = rng.gen_range(0..height.saturating_sub(rh).max(1));
        let x0 = rng.gen_range(0..width.saturating_sub(rw).max(1));
        for y in y0..(y0 + rh).min(height) {
            for x in x0..(x0 + rw).min(width) {
                mask.punch(y, x);
            }
        }
    }
    mask
}

/// Clears every pixel whose center is within `radius` of segment `a`–`b`.
fn stamp_segment(mask: &mut Mask, a: (f64, f64), b: (f64, f64), radius: f64) {
    let x_lo = (a.0.min(b.0) - radius).floor().max(0.0) as usize;
    let y_lo = (a.1.min(b.1) - radius).floor().max(0.0) as usize;
    let x_hi = ((a.0.max(b.0) + radius).ceil() as usize).min(mask.width - 1);
    let y_hi = ((a.1.max(b.1) + radius).ceil() as usize).min(mask.height - 1);
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    for y in y_lo..=y_hi {
        for x in x_lo..=x_hi {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let t = if len2 > 0.0 {
                (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let (cx, cy) = (a.0 + t * dx - px, a.1 + t * dy - py);
            if cx * cx + cy * cy <= radius * radius {
                mask.punch(y, x);
            }
        }
    }
}

/// A degraded input with its ground truth and task-specific extras.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSample {
    pub task: Task,
    pub degraded: ImageTensor,
    pub ground_truth: ImageTensor,
    pub mask: Option<Mask>,
    pub scale: Option<u32>,
    /// Scaled ab planes of the ground truth (colorization only).
    pub color_target: Option<ImageTensor>,
}

fn expect_rgb(img: &ImageTensor, task: Task) -> Result<()> {
    if img.channels() != 3 {
        return Err(Error::TaskShape {
            task,
            msg: format!("ground truth must be RGB, got {} planes", img.channels()),
        });
    }
    Ok(())
}

/// `[I_gt ⊙ M, M]`.
pub fn degrade_inpaint(gt: &ImageTensor, mask: &Mask) -> Result<TaskSample> {
    expect_rgb(gt, Task::Inpaint)?;
    if (gt.height(), gt.width()) != (mask.height(), mask.width()) {
        return Err(Error::TaskShape {
            task: Task::Inpaint,
            msg: format!(
                "mask is {}x{} but image is {}x{}",
                mask.height(),
                mask.width(),
                gt.height(),
                gt.width()
            ),
        });
    }
    let masked = ImageTensor::from_fn(3, gt.height(), gt.width(), ColorSpace::Rgb, |c, y, x| {
        if mask.keeps(y, x) {
            gt.get(c, y, x)
        } else {
            0.0
        }
    });
    let degraded = masked.concat(&mask.to_image(), ColorSpace::RgbWithMask)?;
    Ok(TaskSample {
        task: Task::Inpaint,
        degraded,
        ground_truth: gt.clone(),
        mask: Some(mask.clone()),
        scale: None,
        color_target: None,
    })
}

/// Bicubic down by `factor`, then bicubic back up to the original size.
pub fn degrade_sr(gt: &ImageTensor, factor: u32) -> Result<TaskSample> {
    expect_rgb(gt, Task::SuperResolution)?;
    let f = factor as usize;
    if f == 0 || gt.height() % f != 0 || gt.width() % f != 0 {
        return Err(Error::validation(format!(
            "downscale factor {factor} does not divide {}x{}",
            gt.height(),
            gt.width()
        )));
    }
    let small = resize_bicubic(gt, gt.height() / f, gt.width() / f)?;
    let degraded = resize_bicubic(&small, gt.height(), gt.width())?;
    Ok(TaskSample {
        task: Task::SuperResolution,
        degraded,
        ground_truth: gt.clone(),
        mask: None,
        scale: Some(factor),
        color_target: None,
    })
}

/// L plane as input, scaled ab planes as the target.
pub fn degrade_gray(gt: &ImageTensor) -> Result<TaskSample> {
    expect_rgb(gt, Task::Colorize)?;
    let (lightness, chroma) = split_lightness_chroma(gt)?;
    Ok(TaskSample {
        task: Task::Colorize,
        degraded: lightness,
        ground_truth: gt.clone(),
        mask: None,
        scale: None,
        color_target: Some(chroma),
    })
}

pub fn sample_sr_factor<R: Rng + ?Sized>(rng: &mut R) -> u32 {
    SR_FACTORS[rng.gen_range(0..SR_FACTORS.len())]
}

/// Applies the task's degradation with randomness drawn from `seed`.
pub fn degrade_random(
    task: Task,
    gt: &ImageTensor,
    seed: u64,
    strokes: &StrokeConfig,
) -> Result<TaskSample> {
    match task {
        Task::Inpaint => {
            let mask = sample_freeform_mask(seed, gt.height(), gt.width(), strokes)?;
            degrade_inpaint(gt, &mask)
        }
        Task::SuperResolution => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // uniform over the factors that divide the image; all of them at
            // the native resolutions
            let usable: Vec<u32> = SR_FACTORS
                .iter()
                .copied()
                .filter(|&f| gt.height() % f as usize == 0 && gt.width() % f as usize == 0)
                .collect();
            if usable.is_empty() {
                return Err(Error::validation(format!(
                    "no downscale factor divides {}x{}",
                    gt.height(),
                    gt.width()
                )));
            }
            degrade_sr(gt, usable[rng.gen_range(0..usable.len())])
        }
        Task::Colorize => degrade_gray(gt),
    }
}

/// Keeps known pixels from `original` and takes the rest from `restored`.
pub fn compose_inpaint(original: &ImageTensor, restored: &ImageTensor, mask: &Mask) -> Result<ImageTensor> {
    original.ensure_same_dims(restored)?;
    if (original.height(), original.width()) != (mask.height(), mask.width()) {
        return Err(Error::shape("mask does not match image"));
    }
    Ok(ImageTensor::from_fn(
        original.channels(),
        original.height(),
        original.width(),
        restored.space(),
        |c, y, x| {
            if mask.keeps(y, x) {
                original.get(c, y, x)
            } else {
                restored.get(c, y, x)
            }
        },
    ))
}
