//! Planar image rasters and the restoration tasks that consume them.

use std::fmt;
use std::io::Cursor;
use std::path::Path;
use std::str::FromStr;

use candle_core::{Device, Tensor};
use image::{DynamicImage, GrayImage, ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The three restoration problems the network is trained for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "inpaint")]
    Inpaint,
    #[serde(rename = "sr")]
    SuperResolution,
    #[serde(rename = "colorize")]
    Colorize,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Inpaint, Task::SuperResolution, Task::Colorize];

    /// Channels of the degraded input: masked RGB plus mask, RGB, or the L plane.
    pub fn input_channels(self) -> usize {
        match self {
            Task::Inpaint => 4,
            Task::SuperResolution => 3,
            Task::Colorize => 1,
        }
    }

    /// Channels produced by the generator head: RGB, or the ab planes.
    pub fn output_channels(self) -> usize {
        match self {
            Task::Inpaint | Task::SuperResolution => 3,
            Task::Colorize => 2,
        }
    }

    pub fn default_resolution(self) -> usize {
        match self {
            Task::SuperResolution => 512,
            Task::Inpaint | Task::Colorize => 256,
        }
    }

    pub fn input_space(self) -> ColorSpace {
        match self {
            Task::Inpaint => ColorSpace::RgbWithMask,
            Task::SuperResolution => ColorSpace::Rgb,
            Task::Colorize => ColorSpace::LabLightness,
        }
    }

    pub fn output_space(self) -> ColorSpace {
        match self {
            Task::Colorize => ColorSpace::LabChroma,
            _ => ColorSpace::Rgb,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Inpaint => "inpaint",
            Task::SuperResolution => "sr",
            Task::Colorize => "colorize",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inpaint" => Ok(Task::Inpaint),
            "sr" | "super-resolution" => Ok(Task::SuperResolution),
            "colorize" => Ok(Task::Colorize),
            other => Err(Error::validation(format!(
                "unknown task `{other}` (expected inpaint, sr or colorize)"
            ))),
        }
    }
}

/// Declares how the planes of an [`ImageTensor`] are to be read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorSpace {
    /// sRGB in `[0, 1]`.
    Rgb,
    /// sRGB in `[0, 1]` followed by a binary keep-mask plane.
    RgbWithMask,
    /// Binary mask, 1 = keep.
    Mask,
    /// CIE L, `[0, 100]`.
    LabLightness,
    /// CIE a and b divided by 128, nominally `[-1, 1]`.
    LabChroma,
    /// CIE Lab in natural units.
    Lab,
}

/// A `C×H×W` raster stored plane by plane.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    channels: usize,
    height: usize,
    width: usize,
    space: ColorSpace,
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        space: ColorSpace,
        data: Vec<f32>,
    ) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::shape(format!(
                "empty image {channels}x{height}x{width}"
            )));
        }
        if data.len() != channels * height * width {
            return Err(Error::shape(format!(
                "buffer of {} values does not fill {channels}x{height}x{width}",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            space,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, space: ColorSpace, value: f32) -> Self {
        Self::new(channels, height, width, space, vec![value; channels * height * width])
            .expect("non-empty dims")
    }

    pub fn zeros(channels: usize, height: usize, width: usize, space: ColorSpace) -> Self {
        Self::filled(channels, height, width, space, 0.0)
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        space: ColorSpace,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::new(channels, height, width, space, data).expect("non-empty dims")
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn space(&self) -> ColorSpace {
        self.space
    }

    pub fn with_space(mut self, space: ColorSpace) -> Self {
        self.space = space;
        self
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    /// Copies channels `start..start + count` into a new image.
    pub fn select_channels(&self, start: usize, count: usize, space: ColorSpace) -> Result<Self> {
        if count == 0 || start + count > self.channels {
            return Err(Error::shape(format!(
                "channel range {start}..{} out of {} channels",
                start + count,
                self.channels
            )));
        }
        let n = self.height * self.width;
        let data = self.data[start * n..(start + count) * n].to_vec();
        Self::new(count, self.height, self.width, space, data)
    }

    /// Stacks `self` and `other` along the channel axis.
    pub fn concat(&self, other: &ImageTensor, space: ColorSpace) -> Result<Self> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::shape(format!(
                "cannot concatenate {}x{} with {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Self::new(self.channels + other.channels, self.height, self.width, space, data)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &ImageTensor) -> Result<f32> {
        self.ensure_same_dims(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max))
    }

    pub fn ensure_same_dims(&self, other: &ImageTensor) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::shape(format!(
                "{:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        Ok(())
    }

    /// `1×C×H×W` tensor on `device`.
    pub fn to_tensor(&self, device: &Device) -> Result<Tensor> {
        Ok(Tensor::from_slice(
            &self.data,
            (1, self.channels, self.height, self.width),
            device,
        )?)
    }

    /// Accepts `C×H×W` or `1×C×H×W`.
    pub fn from_tensor(t: &Tensor, space: ColorSpace) -> Result<Self> {
        let t = match t.rank() {
            4 => {
                if t.dim(0)? != 1 {
                    return Err(Error::shape(format!(
                        "expected a single image, got batch of {}",
                        t.dim(0)?
                    )));
                }
                t.squeeze(0)?
            }
            3 => t.clone(),
            r => return Err(Error::shape(format!("expected rank 3 or 4, got {r}"))),
        };
        let (c, h, w) = t.dims3()?;
        let data = t
            .to_dtype(candle_core::DType::F32)?
            .flatten_all()?
            .to_vec1::<f32>()?;
        Self::new(c, h, w, space, data)
    }

    /// Decodes any supported raster format into RGB in `[0, 1]`.
    pub fn from_encoded(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory(bytes)?;
        Ok(Self::from_dynamic(&img))
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path)?;
        Ok(Self::from_dynamic(&img))
    }

    pub fn from_dynamic(img: &DynamicImage) -> Self {
        let rgb = img.to_rgb8();
        let (w, h) = (rgb.width() as usize, rgb.height() as usize);
        Self::from_fn(3, h, w, ColorSpace::Rgb, |c, y, x| {
            rgb.get_pixel(x as u32, y as u32)[c] as f32 / 255.0
        })
    }

    /// 8-bit quantization of an RGB (3-plane) or single-plane image in `[0, 1]`.
    pub fn to_dynamic(&self) -> Result<DynamicImage> {
        let q = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        let (w, h) = (self.width as u32, self.height as u32);
        match self.channels {
            3 => {
                let img = RgbImage::from_fn(w, h, |x, y| {
                    let (x, y) = (x as usize, y as usize);
                    image::Rgb([q(self.get(0, y, x)), q(self.get(1, y, x)), q(self.get(2, y, x))])
                });
                Ok(DynamicImage::ImageRgb8(img))
            }
            1 => {
                let img = GrayImage::from_fn(w, h, |x, y| {
                    image::Luma([q(self.get(0, y as usize, x as usize))])
                });
                Ok(DynamicImage::ImageLuma8(img))
            }
            c => Err(Error::shape(format!("cannot encode {c}-channel image"))),
        }
    }

    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Cursor::new(Vec::new());
        self.to_dynamic()?.write_to(&mut buf, ImageFormat::Png)?;
        Ok(buf.into_inner())
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_png_bytes()?)?;
        Ok(())
    }
}
