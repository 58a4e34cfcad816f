//! Resampling: antialiased bicubic for building degraded inputs, and
//! matrix-form bilinear / area resizing that stays differentiable inside the
//! network.

use candle_core::{Device, Tensor};

use crate::error::{Error, Result};
use crate::image::ImageTensor;

/// Keys cubic with `a = -0.5` (Catmull-Rom).
fn cubic(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// One output sample's taps: first input index and normalized weights.
struct Taps {
    start: usize,
    weights: Vec<f64>,
}

/// Tap tables for a 1-D resize. When shrinking, the kernel is stretched by
/// the scale so it integrates over the whole footprint.
fn cubic_taps(input: usize, output: usize) -> Vec<Taps> {
    let scale = input as f64 / output as f64;
    let stretch = scale.max(1.0);
    let support = 2.0 * stretch;
    (0..output)
        .map(|j| {
            let center = (j as f64 + 0.5) * scale;
            let lo = ((center - support).floor().max(0.0)) as usize;
            let hi = ((center + support).ceil() as usize).min(input);
            let mut weights: Vec<f64> = (lo..hi)
                .map(|i| cubic((i as f64 + 0.5 - center) / stretch))
                .collect();
            let total: f64 = weights.iter().sum();
            if total != 0.0 {
                weights.iter_mut().for_each(|w| *w /= total);
            }
            Taps { start: lo, weights }
        })
        .collect()
}

/// Separable bicubic resize of every plane.
pub fn resize_bicubic(img: &ImageTensor, height: usize, width: usize) -> Result<ImageTensor> {
    if height == 0 || width == 0 {
        return Err(Error::shape("resize target must be non-empty"));
    }
    let (c, h, w) = img.dims();
    if (h, w) == (height, width) {
        return Ok(img.clone());
    }
    let row_taps = cubic_taps(w, width);
    let col_taps = cubic_taps(h, height);
    let mut out = ImageTensor::zeros(c, height, width, img.space());
    let mut tmp = vec![0f64; h * width];
    for ch in 0..c {
        let plane = img.plane(ch);
        for y in 0..h {
            let row = &plane[y * w..(y + 1) * w];
            for (x, taps) in row_taps.iter().enumerate() {
                tmp[y * width + x] = taps
                    .weights
                    .iter()
                    .enumerate()
                    .map(|(k, wt)| wt * row[taps.start + k] as f64)
                    .sum();
            }
        }
        for (y, taps) in col_taps.iter().enumerate() {
            for x in 0..width {
                let v: f64 = taps
                    .weights
                    .iter()
                    .enumerate()
                    .map(|(k, wt)| wt * tmp[(taps.start + k) * width + x])
                    .sum();
                out.set(ch, y, x, v as f32);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Filter {
    /// Half-pixel-centered linear interpolation.
    Bilinear,
    /// Box average over each output footprint; equals bilinear when enlarging.
    Area,
}

/// `output × input` interpolation matrix.
pub fn interpolation_matrix(input: usize, output: usize, filter: Filter) -> Vec<f32> {
    let mut m = vec![0f32; output * input];
    let scale = input as f64 / output as f64;
    for j in 0..output {
        let row = &mut m[j * input..(j + 1) * input];
        if filter == Filter::Area && scale > 1.0 {
            let (a, b) = (j as f64 * scale, (j + 1) as f64 * scale);
            for (i, slot) in row.iter_mut().enumerate() {
                let overlap = (b.min(i as f64 + 1.0) - a.max(i as f64)).max(0.0);
                *slot = (overlap / scale) as f32;
            }
        } else {
            let src = ((j as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(input - 1);
            let t = src - i0 as f64;
            row[i0] += (1.0 - t) as f32;
            row[i1] += t as f32;
        }
    }
    m
}

/// Resizes a `B×C×H×W` tensor with two matrix products, so gradients flow.
pub fn resize_tensor(x: &Tensor, height: usize, width: usize, filter: Filter) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    if (h, w) == (height, width) {
        return Ok(x.clone());
    }
    let dev: &Device = x.device();
    let rows = Tensor::from_vec(interpolation_matrix(h, height, filter), (height, h), dev)?
        .to_dtype(x.dtype())?;
    let cols = Tensor::from_vec(interpolation_matrix(w, width, filter), (width, w), dev)?
        .to_dtype(x.dtype())?
        .t()?;
    let flat = x.reshape((b * c, h, w))?;
    let y = rows.broadcast_matmul(&flat)?.broadcast_matmul(&cols)?;
    Ok(y.reshape((b, c, height, width))?)
}

/// The generator's `↑₂`: bilinear 2× enlargement.
pub fn upsample2x(x: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    resize_tensor(x, 2 * h, 2 * w, Filter::Bilinear)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::ColorSpace;

    fn pattern(h: usize, w: usize) -> ImageTensor {
        ImageTensor::from_fn(3, h, w, ColorSpace::Rgb, |c, y, x| {
            (((c + 1) * (y * 3 + x * 7)) % 17) as f32 / 16.0
        })
    }

    #[test]
    fn same_size_is_identity() {
        let img = pattern(9, 12);
        assert_eq!(resize_bicubic(&img, 9, 12).unwrap(), img);
        let taps = cubic_taps(12, 12);
        for (j, t) in taps.iter().enumerate() {
            for (k, w) in t.weights.iter().enumerate() {
                let expect = if t.start + k == j { 1.0 } else { 0.0 };
                assert!((w - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn weights_sum_to_one() {
        for (i, o) in [(512, 8), (8, 512), (100, 33), (33, 100)] {
            for t in cubic_taps(i, o) {
                assert!((t.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            for row in interpolation_matrix(i, o, Filter::Area).chunks(i) {
                assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn upsample_doubles_and_preserves_constants() {
        let x = Tensor::full(0.25f32, (2, 3, 4, 5), &Device::Cpu).unwrap();
        let y = upsample2x(&x).unwrap();
        assert_eq!(y.dims(), &[2, 3, 8, 10]);
        let v = y.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert!(v.iter().all(|a| (a - 0.25).abs() < 1e-6));
    }

    #[test]
    fn matrix_resize_matches_direct_bilinear() {
        let img = pattern(4, 6);
        let t = img.to_tensor(&Device::Cpu).unwrap();
        let up = resize_tensor(&t, 8, 12, Filter::Bilinear).unwrap();
        let up = ImageTensor::from_tensor(&up, ColorSpace::Rgb).unwrap();
        // direct half-pixel bilinear at one interior sample
        let (y, x) = (3usize, 5usize);
        let sy = (y as f64 + 0.5) * 0.5 - 0.5;
        let sx = (x as f64 + 0.5) * 0.5 - 0.5;
        let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
        let (ty, tx) = (sy - y0 as f64, sx - x0 as f64);
        let g = |yy: usize, xx: usize| img.get(1, yy, xx) as f64;
        let expect = (1.0 - ty) * ((1.0 - tx) * g(y0, x0) + tx * g(y0, x0 + 1))
            + ty * ((1.0 - tx) * g(y0 + 1, x0) + tx * g(y0 + 1, x0 + 1));
        assert!((up.get(1, y, x) as f64 - expect).abs() < 1e-6);
    }
}
