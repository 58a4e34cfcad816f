//! CIE Lab ↔ sRGB under the D65 white point.
//!
//! Scalar conversions work in `f64`. [`lab_to_rgb_tensor`] is the same
//! inverse transform expressed in tensor ops so colorization losses can be
//! taken on the reassembled RGB image.

use std::sync::OnceLock;

use candle_core::Tensor;

use crate::error::{Error, Result};
use crate::image::{ColorSpace, ImageTensor};

/// D65 reference white, `Y` normalized to 1.
pub const WHITE_D65: [f64; 3] = [0.95047, 1.0, 1.08883];

/// Linear sRGB → XYZ.
pub const SRGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];

/// Scale applied to the a and b planes before they are fed to or taken from the network.
pub const CHROMA_SCALE: f64 = 128.0;

const DELTA: f64 = 6.0 / 29.0;

fn xyz_to_srgb() -> &'static [[f64; 3]; 3] {
    static INV: OnceLock<[[f64; 3]; 3]> = OnceLock::new();
    INV.get_or_init(|| invert3(&SRGB_TO_XYZ))
}

fn invert3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let mut inv = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            // cofactor of (c, r), transposed
            let (r0, r1) = ((c + 1) % 3, (c + 2) % 3);
            let (c0, c1) = ((r + 1) % 3, (r + 2) % 3);
            inv[r][c] = (m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0]) / det;
        }
    }
    inv
}

#[inline]
fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

#[inline]
fn linear_to_srgb(c: f64) -> f64 {
    if c <= 0.0031308 {
        12.92 * c
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

#[inline]
fn lab_f(t: f64) -> f64 {
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

#[inline]
fn lab_f_inv(t: f64) -> f64 {
    if t > DELTA {
        t * t * t
    } else {
        3.0 * DELTA * DELTA * (t - 4.0 / 29.0)
    }
}

/// sRGB in `[0, 1]` → `(L, a, b)`.
pub fn rgb_to_lab_pixel(rgb: [f64; 3]) -> [f64; 3] {
    let lin = rgb.map(srgb_to_linear);
    let mut xyz = [0.0; 3];
    for (i, row) in SRGB_TO_XYZ.iter().enumerate() {
        xyz[i] = (row[0] * lin[0] + row[1] * lin[1] + row[2] * lin[2]) / WHITE_D65[i];
    }
    let [fx, fy, fz] = xyz.map(lab_f);
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// `(L, a, b)` → sRGB, clamped to `[0, 1]`.
pub fn lab_to_rgb_pixel(lab: [f64; 3]) -> [f64; 3] {
    let fy = (lab[0] + 16.0) / 116.0;
    let f = [fy + lab[1] / 500.0, fy, fy - lab[2] / 200.0];
    let mut xyz = [0.0; 3];
    for i in 0..3 {
        xyz[i] = lab_f_inv(f[i]) * WHITE_D65[i];
    }
    let m = xyz_to_srgb();
    let mut out = [0.0; 3];
    for (i, row) in m.iter().enumerate() {
        let lin = row[0] * xyz[0] + row[1] * xyz[1] + row[2] * xyz[2];
        out[i] = linear_to_srgb(lin).clamp(0.0, 1.0);
    }
    out
}

/// RGB image → 3-plane Lab image in natural units.
pub fn rgb_to_lab(rgb: &ImageTensor) -> Result<ImageTensor> {
    expect_planes(rgb, 3, "rgb_to_lab")?;
    let (_, h, w) = rgb.dims();
    let mut out = ImageTensor::zeros(3, h, w, ColorSpace::Lab);
    for y in 0..h {
        for x in 0..w {
            let px = [0, 1, 2].map(|c| rgb.get(c, y, x) as f64);
            let lab = rgb_to_lab_pixel(px);
            for (c, v) in lab.into_iter().enumerate() {
                out.set(c, y, x, v as f32);
            }
        }
    }
    Ok(out)
}

/// Splits RGB into the L plane (`[0, 100]`) and the ab planes scaled by 1/128.
pub fn split_lightness_chroma(rgb: &ImageTensor) -> Result<(ImageTensor, ImageTensor)> {
    let lab = rgb_to_lab(rgb)?;
    let l = lab.select_channels(0, 1, ColorSpace::LabLightness)?;
    let ab = lab
        .select_channels(1, 2, ColorSpace::LabChroma)?
        .map(|v| (v as f64 / CHROMA_SCALE) as f32);
    Ok((l, ab))
}

/// Reassembles RGB from an L plane and scaled ab planes; the result is clamped to `[0, 1]`.
pub fn lab_to_rgb(lightness: &ImageTensor, chroma: &ImageTensor) -> Result<ImageTensor> {
    expect_planes(lightness, 1, "lab_to_rgb lightness")?;
    expect_planes(chroma, 2, "lab_to_rgb chroma")?;
    let (_, h, w) = lightness.dims();
    if (chroma.height(), chroma.width()) != (h, w) {
        return Err(Error::shape(format!(
            "L plane is {h}x{w} but ab planes are {}x{}",
            chroma.height(),
            chroma.width()
        )));
    }
    let mut out = ImageTensor::zeros(3, h, w, ColorSpace::Rgb);
    for y in 0..h {
        for x in 0..w {
            let lab = [
                lightness.get(0, y, x) as f64,
                chroma.get(0, y, x) as f64 * CHROMA_SCALE,
                chroma.get(1, y, x) as f64 * CHROMA_SCALE,
            ];
            for (c, v) in lab_to_rgb_pixel(lab).into_iter().enumerate() {
                out.set(c, y, x, v as f32);
            }
        }
    }
    Ok(out)
}

fn expect_planes(img: &ImageTensor, planes: usize, what: &str) -> Result<()> {
    if img.channels() != planes {
        return Err(Error::shape(format!(
            "{what}: expected {planes} planes, got {}",
            img.channels()
        )));
    }
    Ok(())
}

/// Differentiable Lab → sRGB for batches.
///
/// `lightness` is `B×1×H×W` in `[0, 100]`, `chroma` is `B×2×H×W` scaled by
/// 1/128. Output is `B×3×H×W`, clamped to `[0, 1]`.
pub fn lab_to_rgb_tensor(lightness: &Tensor, chroma: &Tensor) -> Result<Tensor> {
    let dtype = lightness.dtype();
    let fy = lightness.affine(1.0 / 116.0, 16.0 / 116.0)?;
    let a = chroma.narrow(1, 0, 1)?.affine(CHROMA_SCALE / 500.0, 0.0)?;
    let b = chroma.narrow(1, 1, 1)?.affine(CHROMA_SCALE / 200.0, 0.0)?;
    let fx = (&fy + a)?;
    let fz = (&fy - b)?;

    let finv = |t: &Tensor| -> Result<Tensor> {
        let cube = (t.sqr()? * t)?;
        let linear = t.affine(3.0 * DELTA * DELTA, -3.0 * DELTA * DELTA * 4.0 / 29.0)?;
        let mask = t.gt(DELTA)?;
        Ok(mask.where_cond(&cube, &linear)?)
    };
    let xyz = [
        finv(&fx)?.affine(WHITE_D65[0], 0.0)?,
        finv(&fy)?.affine(WHITE_D65[1], 0.0)?,
        finv(&fz)?.affine(WHITE_D65[2], 0.0)?,
    ];
    let m = xyz_to_srgb();
    let mut planes = Vec::with_capacity(3);
    for row in m {
        let lin = ((xyz[0].affine(row[0], 0.0)? + xyz[1].affine(row[1], 0.0)?)?
            + xyz[2].affine(row[2], 0.0)?)?;
        let lin = lin.clamp(0.0, 1.0)?;
        // keep the pow branch away from 0 so its derivative stays finite
        let curved = lin
            .maximum(0.0031308)?
            .powf(1.0 / 2.4)?
            .affine(1.055, -0.055)?;
        let straight = lin.affine(12.92, 0.0)?;
        let mask = lin.le(0.0031308)?;
        planes.push(mask.where_cond(&straight, &curved)?);
    }
    Ok(Tensor::cat(&planes, 1)?.clamp(0.0, 1.0)?.to_dtype(dtype)?)
}
