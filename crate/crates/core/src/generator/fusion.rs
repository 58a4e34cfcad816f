//! Strength factor → channel-wise fusion weights, and the weighted sum of
//! encoder and generator features at each level.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::GeneratorSpec;
use crate::nn::{leaky_relu, Conv2d, Linear, ParamStore};

/// Added under the square root when normalizing a weight pair.
pub const FUSION_EPS: f64 = 1e-8;

/// Largest SR downscale factor; `log2(64) = 6` maps to strength 1.
const MAX_LOG2_FACTOR: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrengthMode {
    ExplicitScale,
    EncoderPredicted,
}

/// Normalized strength in `[0, 1]` and where it came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrengthFactor {
    pub value: f64,
    pub mode: StrengthMode,
}

impl StrengthFactor {
    /// From an SR downscale factor: `log2(factor) / 6`.
    pub fn from_sr_factor(factor: u32) -> Result<Self> {
        if factor == 0 {
            return Err(Error::validation("downscale factor must be positive"));
        }
        let value = (factor as f64).log2() / MAX_LOG2_FACTOR;
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::validation(format!(
                "downscale factor {factor} is outside 1..=64"
            )));
        }
        Ok(Self {
            value,
            mode: StrengthMode::ExplicitScale,
        })
    }

    pub fn explicit(value: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::validation(format!("strength {value} outside [0, 1]")));
        }
        Ok(Self {
            value,
            mode: StrengthMode::ExplicitScale,
        })
    }
}

/// Raw per-level weight pairs `(α₁ⁱ, α₂ⁱ)`, each `B×chan(i)`, level 0 first.
#[derive(Debug, Clone)]
pub struct FusionWeights {
    pairs: Vec<(Tensor, Tensor)>,
}

impl FusionWeights {
    pub fn new(pairs: Vec<(Tensor, Tensor)>) -> Self {
        Self { pairs }
    }

    pub fn levels(&self) -> usize {
        self.pairs.len()
    }

    /// Number of weight vectors, two per level.
    pub fn vector_count(&self) -> usize {
        2 * self.pairs.len()
    }

    pub fn raw(&self, level: usize) -> &(Tensor, Tensor) {
        &self.pairs[level]
    }

    pub fn normalized(&self, level: usize) -> Result<(Tensor, Tensor)> {
        let (a1, a2) = &self.pairs[level];
        normalize_pair(a1, a2)
    }
}

/// `(|α₁|, |α₂|) / sqrt(α₁² + α₂² + ε)`, channel-wise.
pub fn normalize_pair(a1: &Tensor, a2: &Tensor) -> Result<(Tensor, Tensor)> {
    let denom = (a1.sqr()? + a2.sqr()?)?.affine(1.0, FUSION_EPS)?.sqrt()?;
    Ok((a1.abs()?.div(&denom)?, a2.abs()?.div(&denom)?))
}

/// Two-layer MLP from the scalar strength to every level's raw weight pair.
#[derive(Debug, Clone)]
pub struct StrengthMlp {
    hidden: Linear,
    out: Linear,
    channels: Vec<usize>,
}

impl StrengthMlp {
    /// The output bias starts at 1 so fresh networks blend both paths equally.
    pub fn new(store: &mut ParamStore, spec: &GeneratorSpec) -> Result<Self> {
        let channels = spec.fusion_channels();
        let total = 2 * channels.iter().sum::<usize>();
        Ok(Self {
            hidden: Linear::new(store, "strength.hidden", 1, spec.strength_hidden, 0.0)?,
            out: Linear::new(store, "strength.out", spec.strength_hidden, total, 1.0)?,
            channels,
        })
    }

    /// `s`: `B×1` in `[0, 1]`.
    pub fn forward(&self, s: &Tensor) -> Result<FusionWeights> {
        let (_, one) = s.dims2()?;
        if one != 1 {
            return Err(Error::shape(format!("strength must be B×1, got B×{one}")));
        }
        let flat = self.out.forward(&leaky_relu(&self.hidden.forward(s)?)?)?;
        let mut offset = 0;
        let mut pairs = Vec::with_capacity(self.channels.len());
        for &c in &self.channels {
            let a1 = flat.narrow(1, offset, c)?;
            let a2 = flat.narrow(1, offset + c, c)?;
            offset += 2 * c;
            pairs.push((a1, a2));
        }
        Ok(FusionWeights::new(pairs))
    }
}

/// Raw fusion weights for a single strength value.
pub fn strength_to_weights(s: StrengthFactor, mlp: &StrengthMlp, device: &candle_core::Device) -> Result<FusionWeights> {
    if !(0.0..=1.0).contains(&s.value) {
        return Err(Error::validation(format!("strength {} outside [0, 1]", s.value)));
    }
    mlp.forward(&Tensor::new(&[[s.value as f32]], device)?)
}

/// The per-level 1×1 adjustment conv and weighted sum.
#[derive(Debug, Clone)]
pub struct FusionSite {
    level: usize,
    adjust: Conv2d,
}

impl FusionSite {
    pub fn new(store: &mut ParamStore, level: usize, channels: usize) -> Result<Self> {
        Ok(Self {
            level,
            adjust: Conv2d::new(store, &format!("generator.fuse{level}"), channels, channels, 1, 1)?,
        })
    }

    /// `α_enc·Conv(f) + α_gen·g`.
    pub fn forward(&self, f_enc: &Tensor, g_gen: &Tensor, alpha: (&Tensor, &Tensor)) -> Result<Tensor> {
        let (fb, fc, fh, fw) = f_enc.dims4()?;
        let (gb, gc, gh, gw) = g_gen.dims4()?;
        if (fb, fc, fh, fw) != (gb, gc, gh, gw) {
            return Err(Error::LevelShape {
                level: self.level,
                msg: format!("encoder feature {fb}x{fc}x{fh}x{fw} vs generator feature {gb}x{gc}x{gh}x{gw}"),
            });
        }
        let (a1, a2) = alpha;
        if a1.dims() != [fb, fc] || a2.dims() != [fb, fc] {
            return Err(Error::LevelShape {
                level: self.level,
                msg: format!("weights {:?}/{:?} for {fc} channels", a1.dims(), a2.dims()),
            });
        }
        let (enc, gen) = normalize_pair(a1, a2)?;
        let enc = enc.reshape((fb, fc, 1, 1))?;
        let gen = gen.reshape((fb, fc, 1, 1))?;
        Ok((self.adjust.forward(f_enc)?.broadcast_mul(&enc)? + g_gen.broadcast_mul(&gen)?)?)
    }
}
