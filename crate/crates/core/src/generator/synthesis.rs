use candle_core::Tensor;

use crate::conditioning::StyleCode;
use crate::error::{Error, Result};
use crate::generator::encoder::FeaturePyramid;
use crate::generator::fusion::{FusionSite, FusionWeights};
use crate::generator::style_conv::StyleConv;
use crate::generator::GeneratorSpec;
use crate::image::Task;
use crate::nn::{leaky_relu, Conv2d, ParamStore};
use crate::resample::upsample2x;

/// The style-based generator. It starts from the coarsest encoder feature
/// (no learned constant, no noise), doubles resolution once per level and
/// fuses with the matching encoder level after every step.
#[derive(Debug, Clone)]
pub struct StyleGenerator {
    task: Task,
    levels: usize,
    base: StyleConv,
    ups: Vec<(StyleConv, StyleConv)>,
    fusion: Vec<FusionSite>,
    to_image: Conv2d,
}

impl StyleGenerator {
    pub fn new(store: &mut ParamStore, spec: &GeneratorSpec) -> Result<Self> {
        let k = spec.kernel_size;
        let l = spec.levels;
        let base = StyleConv::new(store, "generator.level0", spec.chan(0), spec.chan(0), k)?;
        let ups = (1..=l)
            .map(|i| {
                Ok((
                    StyleConv::new(store, &format!("generator.level{i}.conv1"), spec.chan(i - 1), spec.chan(i), k)?,
                    StyleConv::new(store, &format!("generator.level{i}.conv2"), spec.chan(i), spec.chan(i), k)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let fusion = (0..=l)
            .map(|i| FusionSite::new(store, i, spec.chan(i)))
            .collect::<Result<Vec<_>>>()?;
        let to_image = Conv2d::new(store, "generator.to_image", spec.chan(l), spec.task.output_channels(), 1, 1)?;
        Ok(Self {
            task: spec.task,
            levels: l,
            base,
            ups,
            fusion,
            to_image,
        })
    }

    /// Every StyleConv, coarse to fine, in style-code order.
    pub fn style_convs(&self) -> Vec<&StyleConv> {
        let mut out = vec![&self.base];
        for (a, b) in &self.ups {
            out.push(a);
            out.push(b);
        }
        out
    }

    /// Fused features `x⁰…xˡ` and the final output.
    pub fn forward_with_features(
        &self,
        pyramid: &FeaturePyramid,
        codes: &StyleCode,
        weights: &FusionWeights,
    ) -> Result<(Vec<Tensor>, Tensor)> {
        let l = self.levels;
        if pyramid.len() != l + 1 {
            return Err(Error::config(format!(
                "pyramid has {} levels, generator needs {}",
                pyramid.len(),
                l + 1
            )));
        }
        if codes.len() != 2 * l + 1 {
            return Err(Error::config(format!(
                "{} style vectors, generator needs {}",
                codes.len(),
                2 * l + 1
            )));
        }
        if weights.levels() != l + 1 {
            return Err(Error::config(format!(
                "{} fusion weight pairs, generator needs {}",
                weights.levels(),
                l + 1
            )));
        }
        let mut xs = Vec::with_capacity(l + 1);
        let f = pyramid.level(l);
        let g = leaky_relu(&self.base.forward(f, codes.base())?)?;
        let (a1, a2) = weights.raw(0);
        xs.push(self.fusion[0].forward(f, &g, (a1, a2))?);
        for i in 1..=l {
            let (conv1, conv2) = &self.ups[i - 1];
            let (w1, w2) = codes.level(i);
            let up = upsample2x(&xs[i - 1])?;
            let g = leaky_relu(&conv1.forward(&up, w1)?)?;
            let g = leaky_relu(&conv2.forward(&g, w2)?)?;
            let (a1, a2) = weights.raw(i);
            xs.push(self.fusion[i].forward(pyramid.level(l - i), &g, (a1, a2))?);
        }
        let t = self.to_image.forward(xs.last().expect("level 0"))?.tanh()?;
        let out = match self.task {
            Task::Colorize => t,
            _ => t.affine(0.5, 0.5)?,
        };
        Ok((xs, out))
    }

    /// RGB in `[0, 1]`, or scaled ab in `[-1, 1]` for colorization.
    pub fn forward(&self, pyramid: &FeaturePyramid, codes: &StyleCode, weights: &FusionWeights) -> Result<Tensor> {
        Ok(self.forward_with_features(pyramid, codes, weights)?.1)
    }
}
