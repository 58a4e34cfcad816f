//! Style-modulated convolution.
//!
//! The kernel is scaled per input channel by the style vector, then each
//! output filter is divided by its L2 norm (plus [`DEMOD_EPS`]). For
//! independent unit-variance inputs this keeps the output variance near 1
//! regardless of the style's magnitude.

use candle_core::Tensor;

use crate::error::{Error, Result};
use crate::nn::{Init, ParamStore};

pub const DEMOD_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct StyleConv {
    weight: Tensor,
    bias: Tensor,
    padding: usize,
}

impl StyleConv {
    pub fn new(store: &mut ParamStore, name: &str, inputs: usize, outputs: usize, kernel: usize) -> Result<Self> {
        let weight = store.var(
            &format!("{name}.weight"),
            &[outputs, inputs, kernel, kernel],
            Init::Normal { std: 1.0 },
        )?;
        let bias = store.var(&format!("{name}.bias"), &[outputs], Init::Const(0.0))?;
        Ok(Self::from_parts(weight, bias))
    }

    /// Wraps an existing `out×in×k×k` kernel and `out` bias.
    pub fn from_parts(weight: Tensor, bias: Tensor) -> Self {
        let padding = weight.dims()[2] / 2;
        Self { weight, bias, padding }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }

    /// Per-sample kernels `B×out×in×k×k` after modulation and demodulation.
    pub fn modulated_weights(&self, style: &Tensor) -> Result<Tensor> {
        let (b, s) = style.dims2()?;
        if s != self.in_channels() {
            return Err(Error::shape(format!(
                "style vector has {s} entries but the layer has {} input channels",
                self.in_channels()
            )));
        }
        let w = self
            .weight
            .unsqueeze(0)?
            .broadcast_mul(&style.reshape((b, 1, s, 1, 1))?)?;
        let demod = w
            .sqr()?
            .sum_keepdim(4)?
            .sum_keepdim(3)?
            .sum_keepdim(2)?
            .affine(1.0, DEMOD_EPS)?
            .sqrt()?
            .recip()?;
        Ok(w.broadcast_mul(&demod)?)
    }

    /// `x`: `B×in×H×W`, `style`: `B×in` → `B×out×H×W`.
    pub fn forward(&self, x: &Tensor, style: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = x.dims4()?;
        if c != self.in_channels() {
            return Err(Error::shape(format!(
                "input has {c} channels but the layer expects {}",
                self.in_channels()
            )));
        }
        if style.dim(0)? != b {
            return Err(Error::shape(format!(
                "{} style vectors for a batch of {b}",
                style.dim(0)?
            )));
        }
        let weights = self.modulated_weights(style)?;
        let out = self.out_channels();
        let k = self.weight.dims()[2];
        // one group per sample
        let kernel = weights.reshape((b * out, c, k, k))?;
        let y = x
            .reshape((1, b * c, h, w))?
            .conv2d(&kernel, self.padding, 1, 1, b)?
            .reshape((b, out, h, w))?;
        Ok(y.broadcast_add(&self.bias.reshape((1, out, 1, 1))?)?)
    }
}

/// One modulated convolution with an explicit layer.
pub fn style_conv(x: &Tensor, w_style: &Tensor, layer: &StyleConv) -> Result<Tensor> {
    layer.forward(x, w_style)
}
