use candle_core::Tensor;

use crate::error::{Error, Result};
use crate::generator::GeneratorSpec;
use crate::image::Task;
use crate::nn::{global_avg_pool, leaky_relu, sigmoid, Conv2d, Linear, ParamStore};

/// Multi-scale features, index 0 finest. The last level is the generator's
/// starting input.
#[derive(Debug, Clone)]
pub struct FeaturePyramid {
    levels: Vec<Tensor>,
}

impl FeaturePyramid {
    pub fn new(levels: Vec<Tensor>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::config("feature pyramid needs at least one level"));
        }
        for pair in levels.windows(2) {
            let (_, _, h0, w0) = pair[0].dims4()?;
            let (_, _, h1, w1) = pair[1].dims4()?;
            if (h0, w0) != (2 * h1, 2 * w1) {
                return Err(Error::shape(format!(
                    "pyramid levels {h0}x{w0} and {h1}x{w1} are not a factor of two apart"
                )));
            }
        }
        Ok(Self { levels })
    }

    /// Number of levels, `l + 1`.
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn level(&self, j: usize) -> &Tensor {
        &self.levels[j]
    }

    pub fn coarsest(&self) -> &Tensor {
        self.levels.last().expect("non-empty")
    }

    pub fn levels(&self) -> &[Tensor] {
        &self.levels
    }
}

/// Plain CNN: a full-resolution stem, then stride-2 blocks. A small head
/// predicts the strength factor from the pooled coarsest features, except
/// for super-resolution where the downscale factor is the strength.
#[derive(Debug, Clone)]
pub struct Encoder {
    task: Task,
    stem: Conv2d,
    blocks: Vec<(Conv2d, Conv2d)>,
    strength_head: Option<(Linear, Linear)>,
}

impl Encoder {
    pub fn new(store: &mut ParamStore, spec: &GeneratorSpec) -> Result<Self> {
        let k = spec.kernel_size;
        let w = &spec.widths;
        let stem = Conv2d::new(store, "encoder.stem", spec.task.input_channels(), w[0], k, 1)?;
        let blocks = (1..=spec.levels)
            .map(|j| {
                Ok((
                    Conv2d::new(store, &format!("encoder.down{j}"), w[j - 1], w[j], k, 2)?,
                    Conv2d::new(store, &format!("encoder.conv{j}"), w[j], w[j], k, 1)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            task: spec.task,
            stem,
            blocks,
            strength_head: if spec.task == Task::SuperResolution {
                None
            } else {
                Some((
                    Linear::new(store, "encoder.strength.hidden", w[spec.levels], spec.strength_hidden, 0.0)?,
                    Linear::new(store, "encoder.strength.out", spec.strength_hidden, 1, 0.0)?,
                ))
            },
        })
    }

    /// `B×C_in×H×W` → pyramid and predicted strength `B×1` in `(0, 1)`,
    /// `None` when the task supplies its own.
    pub fn forward(&self, x: &Tensor) -> Result<(FeaturePyramid, Option<Tensor>)> {
        let (_, c, _, _) = x.dims4()?;
        if c != self.task.input_channels() {
            return Err(Error::TaskShape {
                task: self.task,
                msg: format!(
                    "degraded input has {c} channels, expected {}",
                    self.task.input_channels()
                ),
            });
        }
        let mut feats = vec![leaky_relu(&self.stem.forward(x)?)?];
        for (down, conv) in &self.blocks {
            let h = leaky_relu(&down.forward(feats.last().expect("stem"))?)?;
            feats.push(leaky_relu(&conv.forward(&h)?)?);
        }
        let s = match &self.strength_head {
            Some((hidden, out)) => {
                let pooled = global_avg_pool(feats.last().expect("stem"))?;
                Some(sigmoid(&out.forward(&leaky_relu(&hidden.forward(&pooled)?)?)?)?)
            }
            None => None,
        };
        Ok((FeaturePyramid::new(feats)?, s))
    }
}
