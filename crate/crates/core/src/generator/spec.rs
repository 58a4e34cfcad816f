use serde::{Deserialize, Serialize};

use crate::conditioning::DEFAULT_EMBEDDING_DIM;
use crate::error::{Error, Result};
use crate::image::Task;

/// Level/channel layout of the encoder–generator pair.
///
/// `widths[j]` is the channel count of encoder level `fʲ` (`j = 0` finest,
/// `j = levels` coarsest). Generator level `i` fuses with `f^{levels-i}`, so
/// `chan(i) = widths[levels - i]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub task: Task,
    pub resolution: usize,
    pub levels: usize,
    pub widths: Vec<usize>,
    pub kernel_size: usize,
    pub strength_hidden: usize,
    pub embedding_dim: usize,
}

impl GeneratorSpec {
    /// Four levels, widths 64 → 512, at the task's native resolution.
    pub fn standard(task: Task) -> Self {
        let levels = 4;
        Self {
            task,
            resolution: task.default_resolution(),
            levels,
            widths: (0..=levels).map(|j| (64 << j).min(512)).collect(),
            kernel_size: 3,
            strength_hidden: 64,
            embedding_dim: DEFAULT_EMBEDDING_DIM,
        }
    }

    /// Two levels of width 8; for tests and smoke runs.
    pub fn tiny(task: Task, resolution: usize) -> Self {
        Self {
            task,
            resolution,
            levels: 2,
            widths: vec![8; 3],
            kernel_size: 3,
            strength_hidden: 16,
            embedding_dim: DEFAULT_EMBEDDING_DIM,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() != self.levels + 1 {
            return Err(Error::config(format!(
                "{} widths for {} levels (need {})",
                self.widths.len(),
                self.levels,
                self.levels + 1
            )));
        }
        if self.widths.contains(&0) {
            return Err(Error::config("channel widths must be positive"));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::config("kernel size must be odd"));
        }
        if self.embedding_dim == 0 || self.strength_hidden == 0 {
            return Err(Error::config("embedding_dim and strength_hidden must be positive"));
        }
        let step = 1usize << self.levels;
        if self.resolution == 0 || self.resolution % step != 0 {
            return Err(Error::config(format!(
                "resolution {} is not divisible by 2^{}",
                self.resolution, self.levels
            )));
        }
        Ok(())
    }

    /// Channel width at generator level `i`.
    pub fn chan(&self, i: usize) -> usize {
        self.widths[self.levels - i]
    }

    /// Spatial side of encoder level `j`.
    pub fn level_side(&self, j: usize) -> usize {
        self.resolution >> j
    }

    /// Style vector lengths in code order: `w⁰`, then `wⁱ₁, wⁱ₂` per level.
    /// Each equals the input width of the StyleConv it modulates.
    pub fn style_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.chan(0)];
        for i in 1..=self.levels {
            dims.push(self.chan(i - 1));
            dims.push(self.chan(i));
        }
        dims
    }

    /// Channel widths of the fusion sites, level 0 first.
    pub fn fusion_channels(&self) -> Vec<usize> {
        (0..=self.levels).map(|i| self.chan(i)).collect()
    }

    pub fn describe(&self) -> String {
        format!(
            "{} {}px levels={} widths={:?} k={} hidden={} dim={}",
            self.task,
            self.resolution,
            self.levels,
            self.widths,
            self.kernel_size,
            self.strength_hidden,
            self.embedding_dim
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn style_code_count() {
        for levels in 1..6 {
            let spec = GeneratorSpec {
                levels,
                widths: vec![4; levels + 1],
                resolution: 64,
                ..GeneratorSpec::tiny(Task::Inpaint, 64)
            };
            assert_eq!(spec.style_dims().len(), 2 * levels + 1);
        }
    }

    #[test]
    fn standard_layout() {
        let spec = GeneratorSpec::standard(Task::Inpaint);
        spec.validate().unwrap();
        assert_eq!(spec.widths, vec![64, 128, 256, 512, 512]);
        assert_eq!((0..=4).map(|j| spec.level_side(j)).collect::<Vec<_>>(), vec![256, 128, 64, 32, 16]);
        assert_eq!(spec.fusion_channels(), vec![512, 512, 256, 128, 64]);
    }

    #[test]
    fn rejects_bad_layouts() {
        let mut spec = GeneratorSpec::tiny(Task::Colorize, 30);
        assert!(spec.validate().is_err());
        spec.resolution = 32;
        spec.validate().unwrap();
        spec.widths.pop();
        assert!(spec.validate().is_err());
    }
}
