//! Text-conditioned image restoration.
//!
//! A degraded image is encoded into a feature pyramid; a style-modulated
//! generator grows it back to full resolution while a condition embedding,
//! mapped to per-layer style codes, steers what gets filled in. Encoder and
//! generator features are blended at every level with channel-wise weights
//! derived from a strength factor.

pub mod checkpoint;
pub mod clip;
pub mod color;
pub mod conditioning;
pub mod degradations;
pub mod error;
pub mod features;
pub mod generator;
#[cfg(doctest)]
mod guide;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod resample;
pub mod training;

pub use crate::conditioning::{ConditionEmbedding, EmbeddingProvider, EmbeddingSource, StubProvider};
pub use crate::error::{Error, Result};
pub use crate::generator::GeneratorSpec;
pub use crate::image::{ColorSpace, ImageTensor, Task};
pub use crate::model::{Restoration, TextIr};
