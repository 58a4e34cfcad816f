//! The restoration network: encoder, style-modulated generator and
//! strength-controlled feature fusion.

mod encoder;
mod fusion;
mod spec;
mod style_conv;
mod synthesis;

pub use encoder::{Encoder, FeaturePyramid};
pub use fusion::{
    normalize_pair, strength_to_weights, FusionSite, FusionWeights, StrengthFactor, StrengthMlp, StrengthMode,
    FUSION_EPS,
};
pub use spec::GeneratorSpec;
pub use style_conv::{style_conv, StyleConv, DEMOD_EPS};
pub use synthesis::StyleGenerator;
