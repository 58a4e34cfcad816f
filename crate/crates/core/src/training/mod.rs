//! Alternating discriminator/generator training with image-embedding
//! conditions.

mod adam;
mod batch;
mod config;
mod dataset;
mod trainer;

pub use adam::Adam;
pub use batch::{make_batch, Batch};
pub use config::{DiscriminatorConfig, ExtractorChoice, LrSchedule, ProviderChoice, TrainConfig};
pub use dataset::{load_square, Dataset, DatasetEntry, MANIFEST};
pub use trainer::{
    latest_checkpoint, prune_checkpoints, BatchForward, GeneratorObjective, StepMetrics, Trainer,
};
