//! The multimodal model: assembly, parameter groups, losses, checkpoints.

mod checkpoint;
mod config;
mod multimodal;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointEntry, MAGIC, VERSION};
pub use config::ModelConfig;
pub use multimodal::{MultimodalModel, ParamCounts, Source, TextDecoder};
pub use crate::params::Group;
