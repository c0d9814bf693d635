//! Configuration, checkpoints, experiment recipes and the command-line
//! dispatcher.
pub mod checkpoint;
pub mod config;
pub mod dispatch;
pub mod recipes;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Stage, CHECKPOINT_VERSION};
pub use config::{EditorConfig, ModelConfig, RunConfig, Schedule, SweepConfig, CONFIG_SCHEMA_VERSION};
pub use dispatch::{dispatch, Manifest, OUTPUT_DIR_ENV};
pub use recipes::SweepAxis;
