//! Configuration and file formats.

mod binary;
pub mod config;
mod dataset;
mod manifest;
mod model_file;
mod tables;
mod vtk;

pub use binary::{Checkpoint, TrajectoryHeader, TrajectoryReader, TrajectoryWriter};
pub use config::{ExportHistory, FlowConfig, LevelConfig, Mode, NetworkConfig, OutputConfig, RunConfig, TrainingConfig, WarmStart};
pub use dataset::{read_dataset, read_stats, shard_path, stats_path, ComponentStats, DatasetLayout, DatasetStats, DatasetWriter};
pub use manifest::{content_hash, file_hash, InputRecord, Manifest};
pub use model_file::{load_model, read_model, save_model, write_model, ModelMeta};
pub use tables::{read_functionals, write_errors, write_functionals, write_spectrum};
pub use vtk::{read_vtk, save_vtk, write_vtk, VtkPointData};
