//! Dataset I/O, configuration and the staged pipeline driver around
//! `carvemap-core`.

pub mod config;
pub mod io;
pub mod parallel;
pub mod pipeline;
pub mod synth;

pub use config::{ConfigError, Overrides, PipelineConfig};
pub use pipeline::{Pipeline, PipelineError, Stage, StageRun};
