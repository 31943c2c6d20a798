//! Experiment runner: TOML configs, the preset catalog, result files and
//! the acceptance checks.

mod catalog;
pub mod checks;
mod config;
mod run;

pub use catalog::{info, list_presets, PresetInfo};
pub use config::{ExperimentConfig, ModelOptions, ScanGrid};
pub use run::{execute, render_csv, run, DerivedScalar, PresetRun, RunManifest};
