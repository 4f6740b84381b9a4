//! Experiment orchestration: presets, multi-seed runs, pairwise aggregation,
//! prefix-truncated curves, checkpoint tracking, and report emission.

mod config;
mod curves;
mod report;
mod run;

pub use config::{
    method_loss, preset, ComparisonMode, ExperimentConfig, ExperimentFile, GeneratorParams, PRESET_NAMES,
};
pub use curves::{default_prefix_grid, prefix_curve, prefix_curves, track_over_checkpoints, CurvePoint, CurveRow, Track};
pub use report::{load_bundle, report_csv, table_text, write_bundle, write_run_dirs};
pub use run::{dictionary_sha256, evaluate_against_truth, evaluate_pair, make_dataset, run_experiment, summarize, Aggregate, Dataset, ReportBundle, RunArtifacts, SeedStatus, TrackRow};
