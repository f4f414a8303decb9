//! Experiment harness: configs, checkpoints, training/evaluation loops,
//! grid search and report generation.

mod checkpoint;
mod config;
mod grid;
mod report;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader, LoadedCheckpoint};
pub use config::{config_digest, DataSource, ExperimentConfig, CONFIG_SCHEMA};
pub use grid::{enumerate_cells, run_grid, GridOutcome, LeaderboardEntry, SearchAxis, SearchSpace};
pub use report::{render_table, write_overlay_grid, write_report};
pub use train::{evaluate_volumes, load_dataset, train, train_until, EpochEval, RunRecord, TrainOutcome};
