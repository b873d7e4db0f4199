//! Experiment orchestration: config files, seeded runs, metrics CSV,
//! smoothing and comparison statistics, SVG learning curves.

mod config;
mod experiment;
mod metrics;
mod plot;
mod stats;

pub use config::{EnvSection, ExperimentConfig, LearningSection, Stage};
pub use experiment::{run_experiment, run_stage, Artifact, StageOutput};
pub use metrics::{load_metrics, read_metrics, save_metrics, write_metrics, MetricsRow, METRICS_HEADER};
pub use plot::{emit_plot, render_plot, VIEW_HEIGHT, VIEW_WIDTH};
pub use stats::{episodes_to_threshold, median, moving_average};

/// Outcome of one training or evaluation episode.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpisodeRecord {
    pub return_total: f64,
    pub collisions: usize,
    pub steps: usize,
    pub epsilon: f64,
}
