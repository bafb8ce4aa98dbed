//! Benchmark harness for the contingency planner: random maps, a
//! four-variant runner, CSV metrics and SVG trajectory plots.

pub mod config;
pub mod envgen;
pub mod metrics;
pub mod runner;
pub mod svg;

pub use config::BenchConfig;
pub use envgen::{dead_end_fixture, generate_env, EnvGenParams};
pub use metrics::{emit_csv, parse_csv, read_csv, write_csv, MetricsRecord};
pub use runner::{run_benchmark, BenchmarkOutput, EpisodeOutcome};
pub use svg::{emit_svg, render_svg};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("environment generation failed: {0}")]
    Generation(String),
    #[error(transparent)]
    Planner(#[from] cmppi::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
