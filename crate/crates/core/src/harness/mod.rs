//! Experiment orchestration: configuration, training loops, the test
//! protocol, metric aggregation, agent checkpoints and the CLI.

mod checkpoint;
mod cli;
mod config;
mod eval;
mod train;

use std::fmt;

use thiserror::Error;

use crate::agents::AgentError;
use crate::neural::NeuralError;

pub use checkpoint::{load_agent, read_agent, save_agent, write_agent, AgentCheckpoint};
pub use cli::{cli, OUT_ROOT_ENV};
pub use config::{ConfigError, EnvKind, ExperimentConfig};
pub use eval::{
    random_baseline, run_fight_test, run_pellet_test, run_seed, run_test, TestEnv, TestSpec,
};
pub use train::{checkpoint_name, run_training, TrainingOutcome, FINAL_CHECKPOINT, METRICS_FILE};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error("I/O: {0}")]
    Io(String),
    #[error("no metrics to aggregate")]
    EmptyInput,
}

impl From<NeuralError> for HarnessError {
    fn from(e: NeuralError) -> Self {
        match e {
            NeuralError::Io(io) if io.kind() == std::io::ErrorKind::UnexpectedEof => {
                HarnessError::Format("truncated network data".into())
            }
            NeuralError::Io(io) => HarnessError::Io(io.to_string()),
            other => HarnessError::Format(other.to_string()),
        }
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;

pub const METRICS_HEADER: &str = "phase,train_fraction,seed,run,mean_mass,max_mass";

/// Performance of one test episode.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub phase: String,
    pub train_fraction: f64,
    pub seed: u64,
    pub run: usize,
    pub mean_mass: f64,
    pub max_mass: f64,
}

impl fmt::Display for MetricsRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},{},{}",
            self.phase, self.train_fraction, self.seed, self.run, self.mean_mass, self.max_mass
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean_mass: f64,
    pub mean_mass_stderr: f64,
    pub max_mass: f64,
    pub max_mass_stderr: f64,
    pub seeds: usize,
}

/// Averages runs within each seed, then reports the cross-seed mean and
/// standard error (sample standard deviation over `sqrt(seeds)`) of both
/// the mean and the maximum mass. `per_seed` holds one slice of runs per
/// seed.
pub fn aggregate(per_seed: &[Vec<MetricsRow>]) -> Result<Summary> {
    if per_seed.is_empty() || per_seed.iter().any(Vec::is_empty) {
        return Err(HarnessError::EmptyInput);
    }
    let seed_means = |f: fn(&MetricsRow) -> f64| -> Vec<f64> {
        per_seed
            .iter()
            .map(|runs| runs.iter().map(f).sum::<f64>() / runs.len() as f64)
            .collect()
    };
    let (mean_mass, mean_mass_stderr) = mean_and_stderr(&seed_means(|r| r.mean_mass));
    let (max_mass, max_mass_stderr) = mean_and_stderr(&seed_means(|r| r.max_mass));
    Ok(Summary {
        mean_mass,
        mean_mass_stderr,
        max_mass,
        max_mass_stderr,
        seeds: per_seed.len(),
    })
}

fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Renders rows as a CSV document with header.
pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_string());
        out.push('\n');
    }
    out
}
