//! Experiment orchestration: configuration with topology presets, named RNG
//! streams, the episodic training/testing loops, metric emission and the
//! pieces the CLI is built from.
//!
//! Reproducibility contract: a run is a deterministic function of its
//! resolved [`ExperimentConfig`], including the master seed. Every consumer
//! of randomness (UD placement, shadowing, fading, per-agent exploration,
//! replay sampling, net init, and the test-environment mirrors of these)
//! draws from its own named stream derived from the master seed, so changing
//! one consumer never perturbs the others.

mod config;
mod metrics;
mod rng;
mod runner;

pub use config::{AgentSettings, AlgorithmId, ApSpec, ExperimentConfig, TierWidths};
pub use metrics::{emit_metrics, render_metrics_csv, write_manifest, EpisodeMetrics};
pub use rng::Streams;
pub use runner::{run_baseline, run_eval, run_training, EvalSummary, TrainingRun};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Topology(#[from] crate::channel::TopologyError),
    #[error(transparent)]
    Env(#[from] crate::env::EnvError),
    #[error(transparent)]
    Wmmse(#[from] crate::baselines::WmmseError),
    #[error(transparent)]
    Checkpoint(#[from] crate::nn::CheckpointError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),
}

/// Map a discrete action index onto the AP's evenly spaced power grid
/// `[0, p_max / (a_c - 1), ..., p_max]`.
pub fn action_to_power(action: usize, p_max: f64, a_c: usize) -> f64 {
    assert!(a_c >= 2, "need at least two power levels");
    assert!(action < a_c, "action {action} out of range for {a_c} levels");
    action as f64 * p_max / (a_c - 1) as f64
}

/// dBm to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}
