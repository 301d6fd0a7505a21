//! Experiment harness: named desk-scale transport problems, builtin
//! samplers, machine-readable reports, and the glue between the solver,
//! the oracles and the duality diagnostics.

// Indexed loops are the idiom for the dense kernels here.
#![allow(clippy::needless_range_loop)]

pub mod compare;
pub mod config;
pub mod csvio;
pub mod experiments;
pub mod report;
pub mod samplers;
pub mod synth;

pub use config::{load_config, RawConfig, ResolvedConfig};
pub use experiments::{run_experiment, ExperimentKind, FailureKind, RunFailure};
pub use report::{ExperimentReport, Metrics};

/// Caps worker-thread counts (`--jobs`); library code itself is
/// deterministic and sequential.
pub const THREADS_ENV: &str = "MONGE_FORGE_THREADS";

/// Effective parallelism for `jobs` requested runs.
pub fn effective_jobs(jobs: usize) -> usize {
    let cap = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&v| v >= 1);
    match cap {
        Some(c) => jobs.min(c),
        None => jobs,
    }
}
