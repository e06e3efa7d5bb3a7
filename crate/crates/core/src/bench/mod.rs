//! Experiment harness: run configs, domains, metrics tables and the
//! `run`, `theory`, `markov` and `ablate` commands.

pub mod commands;
pub mod config;
pub mod domain;
pub mod metrics;

pub use commands::{cmd_ablate, cmd_markov, cmd_run, cmd_theory, RunOptions};
pub use config::{AblationGrid, Hyper, Preset, RunConfig};
