//! Synthetic problems, the Monte-Carlo benchmark harness and helpers shared
//! with the `cpd` binary.

pub mod cli;
pub mod error;
pub mod harness;
pub mod synth;

pub use error::{BenchError, Result};
pub use harness::{run_benchmark, BenchConfig, BenchOutcome, Experiment, Method, MethodSpec, RunRecord};
