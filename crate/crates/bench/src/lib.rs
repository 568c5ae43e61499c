//! Closed-loop tracking benchmark on a wind-disturbed 3-D point mass:
//! reference generation, data collection, five estimation methods and
//! receding-horizon evaluation.

pub mod baselines;
pub mod config;
pub mod data;
pub mod error;
pub mod mpc;
pub mod reference;
pub mod report;
pub mod run;

pub use config::{BenchConfig, Method};
pub use error::{BenchError, Result};
pub use run::{run_bench, BenchOutcome, MetricsRow};
