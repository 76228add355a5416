//! Reproducible end-to-end experiments behind the CLI: scenario files wire
//! the modules together, runners fan trials out over seeded workers, and
//! every figure-style output (profiles, CDFs, trajectories) is produced
//! solely from the module APIs.

mod runner;
mod scenario;

pub use runner::{run, ExperimentKind, ExperimentSpec, RunReport};
pub use scenario::{CalibrationRecord, Scenario};
