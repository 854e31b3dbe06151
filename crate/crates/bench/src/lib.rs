//! Workload synthesis and the benchmark harness.
//!
//! A suite is a directory of standalone `.tvm` programs. A [`SuiteSpec`]
//! orders them and gives each an iteration count; [`synth`] tunes those
//! counts so method invocation frequencies follow a power law, and
//! [`harness`] times every variant under each execution mode.

pub mod error;
pub mod harness;
pub mod stats;
pub mod suite;
pub mod synth;

pub use error::{BenchError, SynthError, SuiteError};
pub use harness::{bench, compare, BenchConfig, BenchResult, Cell, ComparisonReport};
pub use suite::{SuiteEntry, SuiteSpec};
pub use synth::{
    fit_loglog, least_squares, make_variants, profile_suite, tune_iterations, FitPoint,
    FitReport, MethodProfile, RegressionFit, TuneOutcome,
};
