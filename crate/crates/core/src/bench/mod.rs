//! Heat-equation benchmarks, error metrics and the training/testing protocol.

pub mod experiment;
pub mod heat1d;
pub mod heat2d;
pub mod metrics;

pub use experiment::{run_experiment, ExperimentConfig};
pub use heat1d::{build_heat1d_fom, Heat1dSpec};
pub use heat2d::{build_heat2d_fom, Heat2dFom, Heat2dSpec};
pub use metrics::{relative_errors, weak_errors, ErrorReport, Metric};
