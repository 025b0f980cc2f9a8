//! Data-generating processes and Monte Carlo experiment drivers.

mod designs;
mod dgp;
mod experiment;

pub use designs::Design;
pub use dgp::{simulate_like, simulate_panel, simulate_panel_with_labels, CovariateLaw, DgpSpec};
pub use experiment::{
    histogram, replication_seed, run_selection_frequency_experiment, run_size_power, run_size_power_experiment,
    selection_method_labels, ExperimentKind, ExperimentReport, FitFamily, ReportRow, SelectionMethods,
    SizePowerConfig, MIN_REPLICATIONS,
};
