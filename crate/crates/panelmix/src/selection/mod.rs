//! Choosing the number of components: likelihood ratio tests with
//! parametric bootstrap or simulated limiting critical values, sequential
//! testing, and penalized likelihood.

mod bootstrap;
mod criteria;
mod lrt;
mod sequential;

pub use bootstrap::{
    bootstrap_replicate, bootstrap_replicate_seed, bootstrap_test, parametric_bootstrap_pvalue, replicate_statistic,
    BootstrapResult, ReplicateOutcome, BOOTSTRAP_RESTARTS, MAX_FAILURE_SHARE,
};
pub use criteria::{bic_penalty, count_parameters, information_criteria, CandidateStats, SelectionResult};
pub use lrt::{likelihood_ratio, lrt_statistic, refit_alternative, NEGATIVE_TOLERANCE};
pub use sequential::{lrt_key, sequential_select, sequential_select_levels, CritSource, SequentialConfig};
