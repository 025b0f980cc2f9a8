//! Constrained maximum likelihood by EM with multi-start initialization,
//! split-restricted local fits and sandwich standard errors.

mod em;
mod mstep;
mod posteriors;
mod sandwich;

pub use em::{
    fit_local_mle, fit_mle, fit_mle_nested, fit_sequence, jitter_start, largest_component, one_component_fit,
    quantile_start, run_em, split_component, EmConfig, EmRun, FitResult,
};
pub(crate) use em::fit_starts;
pub use mstep::{m_step, DEGENERATE_MASS};
pub use posteriors::{e_step, Posteriors};
pub use sandwich::{free_parameter_names, from_free_vec, sandwich_se, to_free_vec, unit_gradients, StandardErrors};
