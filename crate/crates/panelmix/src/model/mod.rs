//! Model specifications, parameter containers, constraints and densities.

mod constraints;
mod data;
mod density;
pub(crate) mod derivatives;
mod params;
mod spec;

pub use constraints::{canonicalize, enforce_constraints};
pub(crate) use constraints::{canonicalize_in_place, enforce_in_place, Cells};
pub use data::{PanelDataset, Unit};
pub use density::{component_log_density, log_likelihood, mixture_log_density};
pub(crate) use density::{dot, log_likelihood_unchecked, Prepared};
pub use params::{ComponentParams, ConstraintSet, InitialBlock, MixtureParams, VarianceFloor};
pub use spec::{Dynamics, ErrorFamily, ModelSpec};
