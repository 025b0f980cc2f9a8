//! Estimation and testing of the number of latent components in panel-data
//! finite mixture models.
//!
//! The crate covers constrained maximum likelihood by EM, likelihood-ratio
//! tests with parametric-bootstrap or simulated asymptotic critical values,
//! sequential testing, AIC/BIC, a nonparametric rank test for a lower bound on
//! the number of components, and simulation drivers for Monte Carlo studies.

pub mod asymptotic;
pub mod error;
pub mod estimation;
pub mod model;
pub mod numeric;
pub mod rank;
pub mod rng;
pub mod selection;
pub mod sim;

pub use error::{Error, Result};
pub use model::{
    ComponentParams, ConstraintSet, Dynamics, ErrorFamily, MixtureParams, ModelSpec, PanelDataset,
};

/// Library version embedded in serialized outputs.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
