use serde::{Deserialize, Serialize};

use super::spec::ModelSpec;
use crate::error::{Error, Result};

/// Initial-period block of a Markov AR(1) component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialBlock {
    pub rho: f64,
    /// Initial-period inner means, one per inner cell.
    pub mu1: Vec<f64>,
    pub sigma2_1: f64,
    pub beta1: Vec<f64>,
}

/// Parameters of one latent component.
///
/// Normal errors use `tau = [1.0]` and a single mean. Transition periods of a
/// dynamic component have mean `mu_k + rho*y_{t-1} + x_t'beta - rho*x_{t-1}'beta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentParams {
    pub tau: Vec<f64>,
    pub mu: Vec<f64>,
    pub sigma2: f64,
    pub beta: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ar1: Option<InitialBlock>,
}

impl ComponentParams {
    pub fn normal(mu: f64, sigma2: f64, beta: Vec<f64>) -> Self {
        ComponentParams { tau: vec![1.0], mu: vec![mu], sigma2, beta, ar1: None }
    }

    pub fn mixture(tau: Vec<f64>, mu: Vec<f64>, sigma2: f64, beta: Vec<f64>) -> Self {
        ComponentParams { tau, mu, sigma2, beta, ar1: None }
    }

    pub fn with_ar1(mut self, rho: f64, mu1: Vec<f64>, sigma2_1: f64, beta1: Vec<f64>) -> Self {
        self.ar1 = Some(InitialBlock { rho, mu1, sigma2_1, beta1 });
        self
    }

    pub fn k(&self) -> usize {
        self.mu.len()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }

    /// Ordering key across components: the tau-weighted mean of the inner means.
    pub fn location(&self) -> f64 {
        if self.mu.len() == 1 {
            self.mu[0]
        } else {
            self.tau.iter().zip(&self.mu).map(|(t, m)| t * m).sum()
        }
    }

    pub fn rho(&self) -> f64 {
        self.ar1.as_ref().map_or(0.0, |b| b.rho)
    }

    /// Shift every inner mean (and initial-period mean) by `d`.
    pub fn shift_location(&mut self, d: f64) {
        for m in &mut self.mu {
            *m += d;
        }
        if let Some(b) = &mut self.ar1 {
            for m in &mut b.mu1 {
                *m += d;
            }
        }
    }

    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        let k = spec.k();
        if self.mu.len() != k || self.tau.len() != k {
            return Err(Error::Dimension(format!(
                "component has {} means and {} weights, expected K={k}",
                self.mu.len(),
                self.tau.len()
            )));
        }
        if self.beta.len() != spec.q_x {
            return Err(Error::Dimension(format!(
                "beta has length {}, expected {}",
                self.beta.len(),
                spec.q_x
            )));
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::InvalidParams(format!("sigma2 must be positive, got {}", self.sigma2)));
        }
        if self.mu.iter().chain(&self.beta).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("non-finite mean or slope".into()));
        }
        if k > 1 {
            if self.tau.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
                return Err(Error::InvalidParams("tau entries must lie in (0,1)".into()));
            }
            let s: f64 = self.tau.iter().sum();
            if (s - 1.0).abs() > 1e-8 {
                return Err(Error::InvalidParams(format!("tau sums to {s}")));
            }
        } else if self.tau[0] != 1.0 {
            return Err(Error::InvalidParams("single-cell component must have tau = [1]".into()));
        }
        match (&self.ar1, spec.is_dynamic()) {
            (Some(b), true) => {
                if b.mu1.len() != k || b.beta1.len() != spec.q_x {
                    return Err(Error::Dimension("initial-period block has wrong length".into()));
                }
                if !(b.sigma2_1 > 0.0 && b.sigma2_1.is_finite()) {
                    return Err(Error::InvalidParams(format!(
                        "sigma2_1 must be positive, got {}",
                        b.sigma2_1
                    )));
                }
                if !b.rho.is_finite() || b.mu1.iter().chain(&b.beta1).any(|v| !v.is_finite()) {
                    return Err(Error::InvalidParams("non-finite initial-period parameter".into()));
                }
            }
            (None, false) => {}
            (None, true) => {
                return Err(Error::InvalidParams("dynamic model needs an initial-period block".into()))
            }
            (Some(_), false) => {
                return Err(Error::InvalidParams("static model has an initial-period block".into()))
            }
        }
        Ok(())
    }
}

/// Mixing proportions and component parameters of an M-component model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    pub alpha: Vec<f64>,
    pub components: Vec<ComponentParams>,
}

impl MixtureParams {
    pub fn new(alpha: Vec<f64>, components: Vec<ComponentParams>) -> Self {
        MixtureParams { alpha, components }
    }

    pub fn single(component: ComponentParams) -> Self {
        MixtureParams { alpha: vec![1.0], components: vec![component] }
    }

    pub fn m(&self) -> usize {
        self.alpha.len()
    }

    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        if self.alpha.is_empty() || self.alpha.len() != self.components.len() {
            return Err(Error::Dimension(format!(
                "{} mixing proportions for {} components",
                self.alpha.len(),
                self.components.len()
            )));
        }
        if self.m() > 1 && self.alpha.iter().any(|&a| !(a > 0.0 && a < 1.0)) {
            return Err(Error::InvalidParams("alpha entries must lie in (0,1)".into()));
        }
        let s: f64 = self.alpha.iter().sum();
        if (s - 1.0).abs() > 1e-8 {
            return Err(Error::InvalidParams(format!("alpha sums to {s}")));
        }
        for (j, c) in self.components.iter().enumerate() {
            c.validate(spec).map_err(|e| e.context(format!("component {}", j + 1)))?;
        }
        Ok(())
    }
}

/// How the component variance floor is computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceFloor {
    /// sigma_j >= sigma_floor_mult * sigma0_hat.
    OneComponentSd,
    /// sigma_j^2 >= c2 * sum_k alpha_k sigma_k^2.
    RelativeToMixture { c2: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub c1: f64,
    pub tau_floor: f64,
    pub sigma_floor_mult: f64,
    pub mu_bounds: Option<(f64, f64)>,
    pub variance_floor: VarianceFloor,
}

impl Default for ConstraintSet {
    fn default() -> Self {
        ConstraintSet {
            c1: 0.05,
            tau_floor: 0.05,
            sigma_floor_mult: 0.05,
            mu_bounds: None,
            variance_floor: VarianceFloor::OneComponentSd,
        }
    }
}

impl ConstraintSet {
    pub fn validate(&self) -> Result<()> {
        if !(self.c1 > 0.0 && self.c1 < 0.5) {
            return Err(Error::InvalidParams(format!("c1 must lie in (0, 0.5), got {}", self.c1)));
        }
        if !(self.tau_floor > 0.0 && self.tau_floor < 0.5) {
            return Err(Error::InvalidParams(format!(
                "tau_floor must lie in (0, 0.5), got {}",
                self.tau_floor
            )));
        }
        if !(self.sigma_floor_mult > 0.0) {
            return Err(Error::InvalidParams("sigma_floor_mult must be positive".into()));
        }
        if let Some((lo, hi)) = self.mu_bounds {
            if !(lo < hi) {
                return Err(Error::InvalidParams(format!("empty mu bounds [{lo}, {hi}]")));
            }
        }
        if let VarianceFloor::RelativeToMixture { c2 } = self.variance_floor {
            if !(c2 > 0.0 && c2 < 1.0) {
                return Err(Error::InvalidParams(format!("c2 must lie in (0,1), got {c2}")));
            }
        }
        Ok(())
    }
}
