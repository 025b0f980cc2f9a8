use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Within-component error distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorFamily {
    Normal,
    /// K-part normal mixture sharing one variance; K is treated as known.
    NormalMixture { k: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dynamics {
    ConditionallyIndependent,
    /// First-order Markov process with an explicitly modeled initial period.
    MarkovAr1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub error_family: ErrorFamily,
    pub dynamics: Dynamics,
    pub q_x: usize,
}

impl ModelSpec {
    pub fn new(error_family: ErrorFamily, dynamics: Dynamics, q_x: usize) -> Result<Self> {
        let spec = ModelSpec { error_family, dynamics, q_x };
        spec.validate()?;
        Ok(spec)
    }

    pub fn normal() -> Self {
        ModelSpec {
            error_family: ErrorFamily::Normal,
            dynamics: Dynamics::ConditionallyIndependent,
            q_x: 0,
        }
    }

    pub fn mixture(k: usize) -> Self {
        ModelSpec {
            error_family: ErrorFamily::NormalMixture { k },
            dynamics: Dynamics::ConditionallyIndependent,
            q_x: 0,
        }
    }

    pub fn with_ar1(mut self) -> Self {
        self.dynamics = Dynamics::MarkovAr1;
        self
    }

    pub fn with_covariates(mut self, q_x: usize) -> Self {
        self.q_x = q_x;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if let ErrorFamily::NormalMixture { k } = self.error_family {
            if k < 2 {
                return Err(Error::InvalidParams(format!("normal mixture needs K >= 2, got {k}")));
            }
        }
        Ok(())
    }

    /// Number of inner normal cells (1 for normal errors).
    pub fn k(&self) -> usize {
        match self.error_family {
            ErrorFamily::Normal => 1,
            ErrorFamily::NormalMixture { k } => k,
        }
    }

    pub fn is_dynamic(&self) -> bool {
        self.dynamics == Dynamics::MarkovAr1
    }

    pub fn has_covariates(&self) -> bool {
        self.q_x > 0
    }

    /// Free parameters of one component.
    pub fn component_dim(&self) -> usize {
        let k = self.k();
        let stat = (k - 1) + k + 1 + self.q_x;
        if self.is_dynamic() {
            stat + 1 + k + 1 + self.q_x
        } else {
            stat
        }
    }

    /// Free parameters of an M-component model.
    pub fn param_count(&self, m: usize) -> usize {
        (m - 1) + m * self.component_dim()
    }
}
