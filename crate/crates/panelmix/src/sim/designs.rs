use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::dgp::DgpSpec;
use crate::error::{Error, Result};
use crate::model::{ComponentParams, MixtureParams, ModelSpec};

/// Built-in Monte Carlo designs, plus a user-supplied DGP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "design")]
pub enum Design {
    /// Two components, `α = 0.5`, `μ = (-1, 1)`, `σ = (0.8, 1.2)`, `n = 400`, `T = 3`.
    Table1,
    /// Three equal components, `μ = (-1.5, 0, 1.5)`, `σ = 1`, `n = 400`, `T = 3`.
    Table2,
    /// Three normal components estimated from plant-level material shares, `n = 225`, `T = 3`.
    #[serde(rename = "tableA1_normal")]
    TableA1Normal,
    /// Three components with two-part normal-mixture errors, `n = 225`, `T = 3`.
    #[serde(rename = "tableA2_mixture")]
    TableA2Mixture,
    /// Two AR(1) components with an explicit initial period, `n = 225`, `T = 5`.
    #[serde(rename = "tableA3_ar1")]
    TableA3Ar1,
    Custom { label: String, dgp: DgpSpec },
}

impl Design {
    pub const BUILTIN: [&'static str; 5] = ["table1", "table2", "tableA1_normal", "tableA2_mixture", "tableA3_ar1"];

    pub fn label(&self) -> &str {
        match self {
            Design::Table1 => "table1",
            Design::Table2 => "table2",
            Design::TableA1Normal => "tableA1_normal",
            Design::TableA2Mixture => "tableA2_mixture",
            Design::TableA3Ar1 => "tableA3_ar1",
            Design::Custom { label, .. } => label,
        }
    }

    /// The data-generating process at its default sample size.
    pub fn dgp(&self) -> DgpSpec {
        match self {
            Design::Table1 => DgpSpec::new(
                MixtureParams::new(
                    vec![0.5, 0.5],
                    vec![ComponentParams::normal(-1.0, 0.64, vec![]), ComponentParams::normal(1.0, 1.44, vec![])],
                ),
                ModelSpec::normal(),
                400,
                3,
            ),
            Design::Table2 => DgpSpec::new(
                MixtureParams::new(
                    vec![1.0 / 3.0; 3],
                    [-1.5, 0.0, 1.5].iter().map(|&m| ComponentParams::normal(m, 1.0, vec![])).collect(),
                ),
                ModelSpec::normal(),
                400,
                3,
            ),
            Design::TableA1Normal => {
                let sd = [0.464, 0.187, 0.195];
                let comps = [-1.01, -0.557, -0.242]
                    .iter()
                    .zip(sd)
                    .map(|(&m, s)| ComponentParams::normal(m, s * s, vec![]))
                    .collect();
                DgpSpec::new(MixtureParams::new(normalized(&[0.352, 0.402, 0.245]), comps), ModelSpec::normal(), 225, 3)
            }
            Design::TableA2Mixture => {
                let tau = [[0.818, 0.182], [0.621, 0.379], [0.105, 0.895]];
                let mu = [[-1.099, -1.04], [-0.249, -0.232], [-0.992, -0.539]];
                let sd = [0.465, 0.197, 0.178];
                let comps = (0..3)
                    .map(|j| ComponentParams::mixture(tau[j].to_vec(), mu[j].to_vec(), sd[j] * sd[j], vec![]))
                    .collect();
                DgpSpec::new(MixtureParams::new(normalized(&[0.275, 0.247, 0.478]), comps), ModelSpec::mixture(2), 225, 3)
            }
            Design::TableA3Ar1 => {
                // μ is the long-run mean of the transition; the intercept is (1 - ρ) μ.
                let (mu, rho, sd) = ([-0.883, -0.419], [0.472, 0.579], [0.465, 0.208]);
                let (mu0, sd0) = ([-0.991, -0.499], [0.476, 0.269]);
                let comps = (0..2)
                    .map(|j| {
                        ComponentParams::normal((1.0 - rho[j]) * mu[j], sd[j] * sd[j], vec![]).with_ar1(
                            rho[j],
                            vec![mu0[j]],
                            sd0[j] * sd0[j],
                            vec![],
                        )
                    })
                    .collect();
                DgpSpec::new(MixtureParams::new(vec![0.359, 0.641], comps), ModelSpec::normal().with_ar1(), 225, 5)
            }
            Design::Custom { dgp, .. } => dgp.clone(),
        }
    }

    /// Number of components of the generating process.
    pub fn true_m(&self) -> usize {
        self.dgp().params.m()
    }
}

fn normalized(w: &[f64]) -> Vec<f64> {
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

impl fmt::Display for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Design {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table1" => Ok(Design::Table1),
            "table2" => Ok(Design::Table2),
            "tableA1_normal" => Ok(Design::TableA1Normal),
            "tableA2_mixture" => Ok(Design::TableA2Mixture),
            "tableA3_ar1" => Ok(Design::TableA3Ar1),
            other => Err(Error::InvalidParams(format!(
                "unknown design {other:?}; expected one of {}",
                Design::BUILTIN.join(", ")
            ))),
        }
    }
}
