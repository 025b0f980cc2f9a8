use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::FitResult;
use crate::model::ModelSpec;

/// Statistics for one candidate number of components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateStats {
    pub m: usize,
    pub loglik: f64,
    pub k: usize,
    pub aic: f64,
    pub bic: f64,
    /// `2(ℓ_{M+1} - ℓ_M)` when the next model was fitted.
    pub lrt_stat: Option<f64>,
    pub p_value: Option<f64>,
    pub critical_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub per_m: Vec<CandidateStats>,
    /// Selected number of components keyed by method (`aic`, `bic`, `lrt`).
    pub chosen: BTreeMap<String, usize>,
    pub q_n: Option<f64>,
    pub b: Option<usize>,
}

/// Number of free parameters of the M-component model.
pub fn count_parameters(m: usize, spec: &ModelSpec) -> usize {
    spec.param_count(m)
}

/// `k/2 · log n`.
pub fn bic_penalty(k: usize, n: usize) -> f64 {
    0.5 * k as f64 * (n as f64).ln()
}

/// Index of the largest value, lowest index on ties.
fn argmax_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// AIC (`ℓ - k`) and BIC (`ℓ - k/2 log n`) for fits with M = 1, 2, …,
/// choosing the maximizer of each (smaller M on ties).
pub fn information_criteria(fits: &[FitResult], n: usize, spec: &ModelSpec) -> Result<SelectionResult> {
    if fits.is_empty() {
        return Err(Error::InvalidParams("no fits to compare".into()));
    }
    let mut per_m = Vec::with_capacity(fits.len());
    for (idx, f) in fits.iter().enumerate() {
        if f.m() != idx + 1 {
            return Err(Error::InvalidParams(format!("fit {} has {} components", idx + 1, f.m())));
        }
        let k = count_parameters(f.m(), spec);
        per_m.push(CandidateStats {
            m: f.m(),
            loglik: f.loglik,
            k,
            aic: f.loglik - k as f64,
            bic: f.loglik - bic_penalty(k, n),
            lrt_stat: fits.get(idx + 1).map(|g| 2.0 * (g.loglik - f.loglik)),
            p_value: None,
            critical_value: None,
        });
    }
    let aic: Vec<f64> = per_m.iter().map(|c| c.aic).collect();
    let bic: Vec<f64> = per_m.iter().map(|c| c.bic).collect();
    let mut chosen = BTreeMap::new();
    chosen.insert("aic".to_string(), argmax_first(&aic) + 1);
    chosen.insert("bic".to_string(), argmax_first(&bic) + 1);
    Ok(SelectionResult { per_m, chosen, q_n: None, b: None })
}
