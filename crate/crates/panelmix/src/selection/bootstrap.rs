use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::lrt::likelihood_ratio;
use crate::error::{Error, Result};
use crate::estimation::{
    fit_mle_nested, fit_starts, jitter_start, largest_component, one_component_fit, quantile_start, split_component,
    EmConfig, FitResult,
};
use crate::model::{ModelSpec, PanelDataset};
use crate::numeric::empirical_quantile;
use crate::rng::{derive_seed, rng_for, stream};
use crate::sim::simulate_like;

/// Restart budget of each refit inside a bootstrap replicate.
pub const BOOTSTRAP_RESTARTS: usize = 3;
/// Largest tolerated share of failed bootstrap refits.
pub const MAX_FAILURE_SHARE: f64 = 0.2;
/// Replicates are evaluated in fixed-size batches so early stopping does not
/// depend on the thread count.
const BATCH: usize = 16;

/// Outcome of a parametric bootstrap test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub observed: f64,
    /// `(1 + #{LR*_b ≥ LR}) / (B_used + 1)`.
    pub p: f64,
    /// Empirical 95% quantile of the bootstrap statistics.
    pub crit_05: f64,
    /// Statistics of the replicates whose refits succeeded, in replicate order.
    pub boot_stats: Vec<f64>,
    pub b: usize,
    /// Replicates whose refits errored; they are left out of `boot_stats`.
    pub failures: usize,
    /// Replicates kept in `boot_stats` although a refit hit the iteration cap.
    pub nonconverged: usize,
    /// Set when replicates were skipped because the decision at `stop_above` was already fixed.
    pub truncated: bool,
}

impl BootstrapResult {
    /// Upper `level` quantile of the bootstrap statistics.
    pub fn critical_value(&self, level: f64) -> f64 {
        if self.boot_stats.is_empty() {
            return f64::NAN;
        }
        empirical_quantile(&self.boot_stats, 1.0 - level)
    }
}

/// One bootstrap replicate's statistic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplicateOutcome {
    pub stat: f64,
    pub converged: bool,
}

/// Seed of replicate `b` under master seed `seed`.
pub fn bootstrap_replicate_seed(seed: u64, b: usize) -> u64 {
    derive_seed(seed, stream::BOOTSTRAP, b as u64)
}

/// Refit M and M+1 components on a bootstrap sample drawn from `fit_m`.
///
/// The M-fit starts from the generating parameters, the quantile spread and
/// one jitter; the (M+1)-fit from a split of each component of that M-fit,
/// the quantile spread and one jitter, with the nestedness guard.
pub fn replicate_statistic(
    data_b: &PanelDataset,
    fit_m: &FitResult,
    spec: &ModelSpec,
    cfg: &EmConfig,
    rep_seed: u64,
) -> Result<ReplicateOutcome> {
    let m = fit_m.m();
    let one = one_component_fit(data_b, spec)?;
    let sigma0 = one.sigma();
    let cfg_b = EmConfig { seed: rep_seed, n_restarts: BOOTSTRAP_RESTARTS, ..*cfg };
    let mut rng = rng_for(rep_seed, stream::RESTART, 0);

    let q0 = quantile_start(data_b, m, spec, &one);
    let j0 = jitter_start(&q0, sigma0, &mut rng);
    let f0 = fit_starts(data_b, spec, &cfg_b, &[fit_m.params.clone(), q0, j0], sigma0, None, None)?;

    let mut starts: Vec<_> = (0..m)
        .map(|h| split_component(&f0.params, h, 0.5 * f0.params.components[h].sigma()))
        .collect();
    let q1 = quantile_start(data_b, m + 1, spec, &one);
    starts.push(jitter_start(&q1, sigma0, &mut rng));
    starts.push(q1);
    let guard = (&f0, largest_component(&f0.params));
    let f1 = fit_starts(data_b, spec, &cfg_b, &starts, sigma0, None, Some(guard))?;
    Ok(ReplicateOutcome { stat: 2.0 * (f1.loglik - f0.loglik), converged: f0.converged && f1.converged })
}

/// Simulate replicate `b` from `fit_m` (same shape and covariates as `data`)
/// and compute its statistic.
pub fn bootstrap_replicate(
    data: &PanelDataset,
    fit_m: &FitResult,
    spec: &ModelSpec,
    cfg: &EmConfig,
    seed: u64,
    b: usize,
) -> Result<ReplicateOutcome> {
    let rep_seed = bootstrap_replicate_seed(seed, b);
    let data_b = simulate_like(&fit_m.params, spec, data, rep_seed)?;
    replicate_statistic(&data_b, fit_m, spec, cfg, rep_seed)
}

/// Bootstrap p-value of an observed statistic against replicates drawn from
/// `fit_m`. With `stop_above = Some(q)`, replicates stop once `p > q` is
/// certain; the reported p-value is then a lower bound that still exceeds `q`.
pub fn bootstrap_test(
    data: &PanelDataset,
    fit_m: &FitResult,
    observed: f64,
    spec: &ModelSpec,
    b: usize,
    cfg: &EmConfig,
    seed: u64,
    stop_above: Option<f64>,
) -> Result<BootstrapResult> {
    if b == 0 {
        return Err(Error::InvalidParams("at least one bootstrap replicate is required".into()));
    }
    if !fit_m.converged {
        return Err(Error::NonConvergence { best_loglik: fit_m.loglik });
    }
    let max_failures = (MAX_FAILURE_SHARE * b as f64).floor() as usize;
    let mut stats = Vec::with_capacity(b);
    let mut failures = 0usize;
    let mut nonconverged = 0usize;
    let mut exceed = 0usize;
    let mut truncated = false;
    let mut next = 0usize;
    while next < b {
        let end = (next + BATCH).min(b);
        let outcomes: Vec<Result<ReplicateOutcome>> = (next..end)
            .into_par_iter()
            .map(|r| bootstrap_replicate(data, fit_m, spec, cfg, seed, r))
            .collect();
        for o in outcomes {
            match o {
                Ok(o) if o.stat.is_finite() => {
                    nonconverged += usize::from(!o.converged);
                    if o.stat >= observed {
                        exceed += 1;
                    }
                    stats.push(o.stat);
                }
                _ => failures += 1,
            }
        }
        if failures + nonconverged > max_failures {
            return Err(Error::OptimizationFailure(format!(
                "{failures} of {b} bootstrap refits failed and {nonconverged} did not converge"
            )));
        }
        next = end;
        if let Some(q) = stop_above {
            // Even if every remaining replicate fell below, p would exceed q.
            if next < b && (1 + exceed) as f64 / (b - failures + 1) as f64 > q {
                truncated = true;
                break;
            }
        }
    }
    let p = (1 + exceed) as f64 / (stats.len() + 1) as f64;
    let crit_05 = if stats.is_empty() { f64::NAN } else { empirical_quantile(&stats, 0.95) };
    Ok(BootstrapResult { observed, p, crit_05, boot_stats: stats, b, failures, nonconverged, truncated })
}

/// Fit the (M+1)-component alternative on `data`, form the likelihood ratio
/// against `fit_m`, and compute its parametric bootstrap p-value from `b`
/// replicates.
pub fn parametric_bootstrap_pvalue(
    data: &PanelDataset,
    fit_m: &FitResult,
    spec: &ModelSpec,
    b: usize,
    cfg: &EmConfig,
    seed: u64,
) -> Result<BootstrapResult> {
    if !fit_m.converged {
        return Err(Error::NonConvergence { best_loglik: fit_m.loglik });
    }
    let alt = fit_mle_nested(data, fit_m.m() + 1, spec, cfg, Some(fit_m))?;
    let (observed, _) = likelihood_ratio(data, spec, cfg, fit_m, &alt)?;
    bootstrap_test(data, fit_m, observed, spec, b, cfg, seed, None)
}
