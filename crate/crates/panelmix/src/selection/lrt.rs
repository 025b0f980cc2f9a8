use crate::error::{Error, Result};
use crate::estimation::{fit_starts, largest_component, split_component, EmConfig, FitResult};
use crate::model::{ModelSpec, PanelDataset};

/// Statistics below this are treated as optimization failures rather than noise.
pub const NEGATIVE_TOLERANCE: f64 = -1e-6;

/// `2(ℓ_{M+1} - ℓ_M)`.
///
/// Errors when the fits are not one component apart or the statistic is
/// negative beyond [`NEGATIVE_TOLERANCE`]; see [`likelihood_ratio`] for the
/// version that refits before giving up.
pub fn lrt_statistic(fit_m: &FitResult, fit_m1: &FitResult) -> Result<f64> {
    if fit_m1.m() != fit_m.m() + 1 {
        return Err(Error::InvalidParams(format!(
            "alternative has {} components, null has {}",
            fit_m1.m(),
            fit_m.m()
        )));
    }
    let stat = 2.0 * (fit_m1.loglik - fit_m.loglik);
    if !stat.is_finite() || stat < NEGATIVE_TOLERANCE {
        return Err(Error::OptimizationFailure(format!(
            "likelihood ratio {stat} between M={} and M={}",
            fit_m.m(),
            fit_m1.m()
        )));
    }
    Ok(stat)
}

/// Refit the (M+1)-component model from splits of every component of `fit_m`
/// at a narrow and a wide spacing.
pub fn refit_alternative(data: &PanelDataset, spec: &ModelSpec, cfg: &EmConfig, fit_m: &FitResult) -> Result<FitResult> {
    let mut starts = Vec::with_capacity(2 * fit_m.m());
    for h in 0..fit_m.m() {
        let sd = fit_m.params.components[h].sigma();
        for shift in [0.25, 1.0] {
            starts.push(split_component(&fit_m.params, h, shift * sd));
        }
    }
    let guard = (fit_m, largest_component(&fit_m.params));
    fit_starts(data, spec, cfg, &starts, fit_m.sigma0_hat, None, Some(guard))
}

/// Likelihood ratio with one recovery round: when the statistic is negative
/// the alternative is refitted from splits of `fit_m`, and the better of the
/// two alternatives is returned with the statistic.
pub fn likelihood_ratio(
    data: &PanelDataset,
    spec: &ModelSpec,
    cfg: &EmConfig,
    fit_m: &FitResult,
    fit_m1: &FitResult,
) -> Result<(f64, FitResult)> {
    match lrt_statistic(fit_m, fit_m1) {
        Ok(s) => Ok((s, fit_m1.clone())),
        Err(Error::OptimizationFailure(_)) => {
            let refit = refit_alternative(data, spec, cfg, fit_m)?;
            let best = if refit.loglik > fit_m1.loglik { refit } else { fit_m1.clone() };
            let s = lrt_statistic(fit_m, &best).map_err(|e| e.context("after refitting from every split"))?;
            Ok((s, best))
        }
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::{fit_mle, fit_sequence};
    use crate::model::{log_likelihood, ComponentParams, MixtureParams};
    use crate::sim::{simulate_panel, DgpSpec};

    fn data(seed: u64) -> PanelDataset {
        let p = MixtureParams::new(
            vec![0.5, 0.5],
            vec![ComponentParams::normal(-1.0, 0.64, vec![]), ComponentParams::normal(1.0, 1.44, vec![])],
        );
        simulate_panel(&DgpSpec::new(p, ModelSpec::normal(), 150, 3), seed).unwrap()
    }

    #[test]
    fn duplicated_component_gives_zero() {
        let d = data(1);
        let spec = ModelSpec::normal();
        let f1 = fit_mle(&d, 1, &spec, &EmConfig::default()).unwrap();
        let mut dup = f1.clone();
        dup.params = split_component(&f1.params, 0, 0.0);
        dup.loglik = log_likelihood(&d, &dup.params, &spec).unwrap();
        assert!(lrt_statistic(&f1, &dup).unwrap().abs() < 1e-9);
    }

    #[test]
    fn statistic_is_recomputed_loglik_difference() {
        let d = data(2);
        let spec = ModelSpec::normal();
        let fits = fit_sequence(&d, 2, &spec, &EmConfig { n_restarts: 4, ..EmConfig::default() }).unwrap();
        let s = lrt_statistic(&fits[0], &fits[1]).unwrap();
        let l0 = log_likelihood(&d, &fits[0].params, &spec).unwrap();
        let l1 = log_likelihood(&d, &fits[1].params, &spec).unwrap();
        assert!((s - 2.0 * (l1 - l0)).abs() < 1e-10);
    }

    #[test]
    fn negative_statistic_is_recovered() {
        let d = data(3);
        let spec = ModelSpec::normal();
        let cfg = EmConfig { n_restarts: 3, ..EmConfig::default() };
        let fits = fit_sequence(&d, 2, &spec, &cfg).unwrap();
        let mut bad = fits[1].clone();
        bad.loglik = fits[0].loglik - 5.0;
        assert!(lrt_statistic(&fits[0], &bad).is_err());
        let (s, alt) = likelihood_ratio(&d, &spec, &cfg, &fits[0], &bad).unwrap();
        assert!(s >= NEGATIVE_TOLERANCE);
        assert_eq!(alt.m(), 2);
    }
}
