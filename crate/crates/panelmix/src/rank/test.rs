use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::partition::{build_partition, estimate_pk, multinomial_covariance, Construction};
use super::statistic::{lambda_and_transform, quadratic_form, rk_statistic};
use crate::error::{Error, Result};
use crate::model::PanelDataset;
use crate::rng::{derive_seed, rng_for, stream};

/// Largest tolerated share of degenerate bootstrap draws.
pub const MAX_DEGENERATE_SHARE: f64 = 0.1;
/// Relative slack when comparing bootstrap statistics with the observed one.
const TIE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodStatistic {
    /// Held-out period, 1-based.
    pub k: usize,
    pub p_hat: DMatrix<f64>,
    pub lambda_hat: Vec<f64>,
    pub rk: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTestResult {
    pub r: usize,
    pub construction: Construction,
    pub per_k: Vec<PeriodStatistic>,
    pub ave_rk: f64,
    pub max_rk: f64,
    /// Bootstrap p-value of max-rk.
    pub p_value: Option<f64>,
    /// Bootstrap p-value of ave-rk.
    pub p_value_ave: Option<f64>,
    pub b: Option<usize>,
    pub degenerate_draws: usize,
}

/// Options of the rank test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RankOptions {
    pub construction: Construction,
    /// Use equal weights in every bootstrap draw (a degenerate check mode in
    /// which every centered statistic is zero).
    pub equal_weights: bool,
}

struct PeriodFit {
    lambda: Vec<f64>,
    omega: DMatrix<f64>,
}

fn period_fit(data: &PanelDataset, k: usize, r: usize, w: Option<&[f64]>, c: Construction) -> Result<PeriodFit> {
    let disc = build_partition(data, k, r, w, c)?;
    let p = estimate_pk(&disc, w)?;
    let (lambda, kt) = lambda_and_transform(&p, r)?;
    let omega = &kt * multinomial_covariance(&p) * kt.transpose();
    Ok(PeriodFit { lambda, omega })
}

fn aggregate(stats: &[f64]) -> (f64, f64) {
    let ave = stats.iter().sum::<f64>() / stats.len() as f64;
    let max = stats.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (ave, max)
}

/// ave-rk and max-rk over the held-out periods `k = 1..=T`.
pub fn ave_max_rk(data: &PanelDataset, r: usize, construction: Construction) -> Result<RankTestResult> {
    let n = data.n();
    let mut per_k = Vec::with_capacity(data.t());
    for k in 1..=data.t() {
        let disc = build_partition(data, k, r, None, construction)?;
        let p = estimate_pk(&disc, None)?;
        let (rk, lambda_hat) =
            rk_statistic(&p, &multinomial_covariance(&p), r, n).map_err(|e| e.context(format!("period {k}")))?;
        per_k.push(PeriodStatistic { k, p_hat: p, lambda_hat, rk });
    }
    let rks: Vec<f64> = per_k.iter().map(|s| s.rk).collect();
    let (ave_rk, max_rk) = aggregate(&rks);
    Ok(RankTestResult {
        r,
        construction,
        per_k,
        ave_rk,
        max_rk,
        p_value: None,
        p_value_ave: None,
        b: None,
        degenerate_draws: 0,
    })
}

/// Normalized unit-exponential weights of draw `b`.
pub fn bootstrap_weights(n: usize, seed: u64, b: usize) -> Vec<f64> {
    let mut rng = rng_for(seed, stream::RANK_BOOTSTRAP, b as u64);
    let w: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Centered (ave, max) statistics of one weighted draw.
fn draw_statistics(
    data: &PanelDataset,
    r: usize,
    w: &[f64],
    observed: &[PeriodStatistic],
    c: Construction,
) -> Result<(f64, f64)> {
    let n = data.n() as f64;
    let mut stats = Vec::with_capacity(observed.len());
    for obs in observed {
        let f = period_fit(data, obs.k, r, Some(w), c)?;
        let diff: Vec<f64> = f.lambda.iter().zip(&obs.lambda_hat).map(|(a, b)| a - b).collect();
        stats.push(n * quadratic_form(&f.omega, &diff, &diff)?);
    }
    Ok(aggregate(&stats))
}

/// Bayesian bootstrap p-values of max-rk and ave-rk for `H0: rank ≤ r`.
///
/// Each draw reweights units by normalized Exp(1) weights shared across the
/// held-out periods, recomputes the partitions with weighted quantiles, and
/// evaluates the statistic centered at the observed `λ̂`. The p-value is the
/// share of valid draws at or above the observed statistic; reject when it is
/// strictly below the level.
pub fn bayesian_bootstrap_pvalue(data: &PanelDataset, r: usize, b: usize, seed: u64) -> Result<RankTestResult> {
    bayesian_bootstrap_with(data, r, b, seed, RankOptions::default())
}

pub fn bayesian_bootstrap_with(
    data: &PanelDataset,
    r: usize,
    b: usize,
    seed: u64,
    opts: RankOptions,
) -> Result<RankTestResult> {
    if b < 99 {
        return Err(Error::InvalidParams(format!("{b} bootstrap draws; at least 99 required")));
    }
    let mut result = ave_max_rk(data, r, opts.construction)?;
    let n = data.n();
    let draws: Vec<Option<(f64, f64)>> = (0..b)
        .into_par_iter()
        .map(|d| {
            let w = if opts.equal_weights { vec![1.0 / n as f64; n] } else { bootstrap_weights(n, seed, d) };
            draw_statistics(data, r, &w, &result.per_k, opts.construction).ok()
        })
        .collect();
    let degenerate = draws.iter().filter(|d| d.is_none()).count();
    if degenerate as f64 > MAX_DEGENERATE_SHARE * b as f64 {
        return Err(Error::DegeneratePartition(format!("{degenerate} of {b} bootstrap draws were degenerate")));
    }
    let valid: Vec<(f64, f64)> = draws.into_iter().flatten().collect();
    let share = |obs: f64, pick: fn(&(f64, f64)) -> f64| {
        let cut = obs - TIE_SLACK * (1.0 + obs.abs());
        valid.iter().filter(|d| pick(d) >= cut).count() as f64 / valid.len() as f64
    };
    result.p_value = Some(share(result.max_rk, |d| d.1));
    result.p_value_ave = Some(share(result.ave_rk, |d| d.0));
    result.b = Some(b);
    result.degenerate_draws = degenerate;
    Ok(result)
}

/// Estimated lower bounds on the number of components from sequential rank tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankLowerBound {
    /// First `r` not rejected by max-rk (`r_max + 1` when all are rejected).
    pub max: usize,
    /// Same for ave-rk.
    pub ave: usize,
    /// Tests run, in order of `r`.
    pub tests: Vec<RankTestResult>,
}

/// Test `rank ≤ r` for `r = 1, 2, …, r_max` until neither aggregate rejects
/// at `level`.
pub fn rank_sequential(
    data: &PanelDataset,
    r_max: usize,
    level: f64,
    b: usize,
    seed: u64,
    opts: RankOptions,
) -> Result<RankLowerBound> {
    if r_max == 0 {
        return Err(Error::InvalidParams("r_max must be at least 1".into()));
    }
    let mut tests = Vec::new();
    let (mut max, mut ave) = (None, None);
    for r in 1..=r_max {
        let res = bayesian_bootstrap_with(data, r, b, derive_seed(seed, stream::RANK_BOOTSTRAP, r as u64), opts)
            .map_err(|e| e.context(format!("rank {r}")))?;
        if max.is_none() && res.p_value.expect("bootstrap p-value") >= level {
            max = Some(r);
        }
        if ave.is_none() && res.p_value_ave.expect("bootstrap p-value") >= level {
            ave = Some(r);
        }
        tests.push(res);
        if max.is_some() && ave.is_some() {
            break;
        }
    }
    Ok(RankLowerBound { max: max.unwrap_or(r_max + 1), ave: ave.unwrap_or(r_max + 1), tests })
}

/// Lower bound from max-rk sequential testing.
pub fn rank_sequential_lower_bound(data: &PanelDataset, r_max: usize, level: f64, b: usize, seed: u64) -> Result<usize> {
    rank_sequential(data, r_max, level, b, seed, RankOptions::default()).map(|l| l.max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    fn iid_panel(n: usize, t: usize, seed: u64) -> PanelDataset {
        let mut rng = rng_for(seed, 99, 0);
        let y = (0..n * t).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        PanelDataset::new(n, t, y, None).unwrap()
    }

    #[test]
    fn max_is_at_least_ave() {
        let d = iid_panel(200, 3, 1);
        let r = ave_max_rk(&d, 1, Construction::Square).unwrap();
        assert!(r.max_rk >= r.ave_rk && r.ave_rk >= 0.0);
        let mean = r.per_k.iter().map(|s| s.rk).sum::<f64>() / 3.0;
        assert!((mean - r.ave_rk).abs() < 1e-12);
    }

    #[test]
    fn bootstrap_is_deterministic_and_on_grid() {
        let d = iid_panel(150, 3, 2);
        let a = bayesian_bootstrap_pvalue(&d, 1, 99, 5).unwrap();
        let b = bayesian_bootstrap_pvalue(&d, 1, 99, 5).unwrap();
        assert_eq!(a, b);
        let p = a.p_value.unwrap();
        let valid = 99 - a.degenerate_draws;
        assert!(((p * valid as f64) - (p * valid as f64).round()).abs() < 1e-9);
    }

    #[test]
    fn shifting_outcomes_changes_nothing() {
        let d = iid_panel(100, 3, 3);
        let shifted = PanelDataset::new(100, 3, d.y().iter().map(|v| v + 5.0).collect(), None).unwrap();
        let a = ave_max_rk(&d, 1, Construction::Square).unwrap();
        let b = ave_max_rk(&shifted, 1, Construction::Square).unwrap();
        for (x, y) in a.per_k.iter().zip(&b.per_k) {
            assert_eq!(x.p_hat, y.p_hat);
        }
        assert_eq!(a.max_rk, b.max_rk);
    }

    #[test]
    fn equal_weights_center_to_zero() {
        // Balanced design: both margins split evenly and independent, so P̂ has rank one.
        let mut y = Vec::new();
        for i in 0..40 {
            let a = (i % 2) as f64;
            let b = ((i / 2) % 2) as f64;
            y.extend_from_slice(&[a, b]);
        }
        let d = PanelDataset::new(40, 2, y, None).unwrap();
        let opts = RankOptions { equal_weights: true, ..RankOptions::default() };
        let r = bayesian_bootstrap_with(&d, 1, 99, 1, opts).unwrap();
        assert!(r.max_rk < 1e-20);
        assert_eq!(r.p_value, Some(1.0));
        assert_eq!(r.p_value_ave, Some(1.0));
    }

    #[test]
    fn immediate_rejection_caps_the_bound() {
        // Strongly dependent periods: P̂ is close to diagonal, far from rank one.
        let mut rng = rng_for(4, 99, 0);
        let y: Vec<f64> = (0..300)
            .flat_map(|_| {
                let a: f64 = rng.sample(StandardNormal);
                let e: f64 = rng.sample(StandardNormal);
                [a, a + 0.3 * e]
            })
            .collect();
        let d = PanelDataset::new(300, 2, y, None).unwrap();
        let l = rank_sequential(&d, 1, 0.05, 99, 1, RankOptions::default()).unwrap();
        assert_eq!(l.max, 2);
        assert_eq!(l.ave, 2);
        assert_eq!(rank_sequential_lower_bound(&d, 1, 0.05, 99, 1).unwrap(), 2);
    }
}
