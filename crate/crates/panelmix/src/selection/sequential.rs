use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::bootstrap::bootstrap_test;
use super::criteria::{information_criteria, SelectionResult};
use super::lrt::likelihood_ratio;
use crate::asymptotic::{information_matrix, score_vector, simulate_null_draws};
use crate::error::{Error, Result};
use crate::estimation::{fit_sequence, EmConfig, FitResult};
use crate::model::{ModelSpec, PanelDataset};
use crate::numeric::empirical_quantile;
use crate::rng::{derive_seed, stream};

/// Source of the critical values in sequential testing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CritSource {
    Bootstrap,
    AsymptoticSim,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequentialConfig {
    pub m_bar: usize,
    /// Significance levels; the first one fills `chosen["lrt"]` and the
    /// per-M critical values.
    pub levels: Vec<f64>,
    pub b: usize,
    pub crit_source: CritSource,
    /// Draws of the limiting law per tested M when `crit_source` is asymptotic.
    pub asymptotic_draws: usize,
    /// Stop a bootstrap once its p-value is certain to exceed every level.
    pub early_stop: bool,
    pub seed: u64,
}

impl Default for SequentialConfig {
    fn default() -> Self {
        SequentialConfig {
            m_bar: 6,
            levels: vec![0.05],
            b: 199,
            crit_source: CritSource::Bootstrap,
            asymptotic_draws: 20_000,
            early_stop: false,
            seed: 0,
        }
    }
}

/// Key of the sequential choice at `level` in `SelectionResult::chosen`.
pub fn lrt_key(level: f64) -> String {
    format!("lrt@{level}")
}

struct TestOutcome {
    p: f64,
    /// Critical value at each level.
    crit: Vec<f64>,
}

fn asymptotic_test(
    data: &PanelDataset,
    fit_m: &FitResult,
    stat: f64,
    spec: &ModelSpec,
    levels: &[f64],
    draws: usize,
    seed: u64,
) -> Result<TestOutcome> {
    if draws < 1000 {
        return Err(Error::InvalidParams(format!("{draws} draws; at least 1000 required")));
    }
    let info = information_matrix(&score_vector(data, fit_m, spec, None)?)?;
    let sims = simulate_null_draws(&info, draws, seed)?;
    let exceed = sims.iter().filter(|&&s| s >= stat).count();
    Ok(TestOutcome {
        p: (1 + exceed) as f64 / (draws + 1) as f64,
        crit: levels.iter().map(|&q| empirical_quantile(&sims, 1.0 - q)).collect(),
    })
}

/// Sequential testing of `H0: M = m` against `m + 1` for `m = 1, 2, …` at
/// several levels at once.
///
/// Testing continues while some level still rejects; the choice at level
/// `q` is the first `m` whose p-value exceeds `q` (or `m_bar` when every test
/// rejects), so the choice never decreases as `q` grows. AIC and BIC over the
/// same fits are included.
pub fn sequential_select_levels(
    data: &PanelDataset,
    spec: &ModelSpec,
    cfg: &SequentialConfig,
    em: &EmConfig,
) -> Result<SelectionResult> {
    if cfg.m_bar == 0 {
        return Err(Error::InvalidParams("M_bar must be at least 1".into()));
    }
    if cfg.levels.is_empty() || cfg.levels.iter().any(|q| !(*q > 0.0 && *q < 1.0)) {
        return Err(Error::InvalidParams(format!("levels {:?} must lie in (0, 1)", cfg.levels)));
    }
    let mut fits = fit_sequence(data, cfg.m_bar, spec, em)?;
    let q_max = cfg.levels.iter().copied().fold(0.0, f64::max);
    let mut tests: Vec<(f64, TestOutcome)> = Vec::new();
    for m in 1..cfg.m_bar {
        let ctx = |e: Error| e.context(format!("testing M={m} against M={}", m + 1));
        let (stat, alt) = likelihood_ratio(data, spec, em, &fits[m - 1], &fits[m]).map_err(ctx)?;
        fits[m] = alt;
        let seed = derive_seed(cfg.seed, stream::SELECTION, m as u64);
        let outcome = match cfg.crit_source {
            CritSource::Bootstrap => {
                let stop = cfg.early_stop.then_some(q_max);
                let r = bootstrap_test(data, &fits[m - 1], stat, spec, cfg.b, em, seed, stop).map_err(ctx)?;
                TestOutcome { p: r.p, crit: cfg.levels.iter().map(|&q| r.critical_value(q)).collect() }
            }
            CritSource::AsymptoticSim => {
                asymptotic_test(data, &fits[m - 1], stat, spec, &cfg.levels, cfg.asymptotic_draws, seed)
                    .map_err(ctx)?
            }
        };
        let p = outcome.p;
        tests.push((stat, outcome));
        if p > q_max {
            break;
        }
    }

    let mut result = information_criteria(&fits, data.n(), spec)?;
    for (idx, (stat, outcome)) in tests.iter().enumerate() {
        let row = &mut result.per_m[idx];
        row.lrt_stat = Some(*stat);
        row.p_value = Some(outcome.p);
        row.critical_value = Some(outcome.crit[0]);
    }
    let choose = |q: f64| tests.iter().position(|(_, o)| o.p > q).map_or(cfg.m_bar, |i| i + 1);
    let mut chosen: BTreeMap<String, usize> = result.chosen.clone();
    chosen.insert("lrt".into(), choose(cfg.levels[0]));
    if cfg.levels.len() > 1 {
        for &q in &cfg.levels {
            chosen.insert(lrt_key(q), choose(q));
        }
    }
    result.chosen = chosen;
    result.q_n = Some(cfg.levels[0]);
    result.b = (cfg.crit_source == CritSource::Bootstrap).then_some(cfg.b);
    Ok(result)
}

/// Sequential testing at a single level `q_n`.
#[allow(clippy::too_many_arguments)]
pub fn sequential_select(
    data: &PanelDataset,
    m_bar: usize,
    spec: &ModelSpec,
    q_n: f64,
    b: usize,
    em: &EmConfig,
    seed: u64,
    crit_source: CritSource,
) -> Result<SelectionResult> {
    let cfg = SequentialConfig { m_bar, levels: vec![q_n], b, crit_source, seed, ..SequentialConfig::default() };
    sequential_select_levels(data, spec, &cfg, em)
}
