use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::designs::Design;
use super::dgp::{simulate_panel, DgpSpec};
use crate::error::{Error, Result};
use crate::estimation::{fit_sequence, EmConfig};
use crate::model::{ErrorFamily, ModelSpec};
use crate::rank::{bayesian_bootstrap_with, rank_sequential, RankOptions};
use crate::rng::{derive_seed, stream};
use crate::selection::{
    bootstrap_test, information_criteria, likelihood_ratio, lrt_key, sequential_select_levels, CritSource,
    SequentialConfig,
};

/// Smallest number of replications an experiment accepts.
pub const MIN_REPLICATIONS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    SizePower,
    SelectionFrequency,
}

/// How often `method` chose `m` components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub m: usize,
    pub count: usize,
    pub percent: f64,
}

/// Aggregated outcome of a Monte Carlo experiment.
///
/// For size/power experiments each method has two rows: `m = null_m` (the
/// null was kept) and `m = null_m + 1` (rejected, or the larger model
/// preferred by an information criterion). For selection experiments each
/// method has one row per `m = 1..=m_bar`. Either way a method's counts sum
/// to `replications`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub design: String,
    pub kind: ExperimentKind,
    pub replications: usize,
    pub n: usize,
    pub t: usize,
    pub seed: u64,
    pub replication_seeds: Vec<u64>,
    pub rows: Vec<ReportRow>,
    /// Observed likelihood-ratio statistic of each replication (size/power only).
    pub lr_statistics: Vec<f64>,
    /// Bootstrap statistics of the first replication (size/power only).
    pub bootstrap_statistics: Vec<f64>,
    /// Bootstrap replicates, over all replications, whose refits hit the iteration cap.
    pub bootstrap_nonconverged: usize,
    /// Wall-clock time; not serialized so reports are reproducible byte for byte.
    #[serde(skip)]
    pub runtime_secs: f64,
}

impl ExperimentReport {
    pub fn methods(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.method.as_str()) {
                out.push(&r.method);
            }
        }
        out
    }

    /// Percentage of replications in which `method` chose `m` (0 when absent).
    pub fn percent(&self, method: &str, m: usize) -> f64 {
        self.rows.iter().find(|r| r.method == method && r.m == m).map_or(0.0, |r| r.percent)
    }

    pub fn count(&self, method: &str, m: usize) -> usize {
        self.rows.iter().find(|r| r.method == method && r.m == m).map_or(0, |r| r.count)
    }
}

/// Seed of replication `i` under master seed `seed`.
pub fn replication_seed(seed: u64, i: usize) -> u64 {
    derive_seed(seed, stream::REPLICATION, i as u64)
}

/// Equal-width histogram: `(bin center, count)` pairs over `[min, max]`.
pub fn histogram(values: &[f64], bins: usize) -> Vec<(f64, usize)> {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for v in finite {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts.into_iter().enumerate().map(|(b, c)| (lo + (b as f64 + 0.5) * width, c)).collect()
}

fn check_reps(reps: usize) -> Result<()> {
    if reps < MIN_REPLICATIONS {
        return Err(Error::InvalidParams(format!("{reps} replications; at least {MIN_REPLICATIONS} required")));
    }
    Ok(())
}

fn dgp_at(design: &Design, n: Option<usize>) -> DgpSpec {
    let mut dgp = design.dgp();
    if let Some(n) = n {
        dgp.n = n;
    }
    dgp
}

/// Run `f` on every replication in parallel and return the results in
/// replication order, or the error of the lowest failing replication.
fn run_replications<T, F>(seed: u64, reps: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    let out: Vec<Result<T>> = (0..reps)
        .into_par_iter()
        .map(|i| f(replication_seed(seed, i)).map_err(|e| e.context(format!("replication {i}"))))
        .collect();
    out.into_iter().collect()
}

fn tabulate(method: &str, choices: impl Iterator<Item = usize>, ms: std::ops::RangeInclusive<usize>, reps: usize) -> Vec<ReportRow> {
    let choices: Vec<usize> = choices.collect();
    ms.map(|m| {
        let count = choices.iter().filter(|&&c| c == m).count();
        ReportRow { method: method.to_string(), m, count, percent: 100.0 * count as f64 / reps as f64 }
    })
    .collect()
}

/// Settings of a size/power experiment for `H0: M = null_m` against `null_m + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SizePowerConfig {
    pub reps: usize,
    /// Bootstrap replicates of the likelihood-ratio test.
    pub b: usize,
    pub level: f64,
    pub seed: u64,
    pub null_m: usize,
    /// Overrides the design's sample size.
    pub n: Option<usize>,
    /// Bayesian-bootstrap draws of the rank test.
    pub rank_b: usize,
    /// Stop a bootstrap once non-rejection is certain.
    pub early_stop: bool,
    pub em: EmConfig,
    pub rank: RankOptions,
}

impl Default for SizePowerConfig {
    fn default() -> Self {
        SizePowerConfig {
            reps: 100,
            b: 99,
            level: 0.05,
            seed: 0,
            null_m: 2,
            n: None,
            rank_b: 199,
            early_stop: true,
            em: EmConfig::default(),
            rank: RankOptions::default(),
        }
    }
}

struct SizePowerOutcome {
    lr: f64,
    lrt: bool,
    ave_rk: bool,
    max_rk: bool,
    aic: bool,
    bic: bool,
    boot_stats: Vec<f64>,
    nonconverged: usize,
}

fn size_power_replication(dgp: &DgpSpec, cfg: &SizePowerConfig, rep_seed: u64) -> Result<SizePowerOutcome> {
    let data = simulate_panel(dgp, rep_seed)?;
    let spec = dgp.spec;
    let m0 = cfg.null_m;
    let em = EmConfig { seed: rep_seed, ..cfg.em };
    let mut fits = fit_sequence(&data, m0 + 1, &spec, &em)?;
    let (lr, alt) = likelihood_ratio(&data, &spec, &em, &fits[m0 - 1], &fits[m0])?;
    fits[m0] = alt;
    let stop = cfg.early_stop.then_some(cfg.level);
    let boot = bootstrap_test(&data, &fits[m0 - 1], lr, &spec, cfg.b, &em, rep_seed, stop)?;
    let ic = information_criteria(&fits, data.n(), &spec)?;
    let (null, alt) = (&ic.per_m[m0 - 1], &ic.per_m[m0]);
    let rank = bayesian_bootstrap_with(&data, m0, cfg.rank_b, derive_seed(rep_seed, stream::RANK_BOOTSTRAP, 0), cfg.rank)?;
    Ok(SizePowerOutcome {
        lr,
        lrt: boot.p <= cfg.level,
        ave_rk: rank.p_value_ave.expect("bootstrap p-value") < cfg.level,
        max_rk: rank.p_value.expect("bootstrap p-value") < cfg.level,
        aic: alt.aic > null.aic,
        bic: alt.bic > null.bic,
        boot_stats: boot.boot_stats,
        nonconverged: boot.nonconverged,
    })
}

/// Size/power experiment: per replication, the bootstrap likelihood-ratio
/// test, ave-rk and max-rk of `H0: M = null_m`, and the AIC/BIC comparison
/// of `null_m` with `null_m + 1` components.
pub fn run_size_power(design: &Design, cfg: &SizePowerConfig) -> Result<ExperimentReport> {
    check_reps(cfg.reps)?;
    if cfg.null_m == 0 {
        return Err(Error::InvalidParams("null_m must be at least 1".into()));
    }
    if !(cfg.level > 0.0 && cfg.level < 1.0) {
        return Err(Error::InvalidParams(format!("level {} outside (0, 1)", cfg.level)));
    }
    let dgp = dgp_at(design, cfg.n);
    dgp.validate()?;
    let start = Instant::now();
    let outcomes = run_replications(cfg.seed, cfg.reps, |s| size_power_replication(&dgp, cfg, s))?;
    let (m0, reps) = (cfg.null_m, cfg.reps);
    let mut rows = Vec::new();
    let methods: [(&str, fn(&SizePowerOutcome) -> bool); 5] = [
        ("lrt", |o| o.lrt),
        ("ave_rk", |o| o.ave_rk),
        ("max_rk", |o| o.max_rk),
        ("aic", |o| o.aic),
        ("bic", |o| o.bic),
    ];
    for (name, pick) in methods {
        rows.extend(tabulate(name, outcomes.iter().map(|o| if pick(o) { m0 + 1 } else { m0 }), m0..=m0 + 1, reps));
    }
    Ok(ExperimentReport {
        design: design.label().to_string(),
        kind: ExperimentKind::SizePower,
        replications: reps,
        n: dgp.n,
        t: dgp.t,
        seed: cfg.seed,
        replication_seeds: (0..reps).map(|i| replication_seed(cfg.seed, i)).collect(),
        rows,
        lr_statistics: outcomes.iter().map(|o| o.lr).collect(),
        bootstrap_statistics: outcomes[0].boot_stats.clone(),
        bootstrap_nonconverged: outcomes.iter().map(|o| o.nonconverged).sum(),
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

/// Size/power experiment for `H0: M = 2` with `b` bootstrap replicates at level `q`.
pub fn run_size_power_experiment(design: &Design, reps: usize, b: usize, q: f64, seed: u64) -> Result<ExperimentReport> {
    run_size_power(design, &SizePowerConfig { reps, b, level: q, seed, ..SizePowerConfig::default() })
}

/// Error family used to fit the candidate models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitFamily {
    Normal,
    /// Two-part normal mixture errors.
    Mixture,
}

impl FitFamily {
    /// Fitting model for data generated under `dgp_spec` (dynamics and covariates are kept).
    pub fn spec_for(self, dgp_spec: &ModelSpec) -> ModelSpec {
        let error_family = match self {
            FitFamily::Normal => ErrorFamily::Normal,
            FitFamily::Mixture => ErrorFamily::NormalMixture { k: 2 },
        };
        ModelSpec { error_family, ..*dgp_spec }
    }

    fn suffix(self) -> &'static str {
        match self {
            FitFamily::Normal => "normal",
            FitFamily::Mixture => "mixture",
        }
    }
}

/// Procedures run in a selection-frequency experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionMethods {
    pub families: Vec<FitFamily>,
    pub m_bar: usize,
    /// Sequential likelihood-ratio testing at `levels`; AIC and BIC only when false.
    pub lrt: bool,
    pub levels: Vec<f64>,
    pub b: usize,
    /// Sequential rank test for a lower bound on M.
    pub rank: bool,
    pub rank_level: f64,
    pub rank_b: usize,
    pub rank_options: RankOptions,
    pub n: Option<usize>,
    pub em: EmConfig,
}

impl Default for SelectionMethods {
    fn default() -> Self {
        SelectionMethods {
            families: vec![FitFamily::Normal, FitFamily::Mixture],
            m_bar: 6,
            lrt: true,
            levels: vec![0.01, 0.05, 0.10],
            b: 99,
            rank: true,
            rank_level: 0.05,
            rank_b: 199,
            rank_options: RankOptions::default(),
            n: None,
            em: EmConfig::default(),
        }
    }
}

/// Method labels of a selection experiment, in report order.
pub fn selection_method_labels(methods: &SelectionMethods) -> Vec<String> {
    let mut out = Vec::new();
    for fam in &methods.families {
        let s = fam.suffix();
        out.push(format!("aic_{s}"));
        out.push(format!("bic_{s}"));
        if methods.lrt {
            out.extend(methods.levels.iter().map(|&q| format!("{}_{s}", lrt_key(q))));
        }
    }
    if methods.rank {
        out.push("ave_rk".into());
        out.push("max_rk".into());
    }
    out
}

fn selection_replication(dgp: &DgpSpec, methods: &SelectionMethods, rep_seed: u64) -> Result<Vec<usize>> {
    let data = simulate_panel(dgp, rep_seed)?;
    let em = EmConfig { seed: rep_seed, ..methods.em };
    let mut picks = Vec::new();
    for (f, fam) in methods.families.iter().enumerate() {
        let spec = fam.spec_for(&dgp.spec);
        let ctx = |e: Error| e.context(format!("{} fit", fam.suffix()));
        let result = if methods.lrt {
            let cfg = SequentialConfig {
                m_bar: methods.m_bar,
                levels: methods.levels.clone(),
                b: methods.b,
                crit_source: CritSource::Bootstrap,
                early_stop: true,
                seed: derive_seed(rep_seed, stream::SELECTION, f as u64),
                ..SequentialConfig::default()
            };
            sequential_select_levels(&data, &spec, &cfg, &em).map_err(ctx)?
        } else {
            let fits = fit_sequence(&data, methods.m_bar, &spec, &em).map_err(ctx)?;
            information_criteria(&fits, data.n(), &spec)?
        };
        picks.push(result.chosen["aic"]);
        picks.push(result.chosen["bic"]);
        if methods.lrt {
            for &q in &methods.levels {
                let key = if methods.levels.len() > 1 { lrt_key(q) } else { "lrt".to_string() };
                picks.push(result.chosen[&key]);
            }
        }
    }
    if methods.rank {
        let seed = derive_seed(rep_seed, stream::RANK_BOOTSTRAP, 0);
        let bound = rank_sequential(&data, methods.m_bar - 1, methods.rank_level, methods.rank_b, seed, methods.rank_options)?;
        picks.push(bound.ave);
        picks.push(bound.max);
    }
    Ok(picks)
}

/// Selection-frequency experiment: per replication, sequential testing at
/// every level, AIC and BIC over `M = 1..=m_bar` under each fitting family,
/// and the rank-test lower bound.
pub fn run_selection_frequency_experiment(
    design: &Design,
    reps: usize,
    methods: &SelectionMethods,
    seed: u64,
) -> Result<ExperimentReport> {
    check_reps(reps)?;
    if methods.m_bar < 2 {
        return Err(Error::InvalidParams("m_bar must be at least 2".into()));
    }
    if methods.families.is_empty() && !methods.rank {
        return Err(Error::InvalidParams("no selection method requested".into()));
    }
    let dgp = dgp_at(design, methods.n);
    dgp.validate()?;
    let start = Instant::now();
    let picks = run_replications(seed, reps, |s| selection_replication(&dgp, methods, s))?;
    let labels = selection_method_labels(methods);
    let rows = labels
        .iter()
        .enumerate()
        .flat_map(|(j, name)| tabulate(name, picks.iter().map(|p| p[j]), 1..=methods.m_bar, reps))
        .collect();
    Ok(ExperimentReport {
        design: design.label().to_string(),
        kind: ExperimentKind::SelectionFrequency,
        replications: reps,
        n: dgp.n,
        t: dgp.t,
        seed,
        replication_seeds: (0..reps).map(|i| replication_seed(seed, i)).collect(),
        rows,
        lr_statistics: Vec::new(),
        bootstrap_statistics: Vec::new(),
        bootstrap_nonconverged: 0,
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}
