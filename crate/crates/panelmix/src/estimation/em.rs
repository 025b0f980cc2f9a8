use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mstep::{m_step_raw, project, DEGENERATE_MASS};
use super::posteriors::{e_step_into, Posteriors};
use crate::error::{Error, Result};
use crate::model::{
    canonicalize_in_place, dot, log_likelihood_unchecked, Cells, ComponentParams, ConstraintSet, InitialBlock,
    MixtureParams, ModelSpec, PanelDataset,
};
use crate::numeric::{quantile_sorted, LN_2PI};
use crate::rng::{rng_for, stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub max_iter: usize,
    /// Relative log-likelihood change `|Δℓ|/(1+|ℓ|)` that ends a run.
    pub tol: f64,
    pub n_restarts: usize,
    pub seed: u64,
    pub constraints: ConstraintSet,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig { max_iter: 2000, tol: 1e-8, n_restarts: 10, seed: 0, constraints: ConstraintSet::default() }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParams("tol must be positive".into()));
        }
        if self.n_restarts == 0 {
            return Err(Error::InvalidParams("n_restarts must be at least 1".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParams("max_iter must be at least 1".into()));
        }
        self.constraints.validate()
    }
}

/// Constrained maximum likelihood fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: MixtureParams,
    pub loglik: f64,
    pub n_iter: usize,
    pub converged: bool,
    /// Final log-likelihood of every restart, `-inf` for runs that degenerated.
    pub restart_logliks: Vec<f64>,
    pub sigma0_hat: f64,
}

impl FitResult {
    pub fn m(&self) -> usize {
        self.params.m()
    }
}

/// Trace of a single EM run.
#[derive(Debug, Clone)]
pub struct EmRun {
    pub params: MixtureParams,
    pub loglik: f64,
    pub n_iter: usize,
    pub converged: bool,
    /// Log-likelihood before each M-step.
    pub trace: Vec<f64>,
    /// Whether the projection onto the constraint set moved the M-step output.
    pub projected: Vec<bool>,
}

/// Per-unit sufficient statistics for static normal models without covariates.
struct FastStats {
    mean: Vec<f64>,
    ssw: Vec<f64>,
    t: f64,
}

impl FastStats {
    fn new(data: &PanelDataset) -> Self {
        let mut mean = Vec::with_capacity(data.n());
        let mut ssw = Vec::with_capacity(data.n());
        for i in 0..data.n() {
            let y = data.y_unit(i);
            let m = y.iter().sum::<f64>() / y.len() as f64;
            mean.push(m);
            ssw.push(y.iter().map(|v| (v - m) * (v - m)).sum());
        }
        FastStats { mean, ssw, t: data.t() as f64 }
    }

    fn e_step(&self, params: &MixtureParams, pi: &mut [f64]) -> f64 {
        let m = params.m();
        let mut la = [0.0f64; 16];
        let mut heap = Vec::new();
        let consts: &mut [f64] = if m <= 8 {
            &mut la[..2 * m]
        } else {
            heap.resize(2 * m, 0.0);
            &mut heap
        };
        for (j, c) in params.components.iter().enumerate() {
            consts[2 * j] = params.alpha[j].ln() - 0.5 * self.t * (LN_2PI + c.sigma2.ln());
            consts[2 * j + 1] = 0.5 / c.sigma2;
        }
        let mut ll = 0.0;
        for i in 0..self.mean.len() {
            let row = &mut pi[i * m..(i + 1) * m];
            let mut mx = f64::NEG_INFINITY;
            for j in 0..m {
                let d = self.mean[i] - params.components[j].mu[0];
                let v = consts[2 * j] - consts[2 * j + 1] * (self.ssw[i] + self.t * d * d);
                row[j] = v;
                mx = mx.max(v);
            }
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
            ll += mx + s.ln();
        }
        ll
    }

    fn m_step(&self, pi: &[f64], current: &MixtureParams) -> Result<MixtureParams> {
        let m = current.m();
        let n = self.mean.len();
        let mut w = vec![0.0; m];
        let mut sy = vec![0.0; m];
        for i in 0..n {
            for j in 0..m {
                let p = pi[i * m + j];
                w[j] += p;
                sy[j] += p * self.mean[i];
            }
        }
        let mut comps = Vec::with_capacity(m);
        for j in 0..m {
            if w[j] < DEGENERATE_MASS {
                return Err(Error::DegenerateComponent { component: j + 1, mass: w[j] });
            }
            let mu = sy[j] / w[j];
            let mut ss = 0.0;
            for i in 0..n {
                let d = self.mean[i] - mu;
                ss += pi[i * m + j] * (self.ssw[i] + self.t * d * d);
            }
            let s2 = ss / (w[j] * self.t);
            let s2 = if s2 > 0.0 { s2 } else { current.components[j].sigma2 };
            comps.push(ComponentParams::normal(mu, s2, Vec::new()));
        }
        Ok(MixtureParams { alpha: w.iter().map(|v| v / n as f64).collect(), components: comps })
    }
}

fn use_fast_path(spec: &ModelSpec) -> bool {
    spec.k() == 1 && !spec.is_dynamic() && spec.q_x == 0
}

/// Run EM from `start` until the relative log-likelihood change drops below
/// `cfg.tol` or `cfg.max_iter` M-steps have been taken.
pub fn run_em(
    data: &PanelDataset,
    spec: &ModelSpec,
    start: &MixtureParams,
    cfg: &EmConfig,
    sigma0_hat: f64,
) -> Result<EmRun> {
    start.validate(spec)?;
    run_em_cells(data, spec, start, cfg, sigma0_hat, None)
}

pub(crate) fn run_em_cells(
    data: &PanelDataset,
    spec: &ModelSpec,
    start: &MixtureParams,
    cfg: &EmConfig,
    sigma0_hat: f64,
    cells: Option<&Cells>,
) -> Result<EmRun> {
    let mut params = start.clone();
    project(&mut params, &cfg.constraints, sigma0_hat, cells)?;
    let m = params.m();
    let fast = use_fast_path(spec).then(|| FastStats::new(data));
    let mut post = Posteriors::new(data.n(), m, data.t(), spec.k());
    let mut trace = Vec::new();
    let mut projected = Vec::new();
    let mut prev: Option<f64> = None;
    for it in 0..cfg.max_iter {
        let ll = match &fast {
            Some(f) => f.e_step(&params, &mut post.pi),
            None => e_step_into(data, &params, &mut post),
        };
        if !ll.is_finite() {
            return Err(Error::OptimizationFailure(format!("log-likelihood became {ll} at iteration {it}")));
        }
        trace.push(ll);
        if let Some(p) = prev {
            if (ll - p).abs() / (1.0 + ll.abs()) < cfg.tol {
                return Ok(EmRun { params, loglik: ll, n_iter: it, converged: true, trace, projected });
            }
        }
        prev = Some(ll);
        let mut next = match &fast {
            Some(f) => f.m_step(&post.pi, &params)?,
            None => m_step_raw(data, &post, &params)?,
        };
        projected.push(project(&mut next, &cfg.constraints, sigma0_hat, cells)?);
        params = next;
    }
    let ll = log_likelihood_unchecked(data, &params);
    trace.push(ll);
    Ok(EmRun { params, loglik: ll, n_iter: cfg.max_iter, converged: false, trace, projected })
}

/// One-component normal fit under the same dynamics and covariates.
pub fn one_component_fit(data: &PanelDataset, spec: &ModelSpec) -> Result<ComponentParams> {
    let normal = ModelSpec { error_family: crate::model::ErrorFamily::Normal, ..*spec };
    let q = spec.q_x;
    let n = data.n();
    let t_len = data.t();
    let ys = data.y();
    let ybar = ys.iter().sum::<f64>() / ys.len() as f64;
    let var = ys.iter().map(|v| (v - ybar) * (v - ybar)).sum::<f64>() / ys.len() as f64;
    if !(var > 0.0) {
        return Err(Error::InvalidData("outcome has zero variance".into()));
    }
    let mut start = ComponentParams::normal(ybar, var, vec![0.0; q]);
    if spec.is_dynamic() {
        let y0: Vec<f64> = (0..n).map(|i| data.y_unit(i)[0]).collect();
        let m0 = y0.iter().sum::<f64>() / n as f64;
        let v0 = y0.iter().map(|v| (v - m0) * (v - m0)).sum::<f64>() / n as f64;
        let v0 = if v0 > 0.0 { v0 } else { var };
        // Pooled lag-one autocorrelation as the starting persistence.
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..n {
            let y = data.y_unit(i);
            for s in 1..t_len {
                num += (y[s] - ybar) * (y[s - 1] - ybar);
                den += (y[s - 1] - ybar) * (y[s - 1] - ybar);
            }
        }
        let rho = if den > 0.0 { (num / den).clamp(-0.99, 0.99) } else { 0.0 };
        start = ComponentParams::normal(ybar * (1.0 - rho), var, vec![0.0; q]).with_ar1(rho, vec![m0], v0, vec![0.0; q]);
    }
    let cfg = EmConfig { max_iter: 10_000, tol: 1e-13, n_restarts: 1, ..EmConfig::default() };
    let run = run_em_cells(data, &normal, &MixtureParams::single(start), &cfg, var.sqrt(), None)?;
    Ok(run.params.components.into_iter().next().expect("one component"))
}

/// Unit-level location used to spread starting means: the unit mean of
/// `y - x'beta` under the one-component fit.
fn unit_locations(data: &PanelDataset, one: &ComponentParams) -> Vec<f64> {
    let mut out: Vec<f64> = (0..data.n())
        .map(|i| {
            let u = data.unit(i);
            (0..u.periods())
                .map(|s| if u.q_x > 0 { u.y[s] - dot(u.x_at(s), &one.beta) } else { u.y[s] })
                .sum::<f64>()
                / u.periods() as f64
        })
        .collect();
    out.sort_by(f64::total_cmp);
    out
}

/// Component with location `loc` built from the one-component fit.
fn component_at(spec: &ModelSpec, one: &ComponentParams, loc: f64) -> ComponentParams {
    let k = spec.k();
    let sd = one.sigma();
    let offsets: Vec<f64> = (0..k).map(|c| (c as f64 - (k as f64 - 1.0) / 2.0) * 0.5 * sd).collect();
    let tau = vec![1.0 / k as f64; k];
    match &one.ar1 {
        None => ComponentParams {
            tau,
            mu: offsets.iter().map(|o| loc + o).collect(),
            sigma2: one.sigma2,
            beta: one.beta.clone(),
            ar1: None,
        },
        Some(b) => {
            let rho = b.rho;
            let s1 = b.sigma2_1.sqrt();
            ComponentParams {
                tau,
                mu: offsets.iter().map(|o| (1.0 - rho) * loc + o).collect(),
                sigma2: one.sigma2,
                beta: one.beta.clone(),
                ar1: Some(InitialBlock {
                    rho,
                    mu1: offsets.iter().map(|o| loc + o * s1 / sd).collect(),
                    sigma2_1: b.sigma2_1,
                    beta1: b.beta1.clone(),
                }),
            }
        }
    }
}

/// Means at empirical quantiles of unit locations, equal weights.
pub fn quantile_start(data: &PanelDataset, m: usize, spec: &ModelSpec, one: &ComponentParams) -> MixtureParams {
    let locs = unit_locations(data, one);
    let components = (0..m)
        .map(|j| component_at(spec, one, quantile_sorted(&locs, (j as f64 + 0.5) / m as f64)))
        .collect();
    MixtureParams { alpha: vec![1.0 / m as f64; m], components }
}

/// Shift each component's location by Uniform(-sd, sd).
pub fn jitter_start(base: &MixtureParams, sd: f64, rng: &mut crate::rng::Rng) -> MixtureParams {
    let mut out = base.clone();
    for c in &mut out.components {
        let d = rng.random_range(-sd..sd);
        c.shift_location(d);
    }
    canonicalize_in_place(&mut out);
    out
}

/// Replace component `h` (0-based) by two halves shifted by ±`shift`.
pub fn split_component(base: &MixtureParams, h: usize, shift: f64) -> MixtureParams {
    let mut alpha = Vec::with_capacity(base.m() + 1);
    let mut components = Vec::with_capacity(base.m() + 1);
    for (j, c) in base.components.iter().enumerate() {
        if j == h {
            for d in [-shift, shift] {
                let mut cc = c.clone();
                cc.shift_location(d);
                alpha.push(base.alpha[j] / 2.0);
                components.push(cc);
            }
        } else {
            alpha.push(base.alpha[j]);
            components.push(c.clone());
        }
    }
    MixtureParams { alpha, components }
}

/// Index of the largest mixing proportion (lowest index on ties).
pub fn largest_component(p: &MixtureParams) -> usize {
    let mut best = 0;
    for j in 1..p.m() {
        if p.alpha[j] > p.alpha[best] {
            best = j;
        }
    }
    best
}

/// Component indices by decreasing mixing proportion, lowest index first on ties.
pub(crate) fn components_by_weight(p: &MixtureParams) -> Vec<usize> {
    let mut order: Vec<usize> = (0..p.m()).collect();
    order.sort_by(|&a, &b| p.alpha[b].total_cmp(&p.alpha[a]));
    order
}

fn restart_seed_index(m: usize, r: usize) -> u64 {
    ((m as u64) << 32) | r as u64
}

/// Run EM from each start and keep the best run (converged runs first,
/// lowest index on ties). When `nested` is given, the embedding of that
/// (M-1)-component fit with component `dup` duplicated is a further candidate,
/// so the result never falls below the smaller model's log-likelihood.
pub(crate) fn fit_starts(
    data: &PanelDataset,
    spec: &ModelSpec,
    cfg: &EmConfig,
    starts: &[MixtureParams],
    sigma0_hat: f64,
    cells: Option<&Cells>,
    nested: Option<(&FitResult, usize)>,
) -> Result<FitResult> {
    let runs: Vec<Result<EmRun>> = starts
        .par_iter()
        .map(|s| run_em_cells(data, spec, s, cfg, sigma0_hat, cells))
        .collect();
    let restart_logliks: Vec<f64> = runs
        .iter()
        .map(|r| r.as_ref().map_or(f64::NEG_INFINITY, |r| r.loglik))
        .collect();
    let mut best: Option<&EmRun> = None;
    for run in runs.iter().flatten() {
        best = match best {
            None => Some(run),
            Some(b) => {
                let better = (run.converged && !b.converged) || (run.converged == b.converged && run.loglik > b.loglik);
                Some(if better { run } else { b })
            }
        };
    }
    let mut result = match best {
        Some(run) => {
            let mut params = run.params.clone();
            canonicalize_in_place(&mut params);
            FitResult {
                params,
                loglik: run.loglik,
                n_iter: run.n_iter,
                converged: run.converged,
                restart_logliks,
                sigma0_hat,
            }
        }
        None => {
            let err = runs.into_iter().find_map(|r| r.err()).expect("at least one start");
            if nested.is_none() {
                return Err(err);
            }
            FitResult {
                params: starts[0].clone(),
                loglik: f64::NEG_INFINITY,
                n_iter: 0,
                converged: false,
                restart_logliks,
                sigma0_hat,
            }
        }
    };
    if let Some((prev, dup)) = nested {
        if result.loglik < prev.loglik && prev.params.alpha[dup] / 2.0 >= cfg.constraints.c1 {
            let mut emb = split_component(&prev.params, dup, 0.0);
            canonicalize_in_place(&mut emb);
            let ll = log_likelihood_unchecked(data, &emb);
            if ll > result.loglik {
                result.params = emb;
                result.loglik = ll;
                result.converged = prev.converged;
                result.n_iter = 0;
            }
        }
    }
    Ok(result)
}

fn require_converged(fit: FitResult) -> Result<FitResult> {
    if fit.converged {
        Ok(fit)
    } else {
        Err(Error::NonConvergence { best_loglik: fit.loglik })
    }
}

/// Standard starts for an M-component fit: quantile spread, splits of each
/// component of the (M-1)-component fit (heaviest first), then jittered
/// quantile spreads.
pub(crate) fn standard_starts(
    data: &PanelDataset,
    m: usize,
    spec: &ModelSpec,
    cfg: &EmConfig,
    one: &ComponentParams,
    prev: Option<&FitResult>,
) -> Vec<MixtureParams> {
    let base = quantile_start(data, m, spec, one);
    let mut starts = vec![base.clone()];
    if let Some(p) = prev {
        for h in components_by_weight(&p.params) {
            let sd = p.params.components[h].sigma();
            starts.push(split_component(&p.params, h, 0.5 * sd));
        }
    }
    let mut r = starts.len();
    while starts.len() < cfg.n_restarts.max(1) {
        let mut rng = rng_for(cfg.seed, stream::RESTART, restart_seed_index(m, r));
        starts.push(jitter_start(&base, one.sigma(), &mut rng));
        r += 1;
    }
    starts.truncate(cfg.n_restarts.max(1));
    starts
}

fn check_inputs(data: &PanelDataset, m: usize, spec: &ModelSpec, cfg: &EmConfig) -> Result<()> {
    spec.validate()?;
    cfg.validate()?;
    if m == 0 {
        return Err(Error::InvalidParams("M must be at least 1".into()));
    }
    if data.q_x() != spec.q_x {
        return Err(Error::Dimension(format!("data has {} covariates, model expects {}", data.q_x(), spec.q_x)));
    }
    let k = spec.param_count(m);
    if data.n() <= k {
        return Err(Error::InvalidData(format!("{} units cannot identify {k} parameters", data.n())));
    }
    if m as f64 * cfg.constraints.c1 > 1.0 {
        return Err(Error::InfeasibleConstraints(format!(
            "{m} components cannot all carry at least {}",
            cfg.constraints.c1
        )));
    }
    Ok(())
}

/// Constrained MLE of the M-component model given the (M-1)-component fit
/// `prev` (used for the split start and the nestedness guard).
pub fn fit_mle_nested(
    data: &PanelDataset,
    m: usize,
    spec: &ModelSpec,
    cfg: &EmConfig,
    prev: Option<&FitResult>,
) -> Result<FitResult> {
    check_inputs(data, m, spec, cfg)?;
    let one = one_component_fit(data, spec)?;
    let sigma0 = one.sigma();
    let starts = standard_starts(data, m, spec, cfg, &one, prev);
    let nested = prev.map(|p| (p, largest_component(&p.params)));
    require_converged(fit_starts(data, spec, cfg, &starts, sigma0, None, nested)?)
}

/// Constrained MLE of the M-component model; smaller models are fitted first
/// to seed the split start.
pub fn fit_mle(data: &PanelDataset, m: usize, spec: &ModelSpec, cfg: &EmConfig) -> Result<FitResult> {
    let fits = fit_sequence(data, m, spec, cfg)?;
    Ok(fits.into_iter().last().expect("m >= 1"))
}

/// Fits for M = 1..=m_max, each seeded from the previous one.
pub fn fit_sequence(data: &PanelDataset, m_max: usize, spec: &ModelSpec, cfg: &EmConfig) -> Result<Vec<FitResult>> {
    check_inputs(data, m_max, spec, cfg)?;
    let mut fits: Vec<FitResult> = Vec::with_capacity(m_max);
    for m in 1..=m_max {
        let fit = fit_mle_nested(data, m, spec, cfg, fits.last()).map_err(|e| e.context(format!("M={m}")))?;
        fits.push(fit);
    }
    Ok(fits)
}

/// Midpoint cells for the M+1 components of a fit split at `h` (0-based).
pub(crate) fn split_cells(base: &MixtureParams, h: usize) -> Vec<(f64, f64)> {
    let locs: Vec<f64> = base.components.iter().map(|c| c.location()).collect();
    let m = locs.len();
    let mut cells: Vec<(f64, f64)> = (0..m)
        .map(|j| {
            let lo = if j == 0 { f64::NEG_INFINITY } else { 0.5 * (locs[j - 1] + locs[j]) };
            let hi = if j + 1 == m { f64::INFINITY } else { 0.5 * (locs[j] + locs[j + 1]) };
            (lo, hi)
        })
        .collect();
    cells.insert(h, cells[h]);
    cells
}

/// Local MLE of the (M+1)-component model with component means restricted
/// to the midpoint cells of `base`, components `h` and `h+1` sharing the
/// cell of base component `h` (1-based).
pub fn fit_local_mle(
    data: &PanelDataset,
    base: &FitResult,
    h: usize,
    spec: &ModelSpec,
    cfg: &EmConfig,
) -> Result<FitResult> {
    let m = base.m();
    if h == 0 || h > m {
        return Err(Error::InvalidParams(format!("split index {h} outside 1..={m}")));
    }
    check_inputs(data, m + 1, spec, cfg)?;
    let h0 = h - 1;
    let cells = split_cells(&base.params, h0);
    let sd = base.params.components[h0].sigma();
    let split = split_component(&base.params, h0, 0.5 * sd);
    let mut starts = vec![split.clone()];
    for r in 1..cfg.n_restarts {
        let mut rng = rng_for(cfg.seed, stream::RESTART, restart_seed_index(m + 1, 1000 + 100 * h + r));
        let mut s = split.clone();
        for c in &mut s.components[h0..h0 + 2] {
            c.shift_location(rng.random_range(-sd..sd));
        }
        starts.push(s);
    }
    let fit = fit_starts(data, spec, cfg, &starts, base.sigma0_hat, Some(&cells), Some((base, h0)))?;
    require_converged(fit)
}
