use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::FitResult;
use crate::model::derivatives::{unit_derivs, DerivWorkspace, Layout};
use crate::model::{ErrorFamily, ModelSpec, PanelDataset};
use crate::numeric::log_sum_exp;

/// Hermite polynomial `H^b(t)` for `b` in 1..=4.
pub fn hermite(b: u32, t: f64) -> Result<f64> {
    let t2 = t * t;
    match b {
        1 => Ok(t),
        2 => Ok(t2 - 1.0),
        3 => Ok(t2 * t - 3.0 * t),
        4 => Ok(t2 * t2 - 6.0 * t2 + 3.0),
        _ => Err(Error::InvalidParams(format!("Hermite order {b} outside 1..=4"))),
    }
}

/// Number of unique elements of a symmetric `q × q` matrix.
pub fn vech_len(q: usize) -> usize {
    q * (q + 1) / 2
}

/// Unique products `λ_i λ_j` (i ≥ j) ordered `(λ1², λ2λ1, λ2², λ3λ1, …, λq²)`.
pub fn v_map(lambda: &[f64]) -> Vec<f64> {
    let q = lambda.len();
    let mut out = Vec::with_capacity(vech_len(q));
    for i in 0..q {
        for j in 0..=i {
            out.push(lambda[i] * lambda[j]);
        }
    }
    out
}

/// Per-unit scores of a null-model fit.
///
/// `s_eta` holds the identified directions: `M0-1` mixing-proportion scores
/// `(f_j - f_{M0})/g` followed by `w_j ∇f_j/f_j` for every component, where
/// `w_j = α_j f_j / g`. `s_lambda[h]` holds `w_h` times the unique elements of
/// `∇²f_h/f_h` in [`v_map`] order, diagonal terms halved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreBundle {
    pub n: usize,
    pub m0: usize,
    /// Free parameters per component.
    pub q: usize,
    pub splits: Vec<usize>,
    pub s_eta: DMatrix<f64>,
    pub s_lambda: Vec<DMatrix<f64>>,
    pub parameter_names: Vec<String>,
}

impl ScoreBundle {
    pub fn d_eta(&self) -> usize {
        self.s_eta.ncols()
    }

    pub fn d_lambda(&self) -> usize {
        vech_len(self.q)
    }
}

fn check_supported(spec: &ModelSpec) -> Result<()> {
    if let ErrorFamily::NormalMixture { k } = spec.error_family {
        if k > 2 {
            return Err(Error::Unsupported(format!(
                "scores for inner mixtures with K={k} > 2; use bootstrap critical values"
            )));
        }
    }
    Ok(())
}

/// Splits to score: all components when `split` is `None`, else the given one (1-based).
fn resolve_splits(m0: usize, split: Option<usize>) -> Result<Vec<usize>> {
    match split {
        None => Ok((0..m0).collect()),
        Some(h) if h >= 1 && h <= m0 => Ok(vec![h - 1]),
        Some(h) => Err(Error::InvalidParams(format!("split {h} outside 1..={m0}"))),
    }
}

struct UnitScores {
    eta: Vec<f64>,
    /// Per split: posterior weight times `∇²f_h/f_h` (full matrix, row-major).
    second: Vec<Vec<f64>>,
}

fn unit_scores(
    ws: &mut DerivWorkspace,
    fit: &FitResult,
    u: &crate::model::Unit<'_>,
    splits: &[usize],
    l: &Layout,
) -> UnitScores {
    let p = &fit.params;
    let m0 = p.m();
    let mut logs = Vec::with_capacity(m0);
    let mut derivs = Vec::with_capacity(m0);
    for (j, c) in p.components.iter().enumerate() {
        let want = splits.contains(&j);
        let d = unit_derivs(ws, c, u, want);
        logs.push(p.alpha[j].ln() + d.log_f);
        derivs.push(d);
    }
    let lg = log_sum_exp(&logs);
    let w: Vec<f64> = logs.iter().map(|v| (v - lg).exp()).collect();
    let mut eta = Vec::with_capacity(m0 - 1 + m0 * l.dim);
    for j in 0..m0.saturating_sub(1) {
        eta.push(w[j] / p.alpha[j] - w[m0 - 1] / p.alpha[m0 - 1]);
    }
    for j in 0..m0 {
        eta.extend(derivs[j].grad.iter().map(|g| w[j] * g));
    }
    let second = splits
        .iter()
        .map(|&h| derivs[h].hess.iter().map(|v| w[h] * v).collect())
        .collect();
    UnitScores { eta, second }
}

fn vech_weighted(full: &[f64], q: usize, halve_diag: bool) -> impl Iterator<Item = f64> + '_ {
    (0..q).flat_map(move |i| {
        (0..=i).map(move |j| {
            let v = full[i * q + j];
            if i == j && halve_diag {
                0.5 * v
            } else {
                v
            }
        })
    })
}

fn assemble(
    data: &PanelDataset,
    fit: &FitResult,
    spec: &ModelSpec,
    split: Option<usize>,
    halve_diag: bool,
) -> Result<(DMatrix<f64>, Vec<DMatrix<f64>>, Vec<usize>, Layout)> {
    check_supported(spec)?;
    fit.params.validate(spec)?;
    if data.q_x() != spec.q_x {
        return Err(Error::Dimension("data and model covariates differ".into()));
    }
    let m0 = fit.m();
    let splits = resolve_splits(m0, split)?;
    let l = Layout::new(spec);
    let q = l.dim;
    let dl = vech_len(q);
    let n = data.n();
    let d_eta = m0 - 1 + m0 * q;
    let mut s_eta = DMatrix::zeros(n, d_eta);
    let mut s_lambda: Vec<DMatrix<f64>> = splits.iter().map(|_| DMatrix::zeros(n, dl)).collect();
    let mut ws = DerivWorkspace::new(l);
    for i in 0..n {
        let u = data.unit(i);
        let us = unit_scores(&mut ws, fit, &u, &splits, &l);
        for (c, v) in us.eta.iter().enumerate() {
            s_eta[(i, c)] = *v;
        }
        for (hidx, full) in us.second.iter().enumerate() {
            for (c, v) in vech_weighted(full, q, halve_diag).enumerate() {
                s_lambda[hidx][(i, c)] = v;
            }
        }
    }
    Ok((s_eta, s_lambda, splits, l))
}

/// Score vectors of the null fit for the splits `h = 1..=M0` (or only `split`).
pub fn score_vector(data: &PanelDataset, fit: &FitResult, spec: &ModelSpec, split: Option<usize>) -> Result<ScoreBundle> {
    let (s_eta, s_lambda, splits, l) = assemble(data, fit, spec, split, true)?;
    Ok(ScoreBundle {
        n: data.n(),
        m0: fit.m(),
        q: l.dim,
        splits: splits.iter().map(|h| h + 1).collect(),
        s_eta,
        s_lambda,
        parameter_names: l.labels(),
    })
}

/// Unique elements of `w_h ∇²f_h/f_h` without the diagonal halving, one
/// matrix per split, in [`v_map`] order.
pub fn second_derivative_ratios(
    data: &PanelDataset,
    fit: &FitResult,
    spec: &ModelSpec,
    split: Option<usize>,
) -> Result<Vec<DMatrix<f64>>> {
    assemble(data, fit, spec, split, false).map(|(_, s, _, _)| s)
}
