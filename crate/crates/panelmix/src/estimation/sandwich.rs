use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::em::FitResult;
use crate::error::{Error, Result};
use crate::model::derivatives::{unit_derivs, DerivWorkspace, Layout};
use crate::model::{MixtureParams, ModelSpec, PanelDataset};
use crate::numeric::sym_eigen;

/// Free-parameter vector of a mixture: `alpha_1..alpha_{M-1}` followed by
/// each component's block (see [`free_parameter_names`]).
pub fn to_free_vec(params: &MixtureParams, spec: &ModelSpec) -> Vec<f64> {
    let l = Layout::new(spec);
    let mut v: Vec<f64> = params.alpha[..params.m() - 1].to_vec();
    for c in &params.components {
        v.extend(l.to_vec(c));
    }
    v
}

pub fn from_free_vec(v: &[f64], m: usize, spec: &ModelSpec) -> MixtureParams {
    let l = Layout::new(spec);
    let mut alpha = v[..m - 1].to_vec();
    alpha.push(1.0 - alpha.iter().sum::<f64>());
    let components = (0..m)
        .map(|j| {
            let s = m - 1 + j * l.dim;
            l.from_vec(&v[s..s + l.dim])
        })
        .collect();
    MixtureParams { alpha, components }
}

/// Names of the free parameters in [`to_free_vec`] order. Within a component
/// the order is inner weights, inner means, variance, slopes and, for dynamic
/// models, persistence followed by the initial-period means, variance and slopes.
pub fn free_parameter_names(m: usize, spec: &ModelSpec) -> Vec<String> {
    let l = Layout::new(spec);
    let mut out: Vec<String> = (1..m).map(|j| format!("alpha{j}")).collect();
    for j in 1..=m {
        out.extend(l.labels().into_iter().map(|s| format!("{s}[{j}]")));
    }
    out
}

/// Per-unit gradients of the mixture log density, `n × p` row-major.
pub fn unit_gradients(data: &PanelDataset, params: &MixtureParams, spec: &ModelSpec) -> Result<Vec<Vec<f64>>> {
    params.validate(spec)?;
    let l = Layout::new(spec);
    let m = params.m();
    let mut ws = DerivWorkspace::new(l);
    let mut out = Vec::with_capacity(data.n());
    let mut logs = vec![0.0; m];
    let mut grads: Vec<Vec<f64>> = vec![Vec::new(); m];
    for i in 0..data.n() {
        let u = data.unit(i);
        for (j, c) in params.components.iter().enumerate() {
            let d = unit_derivs(&mut ws, c, &u, false);
            logs[j] = params.alpha[j].ln() + d.log_f;
            grads[j] = d.grad;
        }
        let lg = crate::numeric::log_sum_exp(&logs);
        let w: Vec<f64> = logs.iter().map(|v| (v - lg).exp()).collect();
        let mut g = Vec::with_capacity(m - 1 + m * l.dim);
        for j in 0..m - 1 {
            g.push(w[j] / params.alpha[j] - w[m - 1] / params.alpha[m - 1]);
        }
        for j in 0..m {
            g.extend(grads[j].iter().map(|v| w[j] * v));
        }
        out.push(g);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardErrors {
    pub names: Vec<String>,
    pub estimates: Vec<f64>,
    pub se: Vec<f64>,
}

fn mean_gradient(data: &PanelDataset, v: &[f64], m: usize, spec: &ModelSpec) -> Result<Vec<f64>> {
    let p = from_free_vec(v, m, spec);
    let g = unit_gradients(data, &p, spec)?;
    let n = g.len() as f64;
    let mut out = vec![0.0; v.len()];
    for row in &g {
        for (o, x) in out.iter_mut().zip(row) {
            *o += x / n;
        }
    }
    Ok(out)
}

/// Sandwich standard errors `A^{-1} B A^{-1} / n` with `A` the average Hessian
/// (central differences of the analytic gradient) and `B` the average outer
/// product of per-unit gradients.
pub fn sandwich_se(data: &PanelDataset, fit: &FitResult, spec: &ModelSpec) -> Result<StandardErrors> {
    let m = fit.m();
    let theta = to_free_vec(&fit.params, spec);
    let p = theta.len();
    let n = data.n() as f64;
    let names = free_parameter_names(m, spec);

    let g = unit_gradients(data, &fit.params, spec)?;
    let mut b = DMatrix::zeros(p, p);
    for row in &g {
        for r in 0..p {
            for c in 0..p {
                b[(r, c)] += row[r] * row[c] / n;
            }
        }
    }

    let mut a = DMatrix::zeros(p, p);
    for c in 0..p {
        let h = 1e-5 * theta[c].abs().max(1.0);
        let mut up = theta.clone();
        up[c] += h;
        let mut dn = theta.clone();
        dn[c] -= h;
        let gu = mean_gradient(data, &up, m, spec)?;
        let gd = mean_gradient(data, &dn, m, spec)?;
        for r in 0..p {
            a[(r, c)] = (gu[r] - gd[r]) / (2.0 * h);
        }
    }
    let a = (&a + a.transpose()) * 0.5;

    let (vals, vecs) = sym_eigen(&a);
    let top = vals.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let mut flat = Vec::new();
    for (idx, l) in vals.iter().enumerate() {
        if l.abs() <= 1e-10 * top {
            let v = vecs.column(idx);
            let mut order: Vec<usize> = (0..p).collect();
            order.sort_by(|&x, &y| v[y].abs().total_cmp(&v[x].abs()));
            let dir: Vec<String> = order.iter().take(3).map(|&i| names[i].clone()).collect();
            flat.push(format!("[{}]", dir.join(", ")));
        }
    }
    if !flat.is_empty() {
        return Err(Error::Singular(format!("Hessian is flat along {}", flat.join("; "))));
    }
    let ainv = a
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("Hessian is not invertible".into()))?;
    let v = &ainv * &b * &ainv / n;
    let se = (0..p).map(|i| v[(i, i)].max(0.0).sqrt()).collect();
    Ok(StandardErrors { names, estimates: theta, se })
}
