use nalgebra::{DMatrix, DVector};

use super::posteriors::Posteriors;
use crate::error::{Error, Result};
use crate::model::{
    canonicalize_in_place, dot, enforce_in_place, Cells, ComponentParams, ConstraintSet, MixtureParams,
    ModelSpec, PanelDataset,
};
use crate::numeric::solve_spd;

/// Responsibility mass below which a component is declared degenerate.
pub const DEGENERATE_MASS: f64 = 1e-8;

/// One M-step: closed-form weighted updates, then constraint projection and
/// canonical ordering.
pub fn m_step(
    data: &PanelDataset,
    post: &Posteriors,
    current: &MixtureParams,
    spec: &ModelSpec,
    constraints: &ConstraintSet,
    sigma0_hat: f64,
) -> Result<MixtureParams> {
    current.validate(spec)?;
    if post.n != data.n() || post.m != current.m() || post.t != data.t() || post.k != spec.k() {
        return Err(Error::Dimension("posteriors do not match data and parameters".into()));
    }
    let mut next = m_step_raw(data, post, current)?;
    enforce_in_place(&mut next, constraints, sigma0_hat, None)?;
    canonicalize_in_place(&mut next);
    Ok(next)
}

/// Unconstrained weighted updates.
pub(crate) fn m_step_raw(data: &PanelDataset, post: &Posteriors, current: &MixtureParams) -> Result<MixtureParams> {
    let mass = post.mass();
    let n = data.n() as f64;
    let mut components = Vec::with_capacity(current.m());
    for (j, th) in current.components.iter().enumerate() {
        if mass[j] < DEGENERATE_MASS {
            return Err(Error::DegenerateComponent { component: j + 1, mass: mass[j] });
        }
        let next = if th.ar1.is_some() {
            update_dynamic(data, post, j, th, mass[j])
        } else {
            update_static(data, post, j, th, mass[j])
        };
        components.push(next);
    }
    let alpha = mass.iter().map(|w| w / n).collect();
    Ok(MixtureParams { alpha, components })
}

/// Weighted least squares `argmin_b Σ w (target - z'b)²` from accumulated
/// normal equations; keeps `fallback` if the system is singular.
fn wls(a: DMatrix<f64>, b: DVector<f64>, fallback: &[f64]) -> Vec<f64> {
    match solve_spd(&a, &b) {
        Some(s) if s.iter().all(|v| v.is_finite()) => s.as_slice().to_vec(),
        _ => fallback.to_vec(),
    }
}

fn inner_weights(post: &Posteriors, i: usize, j: usize) -> Option<&[f64]> {
    (post.k > 1).then(|| post.gamma_block(i, j))
}

fn update_tau(post: &Posteriors, j: usize, mass: f64, t_len: usize) -> Vec<f64> {
    let k = post.k;
    if k == 1 {
        return vec![1.0];
    }
    let mut tau = vec![0.0; k];
    for i in 0..post.n {
        let p = post.pi(i, j);
        let g = post.gamma_block(i, j);
        for s in 0..t_len {
            for c in 0..k {
                tau[c] += p * g[s * k + c];
            }
        }
    }
    for v in &mut tau {
        *v /= mass * t_len as f64;
    }
    tau
}

fn update_static(data: &PanelDataset, post: &Posteriors, j: usize, th: &ComponentParams, mass: f64) -> ComponentParams {
    let k = post.k;
    let t_len = data.t();
    let q = data.q_x();
    let tau = update_tau(post, j, mass, t_len);

    // Inner means given the current slopes.
    let mut sw = vec![0.0; k];
    let mut sy = vec![0.0; k];
    for i in 0..data.n() {
        let p = post.pi(i, j);
        let u = data.unit(i);
        let g = inner_weights(post, i, j);
        for s in 0..t_len {
            let r = if q > 0 { u.y[s] - dot(u.x_at(s), &th.beta) } else { u.y[s] };
            match g {
                None => {
                    sw[0] += p;
                    sy[0] += p * r;
                }
                Some(g) => {
                    for c in 0..k {
                        let w = p * g[s * k + c];
                        sw[c] += w;
                        sy[c] += w * r;
                    }
                }
            }
        }
    }
    let mu: Vec<f64> = (0..k)
        .map(|c| if sw[c] > 1e-300 { sy[c] / sw[c] } else { th.mu[c] })
        .collect();

    // Slopes given the new means.
    let beta = if q > 0 {
        let mut a = DMatrix::zeros(q, q);
        let mut b = DVector::zeros(q);
        for i in 0..data.n() {
            let p = post.pi(i, j);
            let u = data.unit(i);
            let g = inner_weights(post, i, j);
            for s in 0..t_len {
                let x = u.x_at(s);
                let m_bar = match g {
                    None => mu[0],
                    Some(g) => (0..k).map(|c| g[s * k + c] * mu[c]).sum(),
                };
                let target = u.y[s] - m_bar;
                for r in 0..q {
                    b[r] += p * x[r] * target;
                    for c in 0..=r {
                        a[(r, c)] += p * x[r] * x[c];
                    }
                }
            }
        }
        a.fill_upper_triangle_with_lower_triangle();
        wls(a, b, &th.beta)
    } else {
        Vec::new()
    };

    let mut ss = 0.0;
    for i in 0..data.n() {
        let p = post.pi(i, j);
        let u = data.unit(i);
        let g = inner_weights(post, i, j);
        for s in 0..t_len {
            let r = if q > 0 { u.y[s] - dot(u.x_at(s), &beta) } else { u.y[s] };
            match g {
                None => ss += p * (r - mu[0]) * (r - mu[0]),
                Some(g) => {
                    for c in 0..k {
                        let e = r - mu[c];
                        ss += p * g[s * k + c] * e * e;
                    }
                }
            }
        }
    }
    let sigma2 = ss / (mass * t_len as f64);
    ComponentParams { tau, mu, sigma2: if sigma2 > 0.0 { sigma2 } else { th.sigma2 }, beta, ar1: None }
}

fn update_dynamic(data: &PanelDataset, post: &Posteriors, j: usize, th: &ComponentParams, mass: f64) -> ComponentParams {
    let k = post.k;
    let t_len = data.t();
    let q = data.q_x();
    let init = th.ar1.as_ref().expect("dynamic component");
    let rho = init.rho;
    let beta_old = &th.beta;
    let tau = update_tau(post, j, mass, t_len);
    let gw = |g: Option<&[f64]>, s: usize, c: usize| g.map_or(1.0, |g| g[s * k + c]);

    // Means given the current persistence and slopes.
    let mut sw = vec![0.0; k];
    let mut sy = vec![0.0; k];
    let mut sw1 = vec![0.0; k];
    let mut sy1 = vec![0.0; k];
    for i in 0..data.n() {
        let p = post.pi(i, j);
        let u = data.unit(i);
        let g = inner_weights(post, i, j);
        let r0 = u.y[0] - dot(u.x_at(0), &init.beta1);
        for c in 0..k {
            let w = p * gw(g, 0, c);
            sw1[c] += w;
            sy1[c] += w * r0;
        }
        for s in 1..t_len {
            let mut r = u.y[s] - rho * u.y[s - 1];
            if q > 0 {
                r -= dot(u.x_at(s), beta_old) - rho * dot(u.x_at(s - 1), beta_old);
            }
            for c in 0..k {
                let w = p * gw(g, s, c);
                sw[c] += w;
                sy[c] += w * r;
            }
        }
    }
    let mu: Vec<f64> = (0..k)
        .map(|c| if sw[c] > 1e-300 { sy[c] / sw[c] } else { th.mu[c] })
        .collect();
    let mu1: Vec<f64> = (0..k)
        .map(|c| if sw1[c] > 1e-300 { sy1[c] / sw1[c] } else { init.mu1[c] })
        .collect();

    // Slopes: transition regressor x_t - rho x_{t-1}, initial regressor x_1.
    let (beta, beta1) = if q > 0 {
        let mut a = DMatrix::zeros(q, q);
        let mut b = DVector::zeros(q);
        let mut a1 = DMatrix::zeros(q, q);
        let mut b1 = DVector::zeros(q);
        let mut z = vec![0.0; q];
        for i in 0..data.n() {
            let p = post.pi(i, j);
            let u = data.unit(i);
            let g = inner_weights(post, i, j);
            let x0 = u.x_at(0);
            let m1: f64 = (0..k).map(|c| gw(g, 0, c) * mu1[c]).sum();
            let t0 = u.y[0] - m1;
            for r in 0..q {
                b1[r] += p * x0[r] * t0;
                for c in 0..=r {
                    a1[(r, c)] += p * x0[r] * x0[c];
                }
            }
            for s in 1..t_len {
                let (xt, xp) = (u.x_at(s), u.x_at(s - 1));
                for r in 0..q {
                    z[r] = xt[r] - rho * xp[r];
                }
                let m_bar: f64 = (0..k).map(|c| gw(g, s, c) * mu[c]).sum();
                let target = u.y[s] - rho * u.y[s - 1] - m_bar;
                for r in 0..q {
                    b[r] += p * z[r] * target;
                    for c in 0..=r {
                        a[(r, c)] += p * z[r] * z[c];
                    }
                }
            }
        }
        a.fill_upper_triangle_with_lower_triangle();
        a1.fill_upper_triangle_with_lower_triangle();
        (wls(a, b, beta_old), wls(a1, b1, &init.beta1))
    } else {
        (Vec::new(), Vec::new())
    };

    // Persistence given means and slopes.
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..data.n() {
        let p = post.pi(i, j);
        let u = data.unit(i);
        let g = inner_weights(post, i, j);
        for s in 1..t_len {
            let (xb, xpb) = if q > 0 { (dot(u.x_at(s), &beta), dot(u.x_at(s - 1), &beta)) } else { (0.0, 0.0) };
            let lag = u.y[s - 1] - xpb;
            let m_bar: f64 = (0..k).map(|c| gw(g, s, c) * mu[c]).sum();
            num += p * (u.y[s] - xb - m_bar) * lag;
            den += p * lag * lag;
        }
    }
    let rho_new = if den > 1e-300 { num / den } else { rho };

    let mut ss = 0.0;
    let mut ss1 = 0.0;
    for i in 0..data.n() {
        let p = post.pi(i, j);
        let u = data.unit(i);
        let g = inner_weights(post, i, j);
        let r0 = u.y[0] - dot(u.x_at(0), &beta1);
        for c in 0..k {
            let e = r0 - mu1[c];
            ss1 += p * gw(g, 0, c) * e * e;
        }
        for s in 1..t_len {
            let (xb, xpb) = if q > 0 { (dot(u.x_at(s), &beta), dot(u.x_at(s - 1), &beta)) } else { (0.0, 0.0) };
            let r = (u.y[s] - xb) - rho_new * (u.y[s - 1] - xpb);
            for c in 0..k {
                let e = r - mu[c];
                ss += p * gw(g, s, c) * e * e;
            }
        }
    }
    let sigma2 = ss / (mass * (t_len - 1) as f64);
    let sigma2_1 = ss1 / mass;
    ComponentParams {
        tau,
        mu,
        sigma2: if sigma2 > 0.0 { sigma2 } else { th.sigma2 },
        beta: beta.clone(),
        ar1: Some(crate::model::InitialBlock {
            rho: rho_new,
            mu1,
            sigma2_1: if sigma2_1 > 0.0 { sigma2_1 } else { init.sigma2_1 },
            beta1,
        }),
    }
}

/// Apply constraints (optionally with per-component location cells) and
/// canonical ordering; reports whether a bound was active.
pub(crate) fn project(
    params: &mut MixtureParams,
    constraints: &ConstraintSet,
    sigma0_hat: f64,
    cells: Option<&Cells>,
) -> Result<bool> {
    let moved = enforce_in_place(params, constraints, sigma0_hat, cells)?;
    // Split-restricted fits keep components aligned with their cells, so the
    // cells themselves fix the ordering.
    if cells.is_none() {
        canonicalize_in_place(params);
    } else {
        for c in &mut params.components {
            let single = MixtureParams { alpha: vec![1.0], components: vec![c.clone()] };
            let mut s = single;
            canonicalize_in_place(&mut s);
            *c = s.components.pop().expect("one component");
        }
    }
    Ok(moved)
}
