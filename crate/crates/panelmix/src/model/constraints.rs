use std::cmp::Ordering;

use super::params::{ConstraintSet, MixtureParams, VarianceFloor};
use crate::error::{Error, Result};

/// Project `p` (a probability vector) onto `{p : p_i >= floor, sum p = 1}` by
/// pinning violators at the floor and rescaling the rest. Returns whether
/// anything moved. Vectors that already satisfy the floor are left untouched.
pub(crate) fn project_floor(p: &mut [f64], floor: f64) -> bool {
    let tol = floor * (1.0 - 1e-12);
    if p.len() < 2 || p.iter().all(|&v| v >= tol) {
        return false;
    }
    let mut fixed = vec![false; p.len()];
    loop {
        for (f, &v) in fixed.iter_mut().zip(p.iter()) {
            if v < tol {
                *f = true;
            }
        }
        let n_fixed = fixed.iter().filter(|&&f| f).count();
        let free_mass = 1.0 - n_fixed as f64 * floor;
        let free_sum: f64 = p.iter().zip(&fixed).filter(|(_, &f)| !f).map(|(v, _)| v).sum();
        for (v, &f) in p.iter_mut().zip(&fixed) {
            if f {
                *v = floor;
            } else {
                *v *= free_mass / free_sum;
            }
        }
        if p.iter().zip(&fixed).all(|(&v, &f)| f || v >= tol) {
            return true;
        }
    }
}

/// Clip every component into the constraint set. Returns the clipped
/// parameters; see [`enforce_in_place`] for the variant that also reports
/// whether a bound was active.
pub fn enforce_constraints(
    params: &MixtureParams,
    constraints: &ConstraintSet,
    sigma0_hat: f64,
) -> Result<MixtureParams> {
    let mut out = params.clone();
    enforce_in_place(&mut out, constraints, sigma0_hat, None)?;
    Ok(out)
}

/// Per-component location intervals used by split-restricted fits.
pub(crate) type Cells = [(f64, f64)];

pub(crate) fn enforce_in_place(
    params: &mut MixtureParams,
    constraints: &ConstraintSet,
    sigma0_hat: f64,
    cells: Option<&Cells>,
) -> Result<bool> {
    constraints.validate()?;
    let m = params.m();
    if m as f64 * constraints.c1 > 1.0 {
        return Err(Error::InfeasibleConstraints(format!(
            "{m} components cannot all carry at least {} of the mass",
            constraints.c1
        )));
    }
    if !(sigma0_hat > 0.0 && sigma0_hat.is_finite()) {
        return Err(Error::InvalidParams(format!("sigma0_hat must be positive, got {sigma0_hat}")));
    }
    let mut moved = project_floor(&mut params.alpha, constraints.c1);

    for c in &mut params.components {
        if c.tau.len() as f64 * constraints.tau_floor > 1.0 {
            return Err(Error::InfeasibleConstraints(format!(
                "{} inner cells cannot all carry at least {}",
                c.tau.len(),
                constraints.tau_floor
            )));
        }
        moved |= project_floor(&mut c.tau, constraints.tau_floor);
    }

    match constraints.variance_floor {
        VarianceFloor::OneComponentSd => {
            let floor = (constraints.sigma_floor_mult * sigma0_hat).powi(2);
            for c in &mut params.components {
                if c.sigma2 < floor {
                    c.sigma2 = floor;
                    moved = true;
                }
                if let Some(b) = &mut c.ar1 {
                    if b.sigma2_1 < floor {
                        b.sigma2_1 = floor;
                        moved = true;
                    }
                }
            }
        }
        VarianceFloor::RelativeToMixture { c2 } => {
            // The threshold depends on the variances being floored; iterate to
            // its fixed point, which exists because c2 < 1.
            for _ in 0..100 {
                let avg: f64 = params
                    .alpha
                    .iter()
                    .zip(&params.components)
                    .map(|(a, c)| a * c.sigma2)
                    .sum();
                let avg1: f64 = params
                    .alpha
                    .iter()
                    .zip(&params.components)
                    .map(|(a, c)| a * c.ar1.as_ref().map_or(0.0, |b| b.sigma2_1))
                    .sum();
                let mut changed = false;
                for c in &mut params.components {
                    if c.sigma2 < c2 * avg * (1.0 - 1e-12) {
                        c.sigma2 = c2 * avg;
                        changed = true;
                    }
                    if let Some(b) = &mut c.ar1 {
                        if b.sigma2_1 < c2 * avg1 * (1.0 - 1e-12) {
                            b.sigma2_1 = c2 * avg1;
                            changed = true;
                        }
                    }
                }
                moved |= changed;
                if !changed {
                    break;
                }
            }
        }
    }

    for (j, c) in params.components.iter_mut().enumerate() {
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        if let Some((a, b)) = constraints.mu_bounds {
            lo = lo.max(a);
            hi = hi.min(b);
        }
        if let Some(cells) = cells {
            lo = lo.max(cells[j].0);
            hi = hi.min(cells[j].1);
        }
        let loc = c.location();
        if loc < lo {
            c.shift_location(lo - loc);
            moved = true;
        } else if loc > hi {
            c.shift_location(hi - loc);
            moved = true;
        }
    }
    Ok(moved)
}

fn component_order(a: &super::params::ComponentParams, b: &super::params::ComponentParams) -> Ordering {
    a.location()
        .total_cmp(&b.location())
        .then(a.sigma2.total_cmp(&b.sigma2))
        .then_with(|| match (a.beta.first(), b.beta.first()) {
            (Some(x), Some(y)) => x.total_cmp(y),
            _ => Ordering::Equal,
        })
}

/// Sort inner cells by mean and components by location (ties broken by
/// variance, then the first slope).
pub fn canonicalize(params: &MixtureParams) -> MixtureParams {
    let mut out = params.clone();
    canonicalize_in_place(&mut out);
    out
}

pub(crate) fn canonicalize_in_place(params: &mut MixtureParams) {
    for c in &mut params.components {
        if c.mu.len() > 1 && c.mu.windows(2).any(|w| w[0] > w[1]) {
            let mut order: Vec<usize> = (0..c.mu.len()).collect();
            order.sort_by(|&a, &b| c.mu[a].total_cmp(&c.mu[b]));
            c.mu = order.iter().map(|&k| c.mu[k]).collect();
            c.tau = order.iter().map(|&k| c.tau[k]).collect();
            if let Some(b) = &mut c.ar1 {
                b.mu1 = order.iter().map(|&k| b.mu1[k]).collect();
            }
        }
    }
    let sorted = params
        .components
        .windows(2)
        .all(|w| component_order(&w[0], &w[1]) != Ordering::Greater);
    if !sorted {
        let mut order: Vec<usize> = (0..params.m()).collect();
        order.sort_by(|&a, &b| component_order(&params.components[a], &params.components[b]));
        params.alpha = order.iter().map(|&j| params.alpha[j]).collect();
        params.components = order.iter().map(|&j| params.components[j].clone()).collect();
    }
}
