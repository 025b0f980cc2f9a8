use super::data::{PanelDataset, Unit};
use super::params::{ComponentParams, MixtureParams};
use super::spec::ModelSpec;
use crate::error::{Error, Result};
use crate::numeric::{log_sum_exp, LN_2PI};

/// Component parameters with per-evaluation constants precomputed.
#[derive(Debug, Clone)]
pub(crate) struct Prepared<'a> {
    pub theta: &'a ComponentParams,
    pub log_tau: Vec<f64>,
    pub half_inv_s2: f64,
    pub log_norm: f64,
    pub initial: Option<PreparedInitial<'a>>,
}

#[derive(Debug, Clone)]
pub(crate) struct PreparedInitial<'a> {
    pub mu1: &'a [f64],
    pub beta1: &'a [f64],
    pub half_inv_s2: f64,
    pub log_norm: f64,
}

impl<'a> Prepared<'a> {
    pub fn new(theta: &'a ComponentParams) -> Self {
        let initial = theta.ar1.as_ref().map(|b| PreparedInitial {
            mu1: &b.mu1,
            beta1: &b.beta1,
            half_inv_s2: 0.5 / b.sigma2_1,
            log_norm: -0.5 * (LN_2PI + b.sigma2_1.ln()),
        });
        Prepared {
            theta,
            log_tau: theta.tau.iter().map(|t| t.ln()).collect(),
            half_inv_s2: 0.5 / theta.sigma2,
            log_norm: -0.5 * (LN_2PI + theta.sigma2.ln()),
            initial,
        }
    }

    /// Period-`s` outcome net of everything in the mean except the inner intercept.
    #[inline]
    pub fn base_residual(&self, u: &Unit<'_>, s: usize) -> f64 {
        let th = self.theta;
        match (&self.initial, s) {
            (Some(init), 0) => u.y[0] - dot(u.x_at(0), init.beta1),
            (Some(_), _) => {
                let rho = th.rho();
                let mut r = u.y[s] - rho * u.y[s - 1];
                if u.q_x > 0 {
                    r -= dot(u.x_at(s), &th.beta) - rho * dot(u.x_at(s - 1), &th.beta);
                }
                r
            }
            (None, _) => {
                if u.q_x > 0 {
                    u.y[s] - dot(u.x_at(s), &th.beta)
                } else {
                    u.y[s]
                }
            }
        }
    }

    /// Inner means, variance constants for period `s`.
    #[inline]
    pub fn period_block(&self, s: usize) -> (&[f64], f64, f64) {
        match (&self.initial, s) {
            (Some(init), 0) => (init.mu1, init.half_inv_s2, init.log_norm),
            _ => (&self.theta.mu, self.half_inv_s2, self.log_norm),
        }
    }

    /// log f(w; theta). When `gamma` is given (length T*K) it receives the
    /// inner-cell responsibilities of every period.
    pub fn log_density(&self, u: &Unit<'_>, mut gamma: Option<&mut [f64]>) -> f64 {
        let k = self.log_tau.len();
        let mut total = 0.0;
        if k == 1 {
            for s in 0..u.periods() {
                let (mu, h, ln) = self.period_block(s);
                let e = self.base_residual(u, s) - mu[0];
                total += ln - h * e * e;
            }
            if let Some(g) = gamma.as_deref_mut() {
                g.fill(1.0);
            }
            return total;
        }
        let mut terms = [0.0f64; 8];
        let mut heap;
        let buf: &mut [f64] = if k <= 8 {
            &mut terms[..k]
        } else {
            heap = vec![0.0; k];
            &mut heap
        };
        for s in 0..u.periods() {
            let (mu, h, ln) = self.period_block(s);
            let base = self.base_residual(u, s);
            for c in 0..k {
                let e = base - mu[c];
                buf[c] = self.log_tau[c] - h * e * e;
            }
            let lse = log_sum_exp(buf);
            total += ln + lse;
            if let Some(g) = gamma.as_deref_mut() {
                for c in 0..k {
                    g[s * k + c] = (buf[c] - lse).exp();
                }
            }
        }
        total
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_unit(u: &Unit<'_>, spec: &ModelSpec) -> Result<()> {
    if u.q_x != spec.q_x || u.x.len() != u.y.len() * u.q_x {
        return Err(Error::Dimension(format!(
            "unit has {} covariates, model expects {}",
            u.q_x, spec.q_x
        )));
    }
    if u.y.is_empty() || (spec.is_dynamic() && u.y.len() < 2) {
        return Err(Error::Dimension("unit has too few periods".into()));
    }
    Ok(())
}

fn check_data(data: &PanelDataset, spec: &ModelSpec) -> Result<()> {
    if data.q_x() != spec.q_x {
        return Err(Error::Dimension(format!(
            "data has {} covariates, model expects {}",
            data.q_x(),
            spec.q_x
        )));
    }
    Ok(())
}

/// log f(w; theta) for a single component.
pub fn component_log_density(u: &Unit<'_>, theta: &ComponentParams, spec: &ModelSpec) -> Result<f64> {
    check_unit(u, spec)?;
    theta.validate(spec)?;
    Ok(Prepared::new(theta).log_density(u, None))
}

/// log sum_j alpha_j f(w; theta_j).
pub fn mixture_log_density(u: &Unit<'_>, params: &MixtureParams, spec: &ModelSpec) -> Result<f64> {
    check_unit(u, spec)?;
    params.validate(spec)?;
    let prepared: Vec<_> = params.components.iter().map(Prepared::new).collect();
    Ok(mixture_log_density_prepared(u, &params.alpha, &prepared))
}

pub(crate) fn mixture_log_density_prepared(u: &Unit<'_>, alpha: &[f64], prepared: &[Prepared<'_>]) -> f64 {
    let terms: Vec<f64> = alpha
        .iter()
        .zip(prepared)
        .map(|(a, p)| a.ln() + p.log_density(u, None))
        .collect();
    log_sum_exp(&terms)
}

/// Sum over units of the mixture log density.
pub fn log_likelihood(data: &PanelDataset, params: &MixtureParams, spec: &ModelSpec) -> Result<f64> {
    check_data(data, spec)?;
    params.validate(spec)?;
    Ok(log_likelihood_unchecked(data, params))
}

pub(crate) fn log_likelihood_unchecked(data: &PanelDataset, params: &MixtureParams) -> f64 {
    let prepared: Vec<_> = params.components.iter().map(Prepared::new).collect();
    (0..data.n())
        .map(|i| mixture_log_density_prepared(&data.unit(i), &params.alpha, &prepared))
        .sum()
}
