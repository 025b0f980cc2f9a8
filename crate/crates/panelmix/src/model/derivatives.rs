//! Analytic first and second derivatives of a component density with
//! respect to its free parameters, expressed as ratios `∇f/f` and `∇²f/f`.
//!
//! Each period density is a normal mixture in its location and variance, so
//! per-period ratios are combinations of normalized Hermite terms. The unit
//! density is a product over periods, giving
//! `∇f/f = Σ_t d_t` and `∇²f/f = Σ_t D_t + (Σ_t d_t)(Σ_t d_t)' - Σ_t d_t d_t'`.

use super::data::Unit;
use super::density::{dot, Prepared};
use super::params::{ComponentParams, InitialBlock};
use super::spec::ModelSpec;

/// Positions of each parameter block in the component free-parameter vector
/// `[tau_1..tau_{K-1}, mu_1..mu_K, sigma2, beta, rho, mu1_1..mu1_K, sigma2_1, beta1]`
/// (the last four blocks only for dynamic models).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub k: usize,
    pub q: usize,
    pub dynamic: bool,
    pub tau: usize,
    pub mu: usize,
    pub s2: usize,
    pub beta: usize,
    pub rho: usize,
    pub mu1: usize,
    pub s2_1: usize,
    pub beta1: usize,
    pub dim: usize,
}

impl Layout {
    pub fn new(spec: &ModelSpec) -> Self {
        let k = spec.k();
        let q = spec.q_x;
        let tau = 0;
        let mu = k - 1;
        let s2 = mu + k;
        let beta = s2 + 1;
        let stat_end = beta + q;
        let dynamic = spec.is_dynamic();
        let (rho, mu1, s2_1, beta1, dim) = if dynamic {
            let rho = stat_end;
            let mu1 = rho + 1;
            let s2_1 = mu1 + k;
            let beta1 = s2_1 + 1;
            (rho, mu1, s2_1, beta1, beta1 + q)
        } else {
            (stat_end, stat_end, stat_end, stat_end, stat_end)
        };
        Layout { k, q, dynamic, tau, mu, s2, beta, rho, mu1, s2_1, beta1, dim }
    }

    pub fn to_vec(&self, th: &ComponentParams) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim);
        v.extend_from_slice(&th.tau[..self.k - 1]);
        v.extend_from_slice(&th.mu);
        v.push(th.sigma2);
        v.extend_from_slice(&th.beta);
        if let Some(b) = &th.ar1 {
            v.push(b.rho);
            v.extend_from_slice(&b.mu1);
            v.push(b.sigma2_1);
            v.extend_from_slice(&b.beta1);
        }
        v
    }

    pub fn from_vec(&self, v: &[f64]) -> ComponentParams {
        let k = self.k;
        let mut tau = v[self.tau..self.tau + k - 1].to_vec();
        tau.push(1.0 - tau.iter().sum::<f64>());
        let ar1 = self.dynamic.then(|| InitialBlock {
            rho: v[self.rho],
            mu1: v[self.mu1..self.mu1 + k].to_vec(),
            sigma2_1: v[self.s2_1],
            beta1: v[self.beta1..self.beta1 + self.q].to_vec(),
        });
        ComponentParams {
            tau,
            mu: v[self.mu..self.mu + k].to_vec(),
            sigma2: v[self.s2],
            beta: v[self.beta..self.beta + self.q].to_vec(),
            ar1,
        }
    }

    /// Short labels for each free parameter.
    pub fn labels(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.dim);
        for c in 0..self.k - 1 {
            out.push(format!("tau{}", c + 1));
        }
        for c in 0..self.k {
            out.push(if self.k == 1 { "mu".into() } else { format!("mu{}", c + 1) });
        }
        out.push("sigma2".into());
        for c in 0..self.q {
            out.push(format!("beta{}", c + 1));
        }
        if self.dynamic {
            out.push("rho".into());
            for c in 0..self.k {
                out.push(if self.k == 1 { "mu_init".into() } else { format!("mu_init{}", c + 1) });
            }
            out.push("sigma2_init".into());
            for c in 0..self.q {
                out.push(format!("beta_init{}", c + 1));
            }
        }
        out
    }
}

/// Derivative ratios of one component density at one unit.
#[derive(Debug, Clone)]
pub struct UnitDerivs {
    pub log_f: f64,
    /// `∇f/f`, length `dim`.
    pub grad: Vec<f64>,
    /// `∇²f/f`, row-major `dim × dim` (empty unless requested).
    pub hess: Vec<f64>,
}

/// Reusable buffers for [`unit_derivs`].
pub struct DerivWorkspace {
    layout: Layout,
    d: Vec<f64>,
    dd: Vec<f64>,
    cross: Vec<f64>,
    a: Vec<f64>,
    gam: Vec<f64>,
    h: Vec<[f64; 4]>,
}

impl DerivWorkspace {
    pub fn new(layout: Layout) -> Self {
        let dim = layout.dim;
        DerivWorkspace {
            layout,
            d: vec![0.0; dim],
            dd: vec![0.0; dim * dim],
            cross: vec![0.0; dim * dim],
            a: vec![0.0; layout.k * dim],
            gam: vec![0.0; layout.k],
            h: vec![[0.0; 4]; layout.k],
        }
    }
}

/// Compute `log f`, `∇f/f` and optionally `∇²f/f` for one component at one unit.
pub fn unit_derivs(
    ws: &mut DerivWorkspace,
    theta: &ComponentParams,
    u: &Unit<'_>,
    want_hess: bool,
) -> UnitDerivs {
    let prep = Prepared::new(theta);
    let l = ws.layout;
    let dim = l.dim;
    let k = l.k;
    let t_len = u.periods();
    let rho = theta.rho();

    let mut grad = vec![0.0; dim];
    let mut hess = if want_hess { vec![0.0; dim * dim] } else { Vec::new() };
    if want_hess {
        ws.cross.fill(0.0);
    }
    let mut log_f = 0.0;

    for s in 0..t_len {
        let initial = l.dynamic && s == 0;
        let (mus, _, log_norm) = prep.period_block(s);
        let (s2, v_idx, mu_idx) = if initial {
            (theta.ar1.as_ref().expect("dynamic").sigma2_1, l.s2_1, l.mu1)
        } else {
            (theta.sigma2, l.s2, l.mu)
        };
        let sd = s2.sqrt();
        let base = prep.base_residual(u, s);

        // Inner responsibilities and normalized Hermite terms.
        let mut mx = f64::NEG_INFINITY;
        for c in 0..k {
            let z = (base - mus[c]) / sd;
            let lg = prep.log_tau[c] - 0.5 * z * z;
            ws.gam[c] = lg;
            mx = mx.max(lg);
            let z2 = z * z;
            ws.h[c] = [z / sd, (z2 - 1.0) / s2, (z2 * z - 3.0 * z) / (s2 * sd), (z2 * z2 - 6.0 * z2 + 3.0) / (s2 * s2)];
        }
        let mut tot = 0.0;
        for c in 0..k {
            ws.gam[c] = (ws.gam[c] - mx).exp();
            tot += ws.gam[c];
        }
        for c in 0..k {
            ws.gam[c] /= tot;
        }
        log_f += log_norm + mx + tot.ln();

        // Location derivatives a[c][p] of the inner-c kernel mean.
        ws.a.fill(0.0);
        for c in 0..k {
            let row = &mut ws.a[c * dim..(c + 1) * dim];
            row[mu_idx + c] = 1.0;
            if l.q > 0 {
                if initial {
                    let x0 = u.x_at(0);
                    row[l.beta1..l.beta1 + l.q].copy_from_slice(x0);
                } else if l.dynamic {
                    let (xt, xp) = (u.x_at(s), u.x_at(s - 1));
                    for j in 0..l.q {
                        row[l.beta + j] = xt[j] - rho * xp[j];
                    }
                } else {
                    row[l.beta..l.beta + l.q].copy_from_slice(u.x_at(s));
                }
            }
            if l.dynamic && !initial {
                let mut lag = u.y[s - 1];
                if l.q > 0 {
                    lag -= dot(u.x_at(s - 1), &theta.beta);
                }
                row[l.rho] = lag;
            }
        }

        // First-order ratio d_p.
        ws.d.fill(0.0);
        for c in 0..k {
            let g = ws.gam[c];
            let [h1, h2, _, _] = ws.h[c];
            let row = &ws.a[c * dim..(c + 1) * dim];
            for p in 0..dim {
                if row[p] != 0.0 {
                    ws.d[p] += g * h1 * row[p];
                }
            }
            ws.d[v_idx] += g * 0.5 * h2;
        }
        let tk = theta.tau[k - 1];
        for c in 0..k.saturating_sub(1) {
            ws.d[l.tau + c] = ws.gam[c] / theta.tau[c] - ws.gam[k - 1] / tk;
        }
        for p in 0..dim {
            grad[p] += ws.d[p];
        }

        if !want_hess {
            continue;
        }

        // Second-order ratio D_pq; the tau rows need the per-kernel ratios.
        ws.dd.fill(0.0);
        let kernel_first = |c: usize, p: usize, a: &[f64], h: &[[f64; 4]]| -> f64 {
            let mut v = h[c][0] * a[c * dim + p];
            if p == v_idx {
                v += 0.5 * h[c][1];
            }
            v
        };
        for c in 0..k {
            let g = ws.gam[c];
            let [_, h2, h3, h4] = ws.h[c];
            let row = &ws.a[c * dim..(c + 1) * dim];
            for p in l.mu..dim {
                for q in p..dim {
                    let (ap, aq) = (row[p], row[q]);
                    let (vp, vq) = ((p == v_idx) as u8 as f64, (q == v_idx) as u8 as f64);
                    let mut val = h2 * ap * aq + 0.5 * h3 * (ap * vq + aq * vp) + 0.25 * h4 * vp * vq;
                    if val != 0.0 {
                        val *= g;
                        ws.dd[p * dim + q] += val;
                    }
                }
            }
        }
        // Mixed rho-beta term of the transition mean.
        if l.dynamic && !initial && l.q > 0 {
            let xp = u.x_at(s - 1);
            let mut s1 = 0.0;
            for c in 0..k {
                s1 += ws.gam[c] * ws.h[c][0];
            }
            for j in 0..l.q {
                let (p, q) = (l.beta + j, l.rho);
                let (p, q) = (p.min(q), p.max(q));
                ws.dd[p * dim + q] += -xp[j] * s1;
            }
        }
        for c in 0..k.saturating_sub(1) {
            let pc = l.tau + c;
            for q in l.mu..dim {
                let v = ws.gam[c] / theta.tau[c] * kernel_first(c, q, &ws.a, &ws.h)
                    - ws.gam[k - 1] / tk * kernel_first(k - 1, q, &ws.a, &ws.h);
                ws.dd[pc * dim + q] += v;
            }
        }
        for p in 0..dim {
            for q in p..dim {
                let v = ws.dd[p * dim + q];
                hess[p * dim + q] += v;
                ws.cross[p * dim + q] += ws.d[p] * ws.d[q];
            }
        }
    }

    if want_hess {
        for p in 0..dim {
            for q in p..dim {
                let v = hess[p * dim + q] + grad[p] * grad[q] - ws.cross[p * dim + q];
                hess[p * dim + q] = v;
                hess[q * dim + p] = v;
            }
        }
    }
    UnitDerivs { log_f, grad, hess }
}
