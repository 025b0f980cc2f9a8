//! Projection of a Gaussian draw onto the cone `{v(λ) : λ ∈ R^q}` in the
//! metric of an information matrix.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;

use super::scores::v_map;
use crate::error::{Error, Result};
use crate::numeric::sym_eigen;
use crate::rng::{rng_for, stream};

const N_STARTS: usize = 20;
const GRAD_TOL: f64 = 1e-9;
const MAX_ITER: usize = 500;

/// Result of a cone projection.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeProjection {
    pub lambda: Vec<f64>,
    pub t_hat: Vec<f64>,
    /// `t̂' I t̂`.
    pub stat: f64,
    /// `(t̂ - G)' I (t̂ - G)`.
    pub residual: f64,
}

/// Dimension `q` with `q(q+1)/2 == d`.
pub fn cone_dim(d: usize) -> Result<usize> {
    let q = (((8 * d + 1) as f64).sqrt() as usize - 1) / 2;
    if q * (q + 1) / 2 == d && q > 0 {
        Ok(q)
    } else {
        Err(Error::Dimension(format!("{d} is not a triangular number")))
    }
}

struct Objective<'a> {
    g: &'a [f64],
    info: &'a DMatrix<f64>,
    q: usize,
    diff: Vec<f64>,
    idiff: Vec<f64>,
}

impl<'a> Objective<'a> {
    /// `r(λ)` and its gradient `2 J' I (v(λ) - G)`.
    fn eval(&mut self, lambda: &[f64], grad: &mut [f64]) -> f64 {
        let d = self.g.len();
        let mut idx = 0;
        for i in 0..self.q {
            for j in 0..=i {
                self.diff[idx] = lambda[i] * lambda[j] - self.g[idx];
                idx += 1;
            }
        }
        let mut r = 0.0;
        for a in 0..d {
            let mut s = 0.0;
            for b in 0..d {
                s += self.info[(a, b)] * self.diff[b];
            }
            self.idiff[a] = s;
            r += self.diff[a] * s;
        }
        grad.fill(0.0);
        let mut idx = 0;
        for i in 0..self.q {
            for j in 0..=i {
                let w = 2.0 * self.idiff[idx];
                grad[i] += w * lambda[j];
                grad[j] += w * lambda[i];
                idx += 1;
            }
        }
        r
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// BFGS with Armijo backtracking; returns the final point and objective.
fn bfgs(obj: &mut Objective<'_>, start: &[f64]) -> (Vec<f64>, f64) {
    let q = start.len();
    let mut x = start.to_vec();
    let mut g = vec![0.0; q];
    let mut f = obj.eval(&x, &mut g);
    let mut h = DMatrix::<f64>::identity(q, q);
    let mut xn = vec![0.0; q];
    let mut gn = vec![0.0; q];
    for _ in 0..MAX_ITER {
        if norm(&g) < GRAD_TOL || !f.is_finite() {
            break;
        }
        let gv = DVector::from_column_slice(&g);
        let mut p: Vec<f64> = (-&h * &gv).iter().copied().collect();
        let mut slope: f64 = p.iter().zip(&g).map(|(a, b)| a * b).sum();
        if slope >= 0.0 {
            h = DMatrix::identity(q, q);
            p = g.iter().map(|v| -v).collect();
            slope = -g.iter().map(|v| v * v).sum::<f64>();
        }
        let mut step = 1.0;
        let mut fn_ = f;
        let mut accepted = false;
        for _ in 0..60 {
            for k in 0..q {
                xn[k] = x[k] + step * p[k];
            }
            fn_ = obj.eval(&xn, &mut gn);
            if fn_ <= f + 1e-4 * step * slope {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        let s: Vec<f64> = (0..q).map(|k| xn[k] - x[k]).collect();
        let yv: Vec<f64> = (0..q).map(|k| gn[k] - g[k]).collect();
        let sy: f64 = s.iter().zip(&yv).map(|(a, b)| a * b).sum();
        let progress = f - fn_;
        x.copy_from_slice(&xn);
        g.copy_from_slice(&gn);
        f = fn_;
        if sy > 1e-300 {
            let sv = DVector::from_column_slice(&s);
            let yvv = DVector::from_column_slice(&yv);
            let rho = 1.0 / sy;
            let id = DMatrix::<f64>::identity(q, q);
            let left = &id - &sv * yvv.transpose() * rho;
            let right = &id - &yvv * sv.transpose() * rho;
            h = &left * &h * &right + &sv * sv.transpose() * rho;
        }
        if progress <= 1e-16 * (1.0 + f.abs()) && norm(&g) < 1e-7 {
            break;
        }
    }
    (x, f)
}

/// Minimize `(v(λ) - G)' I (v(λ) - G)` over `λ` from 20 starts: zero, the
/// signed top eigenvector of the matricized `G`, and seeded random points.
pub fn cone_project(g: &[f64], info: &DMatrix<f64>) -> Result<ConeProjection> {
    let d = g.len();
    if info.nrows() != d || info.ncols() != d {
        return Err(Error::Dimension(format!("G has {d} entries, information is {}x{}", info.nrows(), info.ncols())));
    }
    let q = cone_dim(d)?;
    if q == 1 {
        let t = g[0].max(0.0);
        let i = info[(0, 0)];
        return Ok(ConeProjection {
            lambda: vec![t.sqrt()],
            t_hat: vec![t],
            stat: t * i * t,
            residual: (t - g[0]) * i * (t - g[0]),
        });
    }
    let mut gm = DMatrix::zeros(q, q);
    let mut idx = 0;
    for i in 0..q {
        for j in 0..=i {
            gm[(i, j)] = g[idx];
            gm[(j, i)] = g[idx];
            idx += 1;
        }
    }
    let (vals, vecs) = sym_eigen(&gm);
    let mut starts: Vec<Vec<f64>> = vec![vec![0.0; q]];
    for c in [q - 1, 0] {
        let scale = vals[c].abs().sqrt().max(1e-3);
        let e: Vec<f64> = vecs.column(c).iter().map(|v| v * scale).collect();
        starts.push(e.clone());
        starts.push(e.iter().map(|v| -v).collect());
    }
    let spread = g.iter().fold(0.0f64, |m, v| m.max(v.abs())).sqrt().max(0.1);
    let mut rng = rng_for(0, stream::CONE_STARTS, q as u64);
    while starts.len() < N_STARTS {
        starts.push((0..q).map(|_| spread * rng.sample::<f64, _>(StandardNormal)).collect());
    }

    let mut obj = Objective { g, info, q, diff: vec![0.0; d], idiff: vec![0.0; d] };
    let mut best: Option<(Vec<f64>, f64)> = None;
    for s in &starts {
        let (x, f) = bfgs(&mut obj, s);
        if f.is_finite() && best.as_ref().map_or(true, |(_, bf)| f < *bf) {
            best = Some((x, f));
        }
    }
    let (lambda, residual) = best.ok_or_else(|| Error::OptimizationFailure("cone projection failed from every start".into()))?;
    let t_hat = v_map(&lambda);
    let tv = DVector::from_column_slice(&t_hat);
    let stat = (tv.transpose() * info * &tv)[(0, 0)];
    Ok(ConeProjection { lambda, t_hat, stat, residual })
}
