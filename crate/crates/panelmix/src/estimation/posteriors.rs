use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{MixtureParams, ModelSpec, PanelDataset, Prepared};
use crate::numeric::log_sum_exp;

/// Posterior responsibilities from an E-step.
///
/// `pi[i * m + j]` is the probability that unit `i` belongs to component `j`.
/// Inner-cell responsibilities are stored as `gamma[((i * m + j) * t + s) * k + c]`
/// and are only materialized when `k > 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Posteriors {
    pub n: usize,
    pub m: usize,
    pub t: usize,
    pub k: usize,
    pub pi: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl Posteriors {
    pub fn new(n: usize, m: usize, t: usize, k: usize) -> Self {
        let g = if k > 1 { n * m * t * k } else { 0 };
        Posteriors { n, m, t, k, pi: vec![0.0; n * m], gamma: vec![0.0; g] }
    }

    #[inline]
    pub fn pi(&self, i: usize, j: usize) -> f64 {
        self.pi[i * self.m + j]
    }

    #[inline]
    pub fn gamma(&self, i: usize, j: usize, s: usize, c: usize) -> f64 {
        if self.k == 1 {
            1.0
        } else {
            self.gamma[((i * self.m + j) * self.t + s) * self.k + c]
        }
    }

    pub(crate) fn gamma_block(&self, i: usize, j: usize) -> &[f64] {
        let len = self.t * self.k;
        let start = (i * self.m + j) * len;
        &self.gamma[start..start + len]
    }

    /// Column sums of `pi`.
    pub fn mass(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        for row in self.pi.chunks(self.m) {
            for (o, p) in out.iter_mut().zip(row) {
                *o += p;
            }
        }
        out
    }
}

/// Posterior responsibilities at `params`.
pub fn e_step(data: &PanelDataset, params: &MixtureParams, spec: &ModelSpec) -> Result<Posteriors> {
    params.validate(spec)?;
    let mut post = Posteriors::new(data.n(), params.m(), data.t(), spec.k());
    e_step_into(data, params, &mut post);
    Ok(post)
}

/// Fill `post` and return the log-likelihood at `params`.
pub(crate) fn e_step_into(data: &PanelDataset, params: &MixtureParams, post: &mut Posteriors) -> f64 {
    let m = params.m();
    let prepared: Vec<_> = params.components.iter().map(Prepared::new).collect();
    let log_alpha: Vec<f64> = params.alpha.iter().map(|a| a.ln()).collect();
    let mut terms = vec![0.0; m];
    let mut ll = 0.0;
    let tk = post.t * post.k;
    for i in 0..data.n() {
        let u = data.unit(i);
        for j in 0..m {
            let g = if post.k > 1 {
                let start = (i * m + j) * tk;
                Some(&mut post.gamma[start..start + tk])
            } else {
                None
            };
            terms[j] = log_alpha[j] + prepared[j].log_density(&u, g);
        }
        let lse = log_sum_exp(&terms);
        ll += lse;
        let row = &mut post.pi[i * m..(i + 1) * m];
        for j in 0..m {
            row[j] = (terms[j] - lse).exp();
        }
    }
    ll
}
