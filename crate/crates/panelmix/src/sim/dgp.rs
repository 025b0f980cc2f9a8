use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{dot, MixtureParams, ModelSpec, PanelDataset};
use crate::rng::{rng_for, stream, Rng};

/// Law of simulated covariates, drawn independently for every unit, period and column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "law")]
pub enum CovariateLaw {
    StandardNormal,
    Uniform { lo: f64, hi: f64 },
}

/// A data-generating process: a mixture model plus the panel shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpSpec {
    pub params: MixtureParams,
    pub spec: ModelSpec,
    pub n: usize,
    pub t: usize,
    #[serde(default)]
    pub covariate_law: Option<CovariateLaw>,
}

impl DgpSpec {
    pub fn new(params: MixtureParams, spec: ModelSpec, n: usize, t: usize) -> Self {
        DgpSpec { params, spec, n, t, covariate_law: None }
    }

    pub fn with_covariates(mut self, law: CovariateLaw) -> Self {
        self.covariate_law = Some(law);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        self.params.validate(&self.spec)?;
        if self.n == 0 || self.t < 2 {
            return Err(Error::InvalidParams(format!("panel shape {}x{} is too small", self.n, self.t)));
        }
        if self.spec.q_x > 0 && self.covariate_law.is_none() {
            return Err(Error::InvalidParams("model has covariates but no covariate law".into()));
        }
        if let Some(CovariateLaw::Uniform { lo, hi }) = self.covariate_law {
            if !(lo < hi) {
                return Err(Error::InvalidParams("empty uniform covariate range".into()));
            }
        }
        Ok(())
    }
}

fn categorical(rng: &mut Rng, p: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (j, &w) in p.iter().enumerate() {
        acc += w;
        if u < acc {
            return j;
        }
    }
    p.len() - 1
}

/// Draw a panel from `dgp`; identical seeds give identical panels.
pub fn simulate_panel(dgp: &DgpSpec, seed: u64) -> Result<PanelDataset> {
    simulate_panel_with_labels(dgp, seed).map(|(d, _)| d)
}

/// Draw a panel and return the latent component of every unit alongside it.
pub fn simulate_panel_with_labels(dgp: &DgpSpec, seed: u64) -> Result<(PanelDataset, Vec<usize>)> {
    dgp.validate()?;
    let mut rng = rng_for(seed, stream::SIMULATE, 0);
    let (n, t, q) = (dgp.n, dgp.t, dgp.spec.q_x);
    let mut y = vec![0.0; n * t];
    let mut x = vec![0.0; n * t * q];
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let xi = &mut x[i * t * q..(i + 1) * t * q];
        if let Some(law) = dgp.covariate_law {
            for v in xi.iter_mut() {
                *v = match law {
                    CovariateLaw::StandardNormal => rng.sample(StandardNormal),
                    CovariateLaw::Uniform { lo, hi } => rng.random_range(lo..hi),
                };
            }
        }
        let j = categorical(&mut rng, &dgp.params.alpha);
        labels.push(j);
        let th = &dgp.params.components[j];
        let yi = &mut y[i * t..(i + 1) * t];
        let xrow = |s: usize| &xi[s * q..(s + 1) * q];
        for s in 0..t {
            let c = categorical(&mut rng, &th.tau);
            let eps: f64 = rng.sample(StandardNormal);
            yi[s] = match (&th.ar1, s) {
                (Some(b), 0) => b.mu1[c] + dot(xrow(0), &b.beta1) + b.sigma2_1.sqrt() * eps,
                (Some(b), _) => {
                    th.mu[c] + b.rho * yi[s - 1] + dot(xrow(s), &th.beta) - b.rho * dot(xrow(s - 1), &th.beta)
                        + th.sigma() * eps
                }
                (None, _) => th.mu[c] + dot(xrow(s), &th.beta) + th.sigma() * eps,
            };
        }
    }
    let cov = (q > 0).then_some((q, x));
    Ok((PanelDataset::new(n, t, y, cov)?, labels))
}

/// Draw outcomes from `params` with the shape and covariates of `template`.
pub fn simulate_like(params: &MixtureParams, spec: &ModelSpec, template: &PanelDataset, seed: u64) -> Result<PanelDataset> {
    spec.validate()?;
    params.validate(spec)?;
    if template.q_x() != spec.q_x {
        return Err(Error::Dimension("template covariates do not match the model".into()));
    }
    let mut rng = rng_for(seed, stream::SIMULATE, 1);
    let (n, t, q) = (template.n(), template.t(), spec.q_x);
    let mut y = vec![0.0; n * t];
    for i in 0..n {
        let u = template.unit(i);
        let th = &params.components[categorical(&mut rng, &params.alpha)];
        let yi = &mut y[i * t..(i + 1) * t];
        for s in 0..t {
            let c = categorical(&mut rng, &th.tau);
            let eps: f64 = rng.sample(StandardNormal);
            let xb = |s: usize, b: &[f64]| if q > 0 { dot(u.x_at(s), b) } else { 0.0 };
            yi[s] = match (&th.ar1, s) {
                (Some(b), 0) => b.mu1[c] + xb(0, &b.beta1) + b.sigma2_1.sqrt() * eps,
                (Some(b), _) => th.mu[c] + b.rho * yi[s - 1] + xb(s, &th.beta) - b.rho * xb(s - 1, &th.beta) + th.sigma() * eps,
                (None, _) => th.mu[c] + xb(s, &th.beta) + th.sigma() * eps,
            };
        }
    }
    let cov = (q > 0).then(|| (q, template.x().to_vec()));
    PanelDataset::with_ids(n, t, y, cov, template.unit_ids().to_vec())
}
