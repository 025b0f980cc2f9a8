use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::cone::cone_project;
use super::info::InfoMatrix;
use crate::error::{Error, Result};
use crate::numeric::{empirical_quantile, psd_sqrt};
use crate::rng::{rng_for, stream};

const CHUNK: usize = 1000;

/// Draws of the limiting likelihood-ratio statistic: per draw, Gaussian
/// λ-scores with the joint residual covariance, the cone-projected statistic
/// of each split, and their maximum.
pub fn simulate_null_draws(info: &InfoMatrix, draws: usize, seed: u64) -> Result<Vec<f64>> {
    let d = info.d_lambda;
    let h_count = info.n_splits();
    let mut blocks = Vec::with_capacity(h_count);
    for idx in 0..h_count {
        let b = info.schur_block(idx);
        let inv = b.clone().cholesky().map(|c| c.inverse()).ok_or_else(|| {
            Error::Singular(format!("residual information of split {} is not positive definite", info.splits[idx]))
        })?;
        blocks.push((b, inv));
    }
    let root: DMatrix<f64> = match info.schur.clone().cholesky() {
        Some(c) => c.l(),
        None => psd_sqrt(&info.schur),
    };
    let dim = root.nrows();
    let n_chunks = draws.div_ceil(CHUNK);
    let chunks: Result<Vec<Vec<f64>>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng_for(seed, stream::CRITICAL_VALUE, c as u64);
            let len = CHUNK.min(draws - c * CHUNK);
            let mut out = Vec::with_capacity(len);
            for _ in 0..len {
                let z = DVector::from_iterator(dim, (0..dim).map(|_| StandardNormal.sample(&mut rng)));
                let s = &root * z;
                let mut best = 0.0f64;
                for (idx, (b, inv)) in blocks.iter().enumerate() {
                    let sh = s.rows(idx * d, d);
                    let g = inv * sh;
                    let p = cone_project(g.as_slice(), b)?;
                    best = best.max(p.stat);
                }
                out.push(best);
            }
            Ok(out)
        })
        .collect();
    Ok(chunks?.into_iter().flatten().collect())
}

/// Upper `level` quantile of the simulated limiting null law.
pub fn simulate_critical_value(info: &InfoMatrix, level: f64, draws: usize, seed: u64) -> Result<f64> {
    if !(level > 0.0 && level <= 1.0) {
        return Err(Error::InvalidParams(format!("level {level} outside (0, 1]")));
    }
    if draws < 1000 {
        return Err(Error::InvalidParams(format!("{draws} draws; at least 1000 required")));
    }
    if level >= 1.0 {
        return Ok(0.0);
    }
    let stats = simulate_null_draws(info, draws, seed)?;
    Ok(empirical_quantile(&stats, 1.0 - level))
}
