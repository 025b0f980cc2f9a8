use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::numeric::{psd_sqrt, sym_condition, sym_eigen};

/// Largest tolerated condition number of the covariance of `λ̂`.
pub const MAX_CONDITION: f64 = 1e12;

/// Orthonormal basis of the complement of the first `r` columns of `top`
/// (which are orthonormal), normalized as `Q Q22⁻¹ (Q22 Q22')^{1/2}` so the
/// result depends only on the subspace.
fn normalized_complement(top: &DMatrix<f64>, r: usize) -> Result<DMatrix<f64>> {
    let p = top.nrows();
    let d = p - r;
    let proj = DMatrix::<f64>::identity(p, p) - top * top.transpose();
    let (_, vecs) = sym_eigen(&proj);
    let q = vecs.columns(r, d).into_owned();
    let q22 = q.rows(r, d).into_owned();
    let inv = q22
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("lower block of the null-space basis is singular".into()))?;
    Ok(q * inv * psd_sqrt(&(&q22 * q22.transpose())))
}

/// `λ̂` and the transformation `K` with `vec λ̂ = K vec P̂`.
pub(crate) fn lambda_and_transform(p: &DMatrix<f64>, r: usize) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let (rows, cols) = p.shape();
    if r == 0 || r >= rows.min(cols) {
        return Err(Error::InvalidParams(format!("rank {r} outside 1..{}", rows.min(cols))));
    }
    let svd = p.clone().svd(true, true);
    let u = svd.u.as_ref().expect("left vectors requested");
    let vt = svd.v_t.as_ref().expect("right vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let u_top = DMatrix::from_fn(rows, r, |i, j| u[(i, order[j])]);
    let v_top = DMatrix::from_fn(cols, r, |i, j| vt[(order[j], i)]);
    let a = normalized_complement(&u_top, r)?;
    let b = normalized_complement(&v_top, r)?;
    let lambda = a.transpose() * p * &b;
    let k = b.transpose().kronecker(&a.transpose());
    Ok((lambda.as_slice().to_vec(), k))
}

/// Rank statistic `n λ̂' Ω̂⁻¹ λ̂` for `H0: rank(P) ≤ r` with
/// `Ω̂ = K Σ̂ K'`, where `Σ̂` is the covariance of `√n vec(P̂)`.
///
/// `λ̂` collects the singular-value directions beyond the first `r`,
/// normalized so that the statistic does not depend on the choice of basis.
pub fn rk_statistic(p: &DMatrix<f64>, sigma: &DMatrix<f64>, r: usize, n: usize) -> Result<(f64, Vec<f64>)> {
    let d = p.len();
    if sigma.shape() != (d, d) {
        return Err(Error::Dimension(format!("covariance is {:?}, expected {d}x{d}", sigma.shape())));
    }
    let (lambda, k) = lambda_and_transform(p, r)?;
    let omega = &k * sigma * k.transpose();
    let rk = quadratic_form(&omega, &lambda, &lambda)? * n as f64;
    Ok((rk, lambda))
}

/// `a' Ω⁻¹ b` after a conditioning check.
pub(crate) fn quadratic_form(omega: &DMatrix<f64>, a: &[f64], b: &[f64]) -> Result<f64> {
    let cond = sym_condition(omega);
    if !(cond <= MAX_CONDITION) {
        return Err(Error::IllConditioned(cond));
    }
    let sym = (omega + omega.transpose()) * 0.5;
    let lu = sym.lu();
    let x = lu
        .solve(&nalgebra::DVector::from_column_slice(b))
        .ok_or_else(|| Error::Singular("covariance of the rank statistic".into()))?;
    Ok(a.iter().zip(x.iter()).map(|(u, v)| u * v).sum())
}
