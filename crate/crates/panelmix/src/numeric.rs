//! Small numerical helpers shared across modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// log(sum(exp(v))) without overflow; `-inf` for an empty or all `-inf` slice.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + v.iter().map(|&a| (a - m).exp()).sum::<f64>().ln()
}

/// Inverse empirical CDF of sorted data: smallest value whose rank reaches `p`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let n = sorted.len();
    let idx = ((p * n as f64).ceil() as usize).clamp(1, n);
    sorted[idx - 1]
}

/// Weighted inverse empirical CDF: smallest value whose cumulative weight reaches `p`.
pub fn weighted_quantile(values: &[f64], weights: &[f64], p: f64) -> f64 {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let total: f64 = weights.iter().sum();
    let target = p * total;
    let mut acc = 0.0;
    for &i in &order {
        acc += weights[i];
        // Relative slack keeps exact-arithmetic ties stable under rounding.
        if acc >= target - 1e-12 * total {
            return values[i];
        }
    }
    values[*order.last().expect("nonempty")]
}

/// Empirical upper quantile used for critical values: the `ceil(p*n)`-th order statistic.
pub fn empirical_quantile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, p)
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population variance (divisor n).
pub fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / v.len() as f64
}

/// Symmetric eigen decomposition with eigenvalues sorted ascending.
pub fn sym_eigen(a: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let n = a.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vecs = DMatrix::zeros(n, n);
    for (c, &i) in order.iter().enumerate() {
        vecs.set_column(c, &eig.eigenvectors.column(i));
    }
    (vals, vecs)
}

/// Moore-Penrose inverse of a symmetric matrix, dropping eigenvalues below
/// `rel_tol` times the largest magnitude.
pub fn sym_pinv(a: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let (vals, vecs) = sym_eigen(a);
    let top = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let n = a.nrows();
    let mut out = DMatrix::zeros(n, n);
    for c in 0..n {
        let l = vals[c];
        if l.abs() > rel_tol * top && l.abs() > 0.0 {
            let v = vecs.column(c);
            out += (&v * v.transpose()) / l;
        }
    }
    out
}

/// Symmetric square root of a PSD matrix; negative eigenvalues are truncated at 0.
pub fn psd_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    let (vals, vecs) = sym_eigen(a);
    let d = DMatrix::from_diagonal(&vals.map(|l| l.max(0.0).sqrt()));
    &vecs * d * vecs.transpose()
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn spd_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (a + a.transpose()) * 0.5;
    sym.cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::Singular("matrix is not positive definite".into()))
}

/// Condition number of a symmetric matrix from its eigenvalues.
pub fn sym_condition(a: &DMatrix<f64>) -> f64 {
    let (vals, _) = sym_eigen(a);
    let lo = vals.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    let hi = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Solve the small symmetric positive definite system `a x = b`.
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    a.clone().cholesky().map(|c| c.solve(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sum_exp_handles_extremes() {
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
        let v = log_sum_exp(&[-1000.0, -1000.0]);
        assert!((v - (-1000.0 + 2f64.ln())).abs() < 1e-12);
        assert!((log_sum_exp(&[0.0, -800.0]) - 0.0).abs() < 1e-300);
    }

    #[test]
    fn quantiles_follow_inverse_cdf() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.5), 2.0);
        assert_eq!(quantile_sorted(&v, 0.51), 3.0);
        assert_eq!(quantile_sorted(&v, 1.0), 4.0);
        assert_eq!(weighted_quantile(&[3.0, 1.0, 2.0, 4.0], &[1.0; 4], 0.5), 2.0);
        assert_eq!(weighted_quantile(&[1.0, 2.0], &[3.0, 1.0], 0.5), 1.0);
    }

    #[test]
    fn pinv_matches_inverse_when_regular() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let p = sym_pinv(&a, 1e-12);
        let id = &a * &p;
        assert!((id - DMatrix::identity(2, 2)).abs().max() < 1e-12);
        let s = psd_sqrt(&a);
        assert!((&s * &s - &a).abs().max() < 1e-12);
    }
}
