use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::scores::ScoreBundle;
use crate::error::{Error, Result};
use crate::numeric::{sym_eigen, sym_pinv};

/// Partitioned information matrix of a score bundle.
///
/// Rows and columns are ordered `[η, λ^1, …, λ^H]`; `schur` is the joint
/// covariance of the λ-scores after projecting out η, and its `h`-th
/// diagonal block is the information `I^h_{λ.η}` of split `h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfoMatrix {
    pub full: DMatrix<f64>,
    pub d_eta: usize,
    pub d_lambda: usize,
    pub splits: Vec<usize>,
    pub i_eta: DMatrix<f64>,
    pub i_eta_lambda: DMatrix<f64>,
    pub i_lambda: DMatrix<f64>,
    pub schur: DMatrix<f64>,
    /// Set when `I_η` was numerically singular and a pseudo-inverse was used.
    pub eta_singular: bool,
    pub warnings: Vec<String>,
}

impl InfoMatrix {
    /// Build the partition from a joint information matrix.
    pub fn from_joint(full: DMatrix<f64>, d_eta: usize, d_lambda: usize, splits: Vec<usize>) -> Result<Self> {
        let dim = full.nrows();
        if full.ncols() != dim || dim != d_eta + d_lambda * splits.len() || d_lambda == 0 {
            return Err(Error::Dimension(format!(
                "information of size {dim} does not match {d_eta} + {}x{d_lambda}",
                splits.len()
            )));
        }
        let full = (&full + full.transpose()) * 0.5;
        let dl = dim - d_eta;
        let i_eta = full.view((0, 0), (d_eta, d_eta)).into_owned();
        let i_eta_lambda = full.view((0, d_eta), (d_eta, dl)).into_owned();
        let i_lambda = full.view((d_eta, d_eta), (dl, dl)).into_owned();
        let mut warnings = Vec::new();
        let mut eta_singular = false;
        let schur = if d_eta == 0 {
            i_lambda.clone()
        } else {
            let (vals, _) = sym_eigen(&i_eta);
            let top = vals[d_eta - 1].abs();
            let low = vals[0];
            let inv = if low < 1e-10 * top {
                eta_singular = true;
                warnings.push(format!(
                    "identified-direction information is near singular (eigenvalues {low:e} .. {top:e}); using pseudo-inverse"
                ));
                sym_pinv(&i_eta, 1e-10)
            } else {
                i_eta
                    .clone()
                    .cholesky()
                    .map(|c| c.inverse())
                    .unwrap_or_else(|| sym_pinv(&i_eta, 1e-10))
            };
            let s = &i_lambda - i_eta_lambda.transpose() * inv * &i_eta_lambda;
            (&s + s.transpose()) * 0.5
        };
        Ok(InfoMatrix { full, d_eta, d_lambda, splits, i_eta, i_eta_lambda, i_lambda, schur, eta_singular, warnings })
    }

    /// `I^h_{λ.η}` for the `idx`-th scored split.
    pub fn schur_block(&self, idx: usize) -> DMatrix<f64> {
        let d = self.d_lambda;
        self.schur.view((idx * d, idx * d), (d, d)).into_owned()
    }

    pub fn n_splits(&self) -> usize {
        self.splits.len()
    }
}

/// `I = (1/n) Σ_i s_i s_i'` over the joint score vector, partitioned.
pub fn information_matrix(scores: &ScoreBundle) -> Result<InfoMatrix> {
    let n = scores.n;
    if n == 0 {
        return Err(Error::InvalidData("no scores".into()));
    }
    let d_eta = scores.d_eta();
    let dl = scores.d_lambda();
    let dim = d_eta + dl * scores.s_lambda.len();
    let mut joint = DMatrix::zeros(n, dim);
    joint.view_mut((0, 0), (n, d_eta)).copy_from(&scores.s_eta);
    for (h, s) in scores.s_lambda.iter().enumerate() {
        joint.view_mut((0, d_eta + h * dl), (n, dl)).copy_from(s);
    }
    let full = joint.transpose() * &joint / n as f64;
    let mut info = InfoMatrix::from_joint(full, d_eta, dl, scores.splits.clone())?;
    if n < dim {
        info.warnings.push(format!("{n} observations for {dim} score columns: information is rank deficient"));
    }
    Ok(info)
}
