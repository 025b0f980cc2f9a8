use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PanelDataset;
use crate::numeric::{quantile_sorted, weighted_quantile};

/// How the outcomes other than the held-out period are summarized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Construction {
    /// Unit mean over the other periods, cut into `r + 1` quantile bins:
    /// a square `(r+1) x (r+1)` matrix.
    #[default]
    Square,
    /// Joint cell of every other period: `(r+1) x (r+1)^(T-1)`.
    KhatriRao,
}

/// Cell assignments for one held-out period `k`.
///
/// Cells are 0-based: `row_cells[i]` is the bin of `y_{ik}`, `col_cells[i]`
/// the bin of the complementary summary of unit `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretizedPanel {
    /// Held-out period, 1-based.
    pub k: usize,
    pub r: usize,
    pub construction: Construction,
    pub row_cells: Vec<usize>,
    pub col_cells: Vec<usize>,
    pub n_cols: usize,
    /// Cut points of the pooled outcome distribution.
    pub cuts: Vec<f64>,
}

/// Cut points at the `j/(r+1)` quantiles, `j = 1..=r`.
fn quantile_cuts(values: &[f64], weights: Option<&[f64]>, r: usize) -> Vec<f64> {
    let bins = (r + 1) as f64;
    match weights {
        None => {
            let mut sorted = values.to_vec();
            sorted.sort_by(f64::total_cmp);
            (1..=r).map(|j| quantile_sorted(&sorted, j as f64 / bins)).collect()
        }
        Some(w) => (1..=r).map(|j| weighted_quantile(values, w, j as f64 / bins)).collect(),
    }
}

/// Bin of `v`: the number of cut points strictly below it, so ties at a cut
/// fall in the lower bin.
pub fn assign_cell(v: f64, cuts: &[f64]) -> usize {
    cuts.iter().filter(|&&c| v > c).count()
}

fn check_bins(cells: &[usize], bins: usize, what: &str) -> Result<()> {
    let mut counts = vec![0usize; bins];
    for &c in cells {
        counts[c] += 1;
    }
    if let Some(b) = counts.iter().position(|&c| c == 0) {
        return Err(Error::DegeneratePartition(format!("{what} bin {} of {bins} is empty", b + 1)));
    }
    Ok(())
}

fn check_weights(weights: Option<&[f64]>, n: usize) -> Result<()> {
    if let Some(w) = weights {
        if w.len() != n {
            return Err(Error::Dimension(format!("{} weights for {n} units", w.len())));
        }
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
            return Err(Error::InvalidParams("weights must be nonnegative with a positive sum".into()));
        }
    }
    Ok(())
}

/// Discretize the panel for held-out period `k` (1-based) and rank `r`.
///
/// The held-out outcome is binned at the quantiles of all pooled outcomes;
/// weights, when given, make those quantiles (and the complementary ones)
/// weighted.
pub fn build_partition(
    data: &PanelDataset,
    k: usize,
    r: usize,
    weights: Option<&[f64]>,
    construction: Construction,
) -> Result<DiscretizedPanel> {
    let (n, t) = (data.n(), data.t());
    if r == 0 {
        return Err(Error::InvalidParams("rank under test must be at least 1".into()));
    }
    if k == 0 || k > t {
        return Err(Error::InvalidParams(format!("period {k} outside 1..={t}")));
    }
    if t < 2 {
        return Err(Error::InvalidData("rank test needs at least two periods".into()));
    }
    if n < 5 * (r + 1) {
        return Err(Error::InvalidData(format!("{n} units are too few for {} cells", r + 1)));
    }
    check_weights(weights, n)?;
    let bins = r + 1;
    let y = data.y();
    let pooled_w: Option<Vec<f64>> = weights.map(|w| (0..n * t).map(|j| w[j / t]).collect());
    let cuts = quantile_cuts(y, pooled_w.as_deref(), r);
    let pooled_cells: Vec<usize> = y.iter().map(|&v| assign_cell(v, &cuts)).collect();
    let positive: Vec<usize> = match weights {
        Some(w) => pooled_cells.iter().enumerate().filter(|(j, _)| w[j / t] > 0.0).map(|(_, &c)| c).collect(),
        None => pooled_cells.clone(),
    };
    check_bins(&positive, bins, "outcome")?;

    let row_cells: Vec<usize> = (0..n).map(|i| pooled_cells[i * t + k - 1]).collect();
    let (col_cells, n_cols) = match construction {
        Construction::Square => {
            let summary: Vec<f64> = (0..n)
                .map(|i| {
                    let yi = data.y_unit(i);
                    (yi.iter().sum::<f64>() - yi[k - 1]) / (t - 1) as f64
                })
                .collect();
            let cc = quantile_cuts(&summary, weights, r);
            let cells: Vec<usize> = summary.iter().map(|&v| assign_cell(v, &cc)).collect();
            let used: Vec<usize> = match weights {
                Some(w) => cells.iter().zip(w).filter(|(_, &wi)| wi > 0.0).map(|(&c, _)| c).collect(),
                None => cells.clone(),
            };
            check_bins(&used, bins, "complementary")?;
            (cells, bins)
        }
        Construction::KhatriRao => {
            let cells = (0..n)
                .map(|i| {
                    (0..t)
                        .filter(|&s| s != k - 1)
                        .fold(0usize, |acc, s| acc * bins + pooled_cells[i * t + s])
                })
                .collect();
            (cells, bins.pow((t - 1) as u32))
        }
    };
    Ok(DiscretizedPanel { k, r, construction, row_cells, col_cells, n_cols, cuts })
}

/// `P̂_k`: the (weighted) share of units in each (row, column) cell.
pub fn estimate_pk(disc: &DiscretizedPanel, weights: Option<&[f64]>) -> Result<DMatrix<f64>> {
    let n = disc.row_cells.len();
    check_weights(weights, n)?;
    let mut p = DMatrix::zeros(disc.r + 1, disc.n_cols);
    let uniform = 1.0 / n as f64;
    let total: f64 = weights.map_or(1.0, |w| w.iter().sum());
    for i in 0..n {
        let w = weights.map_or(uniform, |w| w[i] / total);
        p[(disc.row_cells[i], disc.col_cells[i])] += w;
    }
    Ok(p)
}

/// Multinomial covariance `diag(vec P) - vec P vec P'` of `√n vec(P̂)`
/// (column-major vec).
pub fn multinomial_covariance(p: &DMatrix<f64>) -> DMatrix<f64> {
    let v = p.as_slice();
    let d = v.len();
    DMatrix::from_fn(d, d, |a, b| if a == b { v[a] - v[a] * v[a] } else { -v[a] * v[b] })
}
