use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Balanced panel of `n` units observed over `t` periods.
///
/// Outcomes are stored row-major (`y[i * t + s]`); covariates as
/// `x[(i * t + s) * q_x + c]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelDataset {
    n: usize,
    t: usize,
    q_x: usize,
    y: Vec<f64>,
    x: Vec<f64>,
    unit_ids: Vec<String>,
}

/// One unit's observations.
#[derive(Debug, Clone, Copy)]
pub struct Unit<'a> {
    pub y: &'a [f64],
    /// `t × q_x` covariates, row-major; empty when there are none.
    pub x: &'a [f64],
    pub q_x: usize,
}

impl<'a> Unit<'a> {
    pub fn new(y: &'a [f64], x: &'a [f64], q_x: usize) -> Result<Self> {
        if x.len() != y.len() * q_x {
            return Err(Error::Dimension(format!(
                "covariate block has {} values, expected {}",
                x.len(),
                y.len() * q_x
            )));
        }
        Ok(Unit { y, x, q_x })
    }

    pub fn periods(&self) -> usize {
        self.y.len()
    }

    #[inline]
    pub fn x_at(&self, s: usize) -> &'a [f64] {
        &self.x[s * self.q_x..(s + 1) * self.q_x]
    }
}

impl PanelDataset {
    pub fn new(n: usize, t: usize, y: Vec<f64>, x: Option<(usize, Vec<f64>)>) -> Result<Self> {
        let ids = (0..n).map(|i| i.to_string()).collect();
        Self::with_ids(n, t, y, x, ids)
    }

    pub fn with_ids(
        n: usize,
        t: usize,
        y: Vec<f64>,
        x: Option<(usize, Vec<f64>)>,
        unit_ids: Vec<String>,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidData("panel has no units".into()));
        }
        if t < 2 {
            return Err(Error::InvalidData(format!("panel needs at least 2 periods, got {t}")));
        }
        if y.len() != n * t {
            return Err(Error::Dimension(format!("y has {} values, expected {}", y.len(), n * t)));
        }
        if unit_ids.len() != n {
            return Err(Error::Dimension(format!("{} unit ids for {} units", unit_ids.len(), n)));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite outcome".into()));
        }
        let (q_x, x) = x.unwrap_or((0, Vec::new()));
        if x.len() != n * t * q_x {
            return Err(Error::Dimension(format!(
                "x has {} values, expected {}",
                x.len(),
                n * t * q_x
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite covariate".into()));
        }
        Ok(PanelDataset { n, t, q_x, y, x, unit_ids })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn q_x(&self) -> usize {
        self.q_x
    }

    pub fn has_covariates(&self) -> bool {
        self.q_x > 0
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn y_unit(&self, i: usize) -> &[f64] {
        &self.y[i * self.t..(i + 1) * self.t]
    }

    pub fn unit(&self, i: usize) -> Unit<'_> {
        let q = self.q_x;
        Unit {
            y: self.y_unit(i),
            x: &self.x[i * self.t * q..(i + 1) * self.t * q],
            q_x: q,
        }
    }

    /// Dataset restricted to the given units, in the given order.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        let mut y = Vec::with_capacity(idx.len() * self.t);
        let mut x = Vec::with_capacity(idx.len() * self.t * self.q_x);
        let mut ids = Vec::with_capacity(idx.len());
        for &i in idx {
            if i >= self.n {
                return Err(Error::Dimension(format!("unit index {i} out of range")));
            }
            let u = self.unit(i);
            y.extend_from_slice(u.y);
            x.extend_from_slice(u.x);
            ids.push(self.unit_ids[i].clone());
        }
        let cov = (self.q_x > 0).then_some((self.q_x, x));
        Self::with_ids(idx.len(), self.t, y, cov, ids)
    }

    /// Mean outcome of each unit.
    pub fn unit_means(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.y_unit(i).iter().sum::<f64>() / self.t as f64)
            .collect()
    }
}
