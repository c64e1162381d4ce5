//! Panel and spatial-weights domain types plus the dense matrix utilities the
//! rest of the crate builds on.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows whose absolute sum falls below this while holding nonzero entries are
/// treated as degenerate by [`WeightsMatrix::row_standardize`].
const DEGENERATE_ROW_SUM: f64 = 1e-12;

/// Relative residual bound accepted from a reduced-form solve.
pub const SOLVE_RESIDUAL_TOL: f64 = 1e-10;

fn check_unit_ids(ids: &[String], n: usize) -> Result<()> {
    if ids.len() != n {
        return Err(Error::DimensionMismatch(format!("{} unit ids for {n} units", ids.len())));
    }
    let mut seen = HashSet::with_capacity(n);
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::InvalidInput(format!("duplicate unit id {id:?}")));
        }
    }
    Ok(())
}

/// A balanced panel: `N` units observed over `T` periods, one dependent
/// variable and `k` exogenous regressors per unit.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    unit_ids: Vec<String>,
    /// `N × T`, row `i` is unit `unit_ids[i]`.
    y: DMatrix<f64>,
    /// One `N × T` matrix per regressor.
    x: Vec<DMatrix<f64>>,
}

impl PanelDataset {
    pub fn new(unit_ids: Vec<String>, y: DMatrix<f64>, x: Vec<DMatrix<f64>>) -> Result<Self> {
        let (n, t) = y.shape();
        if n == 0 || t == 0 {
            return Err(Error::InvalidInput("panel needs at least one unit and one period".into()));
        }
        if x.is_empty() {
            return Err(Error::InvalidInput("panel needs at least one exogenous regressor".into()));
        }
        check_unit_ids(&unit_ids, n)?;
        for (r, xr) in x.iter().enumerate() {
            if xr.shape() != (n, t) {
                return Err(Error::DimensionMismatch(format!(
                    "regressor {} is {:?}, expected {:?}",
                    r + 1,
                    xr.shape(),
                    (n, t)
                )));
            }
        }
        for (i, id) in unit_ids.iter().enumerate() {
            let finite = y.row(i).iter().all(|v| v.is_finite())
                && x.iter().all(|xr| xr.row(i).iter().all(|v| v.is_finite()));
            if !finite {
                return Err(Error::InvalidInput(format!("non-finite value for unit {id}")));
            }
        }
        Ok(Self { unit_ids, y, x })
    }

    pub fn n_units(&self) -> usize {
        self.y.nrows()
    }

    pub fn n_periods(&self) -> usize {
        self.y.ncols()
    }

    pub fn n_exog(&self) -> usize {
        self.x.len()
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    /// Regressor `r` (zero-based) as an `N × T` matrix.
    pub fn x(&self, r: usize) -> &DMatrix<f64> {
        &self.x[r]
    }

    pub fn regressors(&self) -> &[DMatrix<f64>] {
        &self.x
    }

    /// Reorders units so that new unit `i` is old unit `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.n_units())?;
        let ids = perm.iter().map(|&p| self.unit_ids[p].clone()).collect();
        let y = self.y.select_rows(perm);
        let x = self.x.iter().map(|xr| xr.select_rows(perm)).collect();
        Self::new(ids, y, x)
    }

    /// Z-scores `y` and every regressor separately for each unit over time.
    /// Returns the scaled panel and the `(mean, sd)` pairs used, `y` first.
    /// Series with zero spread are only centered.
    pub fn standardized(&self) -> (Self, Vec<SeriesScaling>) {
        let mut scaling = Vec::with_capacity(self.n_units());
        let mut y = self.y.clone();
        let mut x = self.x.clone();
        for i in 0..self.n_units() {
            let mut unit = UnitScaling { y: zscore_row(&mut y, i), x: Vec::with_capacity(x.len()) };
            for xr in x.iter_mut() {
                unit.x.push(zscore_row(xr, i));
            }
            scaling.push(SeriesScaling { unit_id: self.unit_ids[i].clone(), scaling: unit });
        }
        let panel = Self { unit_ids: self.unit_ids.clone(), y, x };
        (panel, scaling)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitScaling {
    pub y: MeanSd,
    pub x: Vec<MeanSd>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesScaling {
    pub unit_id: String,
    #[serde(flatten)]
    pub scaling: UnitScaling,
}

fn zscore_row(m: &mut DMatrix<f64>, i: usize) -> MeanSd {
    let t = m.ncols() as f64;
    let mean = m.row(i).sum() / t;
    let var = m.row(i).iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t;
    let sd = var.sqrt();
    let div = if sd > 0.0 { sd } else { 1.0 };
    for v in m.row_mut(i).iter_mut() {
        *v = (*v - mean) / div;
    }
    MeanSd { mean, sd }
}

pub(crate) fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if perm.len() != n {
        return Err(Error::DimensionMismatch(format!("permutation of length {} for {n} units", perm.len())));
    }
    for &p in perm {
        if p >= n || std::mem::replace(&mut seen[p], true) {
            return Err(Error::InvalidInput("not a permutation".into()));
        }
    }
    Ok(())
}

/// An `N × N` spatial weights matrix with an exactly-zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightsMatrix {
    w: DMatrix<f64>,
    unit_ids: Vec<String>,
}

impl WeightsMatrix {
    pub fn new(w: DMatrix<f64>, unit_ids: Vec<String>) -> Result<Self> {
        if !w.is_square() {
            return Err(Error::DimensionMismatch(format!("weights matrix is {:?}", w.shape())));
        }
        check_unit_ids(&unit_ids, w.nrows())?;
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("weights matrix has non-finite entries".into()));
        }
        if let Some(i) = (0..w.nrows()).find(|&i| w[(i, i)] != 0.0) {
            return Err(Error::InvalidInput(format!("diagonal entry {i} of weights matrix is nonzero")));
        }
        Ok(Self { w, unit_ids })
    }

    /// Builds a matrix labelled `u1 … uN`, mostly for tests and examples.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::DimensionMismatch("rows of unequal length".into()));
        }
        let w = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        Self::new(w, default_unit_ids(n))
    }

    pub fn zeros(unit_ids: Vec<String>) -> Result<Self> {
        let n = unit_ids.len();
        Self::new(DMatrix::zeros(n, n), unit_ids)
    }

    pub fn n(&self) -> usize {
        self.w.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    /// Max over rows of the sum of absolute entries.
    pub fn infinity_norm(&self) -> f64 {
        self.w.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
    }

    /// Signed row sums; for an estimated matrix these play the role of a
    /// per-unit spatial autoregressive parameter.
    pub fn row_sums(&self) -> DVector<f64> {
        DVector::from_iterator(self.n(), self.w.row_iter().map(|r| r.sum()))
    }

    /// Divides every nonzero row by its signed sum. All-zero rows (isolated
    /// units) are left alone.
    pub fn row_standardize(&self) -> Result<Self> {
        let mut w = self.w.clone();
        for (i, mut row) in w.row_iter_mut().enumerate() {
            if row.iter().all(|&v| v == 0.0) {
                continue;
            }
            let sum = row.sum();
            if sum.abs() < DEGENERATE_ROW_SUM {
                return Err(Error::InvalidInput(format!("row {i} has nonzero entries summing to {sum:e}")));
            }
            row /= sum;
        }
        Self::new(w, self.unit_ids.clone())
    }

    /// Scales row `i` by `factors[i]`.
    pub fn scale_rows(&self, factors: &[f64]) -> Result<Self> {
        if factors.len() != self.n() {
            return Err(Error::DimensionMismatch(format!("{} row factors for {} rows", factors.len(), self.n())));
        }
        let mut w = self.w.clone();
        for (mut row, f) in w.row_iter_mut().zip(factors) {
            row *= *f;
        }
        Self::new(w, self.unit_ids.clone())
    }

    /// Rows and columns reordered so new unit `i` is old unit `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.n())?;
        let w = self.w.select_rows(perm).select_columns(perm);
        let ids = perm.iter().map(|&p| self.unit_ids[p].clone()).collect();
        Self::new(w, ids)
    }

    /// LU factorization of `I - W`, reusable across right-hand sides.
    pub fn reduced_form(&self) -> Result<ReducedForm> {
        ReducedForm::new(self)
    }
}

pub fn default_unit_ids(n: usize) -> Vec<String> {
    let width = n.to_string().len();
    (1..=n).map(|i| format!("u{i:0width$}")).collect()
}

/// Factorized `I - W` for repeated reduced-form solves.
pub struct ReducedForm {
    system: DMatrix<f64>,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl ReducedForm {
    fn new(w: &WeightsMatrix) -> Result<Self> {
        let norm = w.infinity_norm();
        if norm >= 1.0 {
            return Err(Error::NonStationary { norm });
        }
        let n = w.n();
        let system = DMatrix::identity(n, n) - &w.w;
        let lu = system.clone().lu();
        Ok(Self { system, lu })
    }

    /// Solves `(I - W) v = shock`.
    pub fn solve(&self, shock: &DVector<f64>) -> Result<DVector<f64>> {
        if shock.len() != self.system.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "shock of length {} for {} units",
                shock.len(),
                self.system.nrows()
            )));
        }
        let v = self.lu.solve(shock).ok_or_else(|| Error::Singular("LU solve of I - W failed".into()))?;
        let residual = (&self.system * &v - shock).amax();
        let scale = shock.amax();
        if !(residual <= SOLVE_RESIDUAL_TOL * scale) {
            return Err(Error::Singular(format!("residual {residual:e} against shock norm {scale:e}")));
        }
        Ok(v)
    }

    /// Solves `(I - W) X = B` column by column.
    pub fn solve_matrix(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(rhs.nrows(), rhs.ncols());
        for j in 0..rhs.ncols() {
            let col = self.solve(&rhs.column(j).into_owned())?;
            out.set_column(j, &col);
        }
        Ok(out)
    }
}

/// `v` with `(I - W) v = shock`, by a pivoted LU solve.
pub fn solve_reduced_form(w: &WeightsMatrix, shock: &DVector<f64>) -> Result<DVector<f64>> {
    w.reduced_form()?.solve(shock)
}

/// Per-unit coefficients `θ` (`N × k`) and noise variances `σ²`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSet {
    pub theta: DMatrix<f64>,
    pub sigma2: DVector<f64>,
}

impl CoefficientSet {
    pub fn new(theta: DMatrix<f64>, sigma2: DVector<f64>) -> Result<Self> {
        if theta.nrows() != sigma2.len() {
            return Err(Error::DimensionMismatch(format!(
                "theta has {} rows, sigma2 has {} entries",
                theta.nrows(),
                sigma2.len()
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite coefficient".into()));
        }
        if sigma2.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidInput("noise variances must be positive".into()));
        }
        Ok(Self { theta, sigma2 })
    }

    pub fn n_units(&self) -> usize {
        self.theta.nrows()
    }

    pub fn n_exog(&self) -> usize {
        self.theta.ncols()
    }

    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.n_units())?;
        Self::new(self.theta.select_rows(perm), self.sigma2.select_rows(perm))
    }
}
