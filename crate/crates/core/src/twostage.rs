//! Two-stage estimation of the unrestricted panel SAR model
//! `y_t = W y_t + x_t θ + ε_t`.
//!
//! Stage 1 regresses every unit's outcome on the exogenous regressors of all
//! units and keeps the fitted values. Stage 2 regresses each unit's outcome on
//! the other units' stage-1 fits plus its own regressors; the coefficients on
//! the fits form one row of `Ŵ`. Equations within a stage are independent and
//! run on a bounded worker pool, with results written to fixed slots so the
//! output does not depend on scheduling.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dlreg::{self, vb_fit, DLPrior, RegressionProblem, VariationalState};
use crate::error::{Error, Result};
use crate::spatial::{CoefficientSet, PanelDataset, SeriesScaling, WeightsMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub n_workers: usize,
    /// Append an intercept column to both stages' designs.
    pub intercept: bool,
    /// Z-score `y` and each regressor per unit before estimating.
    pub standardize: bool,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            tol: dlreg::DEFAULT_TOL,
            max_iter: dlreg::DEFAULT_MAX_ITER,
            n_workers: 1,
            intercept: true,
            standardize: false,
        }
    }
}

impl PipelineOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iter == 0 || self.n_workers == 0 {
            return Err(Error::InvalidInput("tol, max_iter and n_workers must be positive".into()));
        }
        Ok(())
    }
}

/// Convergence record for one equation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquationDiagnostics {
    pub unit_id: String,
    pub n_iters: usize,
    pub converged: bool,
    pub r_squared: f64,
    pub elbo: f64,
}

impl EquationDiagnostics {
    fn new(unit_id: &str, state: &VariationalState, y: &DVector<f64>, fitted: &DVector<f64>) -> Self {
        Self {
            unit_id: unit_id.to_string(),
            n_iters: state.n_iters,
            converged: state.converged,
            r_squared: r_squared(y, fitted),
            elbo: state.final_elbo().unwrap_or(f64::NAN),
        }
    }
}

fn r_squared(y: &DVector<f64>, fitted: &DVector<f64>) -> f64 {
    let mean = y.mean();
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let ss_res = (y - fitted).norm_squared();
    if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else if ss_res == 0.0 {
        1.0
    } else {
        f64::NEG_INFINITY
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Output {
    /// `N × T` fitted values.
    pub y_hat: DMatrix<f64>,
    pub diagnostics: Vec<EquationDiagnostics>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageTimings {
    pub stage1_secs: f64,
    pub stage2_secs: f64,
}

/// Everything the configuration resolved to, echoed with every result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub prior: DLPrior,
    pub options: PipelineOptions,
    pub scaling: Option<Vec<SeriesScaling>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationResult {
    pub w_hat: WeightsMatrix,
    pub coefficients: CoefficientSet,
    pub intercepts: Option<DVector<f64>>,
    /// Signed row sums of `Ŵ`.
    pub row_spatial_sums: DVector<f64>,
    pub stage1_diagnostics: Vec<EquationDiagnostics>,
    pub stage2_diagnostics: Vec<EquationDiagnostics>,
    pub infinity_norm: f64,
    /// `‖Ŵ‖∞ ≥ 1`: effects matrices are not available for this estimate.
    pub stationarity_warning: bool,
    pub timings: StageTimings,
    pub config_echo: ConfigEcho,
}

/// Runs `f(i)` for `i in 0..n` on `n_workers` threads, keeping index order.
fn run_indexed<T, F>(n: usize, n_workers: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    let results: Vec<Result<T>> = if n_workers == 1 {
        (0..n).map(&f).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(n_workers)
            .build()
            .map_err(|e| Error::InvalidInput(format!("cannot start worker pool: {e}")))?;
        pool.install(|| (0..n).into_par_iter().map(&f).collect())
    };
    results.into_iter().collect()
}

fn with_unit(unit: &str) -> impl FnOnce(Error) -> Error + '_ {
    move |e| Error::Equation { unit: unit.to_string(), source: Box::new(e) }
}

/// `T × (N·k [+1])` design: unit-major blocks of each unit's `k` regressors,
/// then the optional intercept.
pub fn stage1_design(panel: &PanelDataset, intercept: bool) -> DMatrix<f64> {
    let (n, t, k) = (panel.n_units(), panel.n_periods(), panel.n_exog());
    let cols = n * k + usize::from(intercept);
    DMatrix::from_fn(t, cols, |tt, c| if c < n * k { panel.x(c % k)[(c / k, tt)] } else { 1.0 })
}

/// `T × (N−1 + k [+1])` design for unit `i`: the other units' stage-1 fits in
/// unit order, unit `i`'s own regressors, then the optional intercept.
pub fn stage2_design(panel: &PanelDataset, y_hat: &DMatrix<f64>, i: usize, intercept: bool) -> DMatrix<f64> {
    let (n, t, k) = (panel.n_units(), panel.n_periods(), panel.n_exog());
    let cols = n - 1 + k + usize::from(intercept);
    DMatrix::from_fn(t, cols, |tt, c| {
        if c < n - 1 {
            let j = if c < i { c } else { c + 1 };
            y_hat[(j, tt)]
        } else if c < n - 1 + k {
            panel.x(c - (n - 1))[(i, tt)]
        } else {
            1.0
        }
    })
}

fn unit_response(panel: &PanelDataset, i: usize) -> DVector<f64> {
    panel.y().row(i).transpose()
}

pub fn stage1_predict(panel: &PanelDataset, prior: &DLPrior, options: &PipelineOptions) -> Result<Stage1Output> {
    prior.validate()?;
    options.validate()?;
    if panel.n_periods() < 2 {
        return Err(Error::InvalidInput("estimation needs at least two periods".into()));
    }
    let design = stage1_design(panel, options.intercept);
    let fits = run_indexed(panel.n_units(), options.n_workers, |i| {
        let unit = &panel.unit_ids()[i];
        let y = unit_response(panel, i);
        let problem = RegressionProblem::new(y.clone(), design.clone()).map_err(with_unit(unit))?;
        let state = vb_fit(&problem, prior, options.tol, options.max_iter).map_err(with_unit(unit))?;
        let fitted = &design * &state.beta_mean;
        let diag = EquationDiagnostics::new(unit, &state, &y, &fitted);
        Ok((fitted, diag))
    })?;
    let (n, t) = (panel.n_units(), panel.n_periods());
    let mut y_hat = DMatrix::zeros(n, t);
    let mut diagnostics = Vec::with_capacity(n);
    for (i, (fitted, diag)) in fits.into_iter().enumerate() {
        y_hat.set_row(i, &fitted.transpose());
        diagnostics.push(diag);
    }
    Ok(Stage1Output { y_hat, diagnostics })
}

/// Stage-2 fit for one unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Equation {
    /// Row `i` of `Ŵ` with the zero diagonal in place.
    pub w_row: DVector<f64>,
    pub theta: DVector<f64>,
    pub intercept: Option<f64>,
    pub sigma2: f64,
    pub diagnostics: EquationDiagnostics,
}

pub fn stage2_equation(
    panel: &PanelDataset,
    stage1: &Stage1Output,
    i: usize,
    prior: &DLPrior,
    options: &PipelineOptions,
) -> Result<Stage2Equation> {
    let (n, k) = (panel.n_units(), panel.n_exog());
    let unit = &panel.unit_ids()[i];
    let design = stage2_design(panel, &stage1.y_hat, i, options.intercept);
    let y = unit_response(panel, i);
    let problem = RegressionProblem::new(y.clone(), design.clone()).map_err(with_unit(unit))?;
    let state = vb_fit(&problem, prior, options.tol, options.max_iter).map_err(with_unit(unit))?;
    let beta = &state.beta_mean;
    let mut w_row = DVector::zeros(n);
    for c in 0..n - 1 {
        w_row[if c < i { c } else { c + 1 }] = beta[c];
    }
    let theta = beta.rows(n - 1, k).into_owned();
    let intercept = options.intercept.then(|| beta[n - 1 + k]);
    let fitted = &design * beta;
    Ok(Stage2Equation {
        w_row,
        theta,
        intercept,
        sigma2: state.sigma2_mean(),
        diagnostics: EquationDiagnostics::new(unit, &state, &y, &fitted),
    })
}

pub fn stage2_estimate(
    panel: &PanelDataset,
    stage1: &Stage1Output,
    prior: &DLPrior,
    options: &PipelineOptions,
) -> Result<EstimationResult> {
    prior.validate()?;
    options.validate()?;
    let (n, k) = (panel.n_units(), panel.n_exog());
    if stage1.y_hat.shape() != panel.y().shape() || stage1.diagnostics.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "stage-1 output is {:?}, panel is {:?}",
            stage1.y_hat.shape(),
            panel.y().shape()
        )));
    }
    let rows = run_indexed(n, options.n_workers, |i| stage2_equation(panel, stage1, i, prior, options))?;

    let mut w = DMatrix::zeros(n, n);
    let mut theta = DMatrix::zeros(n, k);
    let mut sigma2 = DVector::zeros(n);
    let mut intercepts = options.intercept.then(|| DVector::zeros(n));
    let mut diagnostics = Vec::with_capacity(n);
    for (i, eq) in rows.into_iter().enumerate() {
        w.set_row(i, &eq.w_row.transpose());
        theta.set_row(i, &eq.theta.transpose());
        sigma2[i] = eq.sigma2;
        if let (Some(ints), Some(c)) = (intercepts.as_mut(), eq.intercept) {
            ints[i] = c;
        }
        diagnostics.push(eq.diagnostics);
    }
    let w_hat = WeightsMatrix::new(w, panel.unit_ids().to_vec())?;
    let infinity_norm = w_hat.infinity_norm();
    Ok(EstimationResult {
        row_spatial_sums: w_hat.row_sums(),
        w_hat,
        coefficients: CoefficientSet::new(theta, sigma2)?,
        intercepts,
        stage1_diagnostics: stage1.diagnostics.clone(),
        stage2_diagnostics: diagnostics,
        infinity_norm,
        stationarity_warning: infinity_norm >= 1.0,
        timings: StageTimings::default(),
        config_echo: ConfigEcho { prior: *prior, options: *options, scaling: None },
    })
}

/// Stage 1 then stage 2, with per-stage wall-clock timings. When
/// `options.standardize` is set, both stages see the per-unit z-scored panel
/// and the result is on that scale.
pub fn estimate(panel: &PanelDataset, prior: &DLPrior, options: &PipelineOptions) -> Result<EstimationResult> {
    let (scaled, scaling) = if options.standardize {
        let (p, s) = panel.standardized();
        (Some(p), Some(s))
    } else {
        (None, None)
    };
    let panel = scaled.as_ref().unwrap_or(panel);
    let started = Instant::now();
    let stage1 = stage1_predict(panel, prior, options)?;
    let stage1_time = started.elapsed();
    let started = Instant::now();
    let mut result = stage2_estimate(panel, &stage1, prior, options)?;
    let stage2_time = started.elapsed();
    result.timings = StageTimings { stage1_secs: secs(stage1_time), stage2_secs: secs(stage2_time) };
    result.config_echo.scaling = scaling;
    Ok(result)
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}
