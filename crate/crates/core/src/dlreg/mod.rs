//! Bayesian linear regression `y = Xβ + e`, `e ~ N(0, σ² I)`, under the
//! Dirichlet-Laplace shrinkage prior
//!
//! ```text
//! β_m | φ, τ, ψ  ~ N(0, ψ_m φ_m² τ²)      ψ_m ~ Exp(1/2)
//! φ ~ Dir(a, …, a)    τ ~ G(M·a, 1/2)     σ⁻² ~ G(ν, s)
//! ```
//!
//! Two engines fit it: [`vb_fit`], a mean-field coordinate-ascent
//! approximation, and [`gibbs_fit`], an exact sampler used as a reference.

mod bessel;
mod gibbs;
mod gig;
mod vb;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bessel::log_bessel_k;
pub use gibbs::{gibbs_fit, GibbsDraws, GibbsOptions};
pub use gig::{Gig, GigMoments};
pub use vb::{elbo, vb_fit, TauMoments, VariationalState};

/// Default convergence tolerance on the largest change in `E[β]` per sweep.
pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 1000;

/// One regression: `T` observations of `y` on `M` columns of `X`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionProblem {
    y: DVector<f64>,
    x: DMatrix<f64>,
}

impl RegressionProblem {
    pub fn new(y: DVector<f64>, x: DMatrix<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch(format!("X has {} rows, y has {}", x.nrows(), y.len())));
        }
        if y.len() < 2 {
            return Err(Error::InvalidInput("regression needs at least two observations".into()));
        }
        if x.ncols() == 0 {
            return Err(Error::InvalidInput("regression needs at least one regressor".into()));
        }
        if y.iter().chain(x.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite value in regression data".into()));
        }
        Ok(Self { y, x })
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    pub fn n_regressors(&self) -> usize {
        self.x.ncols()
    }

    /// Sample variance of `y` (divisor `T - 1`).
    pub fn y_variance(&self) -> f64 {
        let n = self.y.len() as f64;
        let mean = self.y.mean();
        self.y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    }
}

/// Dirichlet concentration `a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Concentration {
    /// `a = 1/M`, the sparsest end of the usual range.
    InverseDimension,
    Fixed(f64),
}

/// Hyperparameters of the Dirichlet-Laplace prior and of the Gamma prior on
/// the noise precision (shape `nu`, rate `s`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DLPrior {
    pub a: Concentration,
    pub nu: f64,
    pub s: f64,
}

impl Default for DLPrior {
    fn default() -> Self {
        Self { a: Concentration::InverseDimension, nu: 0.01, s: 0.01 }
    }
}

impl DLPrior {
    pub fn with_a(a: f64) -> Self {
        Self { a: Concentration::Fixed(a), ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if let Concentration::Fixed(a) = self.a {
            if !ok(a) {
                return Err(Error::InvalidInput(format!("Dirichlet concentration must be positive, got {a}")));
            }
        }
        if !ok(self.nu) || !ok(self.s) {
            return Err(Error::InvalidInput(format!(
                "noise precision prior needs positive shape and rate, got ({}, {})",
                self.nu, self.s
            )));
        }
        Ok(())
    }

    /// Concentration for a regression with `m` coefficients.
    pub fn concentration(&self, m: usize) -> f64 {
        match self.a {
            Concentration::InverseDimension => 1.0 / m as f64,
            Concentration::Fixed(a) => a,
        }
    }
}

/// `x_new · E[β]`.
pub fn predict(state: &VariationalState, x_new: &DMatrix<f64>) -> Result<DVector<f64>> {
    if x_new.ncols() != state.beta_mean.len() {
        return Err(Error::DimensionMismatch(format!(
            "prediction design has {} columns, fit has {} coefficients",
            x_new.ncols(),
            state.beta_mean.len()
        )));
    }
    Ok(x_new * &state.beta_mean)
}
