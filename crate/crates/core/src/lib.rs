//! Estimation of unrestricted spatial weights matrices for panel spatial
//! autoregressive models with many units and few periods.
//!
//! Every unit's equation is fitted by a Bayesian linear regression under a
//! Dirichlet-Laplace shrinkage prior ([`dlreg`]). The [`twostage`] pipeline
//! first predicts each unit's outcome from all exogenous regressors, then
//! regresses each unit on the other units' predictions to recover one row of
//! the weights matrix. [`simulator`] generates panels with a known weights
//! matrix and [`metrics`] scores estimates against it.

pub mod dlreg;
pub mod error;
pub mod metrics;
pub mod montecarlo;
pub mod simulator;
pub mod spatial;
pub mod twostage;

pub use error::{Error, Result};
pub use spatial::{CoefficientSet, PanelDataset, WeightsMatrix};
