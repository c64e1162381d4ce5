//! Data-generating process for Monte Carlo work: signed ring-contiguity
//! weights, random per-unit coefficients and reduced-form panel draws.
//!
//! Every random quantity comes from its own ChaCha stream keyed by seed and
//! purpose. The structural draws (`W`, `θ`) depend on the seed only, so all
//! replications of a Monte Carlo cell share one true model; regressors and
//! disturbances are also keyed by the replication index. Within a stream
//! draws are unit-major, so growing `N` extends rather than reshuffles the
//! draws of earlier units.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spatial::{default_unit_ids, CoefficientSet, PanelDataset, WeightsMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum CoefficientDistribution {
    Uniform { low: f64, high: f64 },
    /// Parametrized by standard deviation, not variance.
    Normal { mean: f64, sd: f64 },
}

impl CoefficientDistribution {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Uniform { low, high } => low.is_finite() && high.is_finite() && low < high,
            Self::Normal { mean, sd } => mean.is_finite() && sd.is_finite() && sd > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid coefficient distribution {self:?}")))
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            Self::Uniform { low, high } => Uniform::new(low, high).expect("validated bounds").sample(rng),
            Self::Normal { mean, sd } => Normal::new(mean, sd).expect("validated sd").sample(rng),
        }
    }
}

/// Coefficient distributions for `k` regressors: `U(1, 2)` and `N(0, sd 2)`
/// alternating, starting with the uniform.
pub fn default_theta_specs(k: usize) -> Vec<CoefficientDistribution> {
    (0..k)
        .map(|r| {
            if r % 2 == 0 {
                CoefficientDistribution::Uniform { low: 1.0, high: 2.0 }
            } else {
                CoefficientDistribution::Normal { mean: 0.0, sd: 2.0 }
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub n: usize,
    pub t: usize,
    pub k: usize,
    /// Each unit neighbours the `q` units ahead and `q` behind on a ring.
    pub q: usize,
    /// `|ρ|` is drawn from `U(rho_low, rho_high)`.
    pub rho_low: f64,
    pub rho_high: f64,
    pub theta_specs: Vec<CoefficientDistribution>,
    pub noise_sd: f64,
    pub seed: u64,
    pub n_replications: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            n: 30,
            t: 20,
            k: 2,
            q: 3,
            rho_low: 0.6,
            rho_high: 0.99,
            theta_specs: default_theta_specs(2),
            noise_sd: 1.0,
            seed: 1,
            n_replications: 1,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidInput(msg));
        if self.n == 0 || self.t == 0 || self.k == 0 {
            return fail(format!("n, t and k must be positive, got {}, {}, {}", self.n, self.t, self.k));
        }
        if 2 * self.q >= self.n {
            return fail(format!("2q must be below n, got q = {} with n = {}", self.q, self.n));
        }
        if !(0.0 < self.rho_low && self.rho_low < self.rho_high && self.rho_high < 1.0) {
            return fail(format!("need 0 < rho_low < rho_high < 1, got ({}, {})", self.rho_low, self.rho_high));
        }
        if self.theta_specs.len() != self.k {
            return fail(format!("{} coefficient distributions for k = {}", self.theta_specs.len(), self.k));
        }
        for spec in &self.theta_specs {
            spec.validate()?;
        }
        if !(self.noise_sd > 0.0 && self.noise_sd.is_finite()) {
            return fail(format!("noise_sd must be positive, got {}", self.noise_sd));
        }
        if self.n_replications == 0 {
            return fail("n_replications must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
#[repr(u64)]
enum Purpose {
    RhoMagnitude = 1,
    RhoSign = 2,
    Theta = 3,
    Regressors = 4,
    Noise = 5,
}

fn stream(seed: u64, replication: u64, purpose: Purpose) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&replication.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(purpose as u64);
    rng
}

/// Row-standardized 0/1 ring contiguity: row `i` holds `1/(2q)` at the `q`
/// units on either side of `i` (indices mod `n`).
pub fn ring_contiguity(n: usize, q: usize) -> Result<WeightsMatrix> {
    if n == 0 || 2 * q >= n {
        return Err(Error::InvalidInput(format!("ring contiguity needs 2q < n, got q = {q}, n = {n}")));
    }
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        for d in 1..=q {
            w[(i, (i + d) % n)] = 1.0;
            w[(i, (i + n - d) % n)] = 1.0;
        }
    }
    WeightsMatrix::new(w, default_unit_ids(n))?.row_standardize()
}

/// True weights and the signed per-row scale `ρ` applied to the contiguity.
pub fn simulate_weights(config: &SimulationConfig) -> Result<(WeightsMatrix, DVector<f64>)> {
    config.validate()?;
    let base = ring_contiguity(config.n, config.q)?;
    let magnitude = Uniform::new(config.rho_low, config.rho_high).expect("validated bounds");
    let mut mag_rng = stream(config.seed, 0, Purpose::RhoMagnitude);
    let mut sign_rng = stream(config.seed, 0, Purpose::RhoSign);
    let rho: Vec<f64> = (0..config.n)
        .map(|_| {
            let mut m = magnitude.sample(&mut mag_rng);
            while m <= config.rho_low {
                m = magnitude.sample(&mut mag_rng);
            }
            m
        })
        .collect();
    let rho: Vec<f64> = rho.into_iter().map(|m| if sign_rng.random_bool(0.5) { -m } else { m }).collect();
    let w = base.scale_rows(&rho)?;
    Ok((w, DVector::from_vec(rho)))
}

pub fn simulate_coefficients(config: &SimulationConfig) -> Result<CoefficientSet> {
    config.validate()?;
    let mut rng = stream(config.seed, 0, Purpose::Theta);
    let mut theta = DMatrix::zeros(config.n, config.k);
    for i in 0..config.n {
        for (r, spec) in config.theta_specs.iter().enumerate() {
            theta[(i, r)] = spec.sample(&mut rng);
        }
    }
    let sigma2 = DVector::from_element(config.n, config.noise_sd * config.noise_sd);
    CoefficientSet::new(theta, sigma2)
}

/// Panel from the reduced form `y_t = (I - W)⁻¹ (x_t θ + ε_t)` together with
/// the `N × T` disturbances that produced it.
pub fn simulate_panel_with_noise(
    w: &WeightsMatrix,
    theta: &CoefficientSet,
    config: &SimulationConfig,
    replication: u64,
) -> Result<(PanelDataset, DMatrix<f64>)> {
    config.validate()?;
    let (n, t, k) = (config.n, config.t, config.k);
    if w.n() != n || theta.n_units() != n || theta.n_exog() != k {
        return Err(Error::DimensionMismatch(format!(
            "config has n = {n}, k = {k}; weights are {}×{0}, coefficients {}×{}",
            w.n(),
            theta.n_units(),
            theta.n_exog()
        )));
    }
    let solver = w.reduced_form()?;
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");

    let mut x_rng = stream(config.seed, replication, Purpose::Regressors);
    let mut x = vec![DMatrix::zeros(n, t); k];
    for i in 0..n {
        for tt in 0..t {
            for xr in x.iter_mut() {
                xr[(i, tt)] = std_normal.sample(&mut x_rng);
            }
        }
    }
    let mut e_rng = stream(config.seed, replication, Purpose::Noise);
    let mut noise = DMatrix::zeros(n, t);
    for i in 0..n {
        for tt in 0..t {
            noise[(i, tt)] = config.noise_sd * std_normal.sample(&mut e_rng);
        }
    }

    let mut shock = noise.clone();
    for (r, xr) in x.iter().enumerate() {
        for i in 0..n {
            let coef = theta.theta[(i, r)];
            for tt in 0..t {
                shock[(i, tt)] += xr[(i, tt)] * coef;
            }
        }
    }
    let y = solver.solve_matrix(&shock)?;
    Ok((PanelDataset::new(w.unit_ids().to_vec(), y, x)?, noise))
}

pub fn simulate_panel(
    w: &WeightsMatrix,
    theta: &CoefficientSet,
    config: &SimulationConfig,
    replication: u64,
) -> Result<PanelDataset> {
    simulate_panel_with_noise(w, theta, config, replication).map(|(p, _)| p)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedDataset {
    pub panel: PanelDataset,
    pub w_true: WeightsMatrix,
    pub theta_true: CoefficientSet,
    /// Signed row scale of `w_true`.
    pub rho_true: DVector<f64>,
    /// `N × T` disturbances.
    pub noise: DMatrix<f64>,
}

pub fn simulate_dataset(config: &SimulationConfig, replication: u64) -> Result<SimulatedDataset> {
    let (w_true, rho_true) = simulate_weights(config)?;
    let theta_true = simulate_coefficients(config)?;
    let (panel, noise) = simulate_panel_with_noise(&w_true, &theta_true, config, replication)?;
    Ok(SimulatedDataset { panel, w_true, theta_true, rho_true, noise })
}
