//! Gibbs sampler for the Dirichlet-Laplace regression, used as a reference
//! for the VB engine.
//!
//! Each sweep draws the prior scales jointly given `β` by composition, then
//! `β` and `σ⁻²` from their Gaussian and Gamma full conditionals:
//!
//! 1. `φ | β`: `T_m ~ GIG(a − 1, 1, 2|β_m|)` independently, `φ = T / ΣT`
//! 2. `τ | φ, β ~ GIG(M a − M, 1, 2 Σ |β_m| / φ_m)`
//! 3. `1/ψ_m | φ, τ, β ~ InvGaussian(mean φ_m τ / |β_m|, shape 1)`
//! 4. `β | ψ, φ, τ, σ⁻², y ~ N`, prior variances `ψ_m φ_m² τ²`
//! 5. `σ⁻² | β, y ~ G(ν + T/2, s + ‖y − Xβ‖²/2)`

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use super::gig::Gig;
use super::{DLPrior, RegressionProblem};
use crate::error::{Error, Result};

const ABS_BETA_FLOOR: f64 = 1e-10;
const SCALE_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GibbsOptions {
    /// Number of retained draws.
    pub n_draws: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
}

impl Default for GibbsOptions {
    fn default() -> Self {
        Self { n_draws: 2000, burn_in: 1000, thin: 1, seed: 0 }
    }
}

/// Retained draws, one row per draw.
#[derive(Debug, Clone, PartialEq)]
pub struct GibbsDraws {
    pub beta_draws: DMatrix<f64>,
    pub sigma2_draws: DVector<f64>,
    pub tau_draws: DVector<f64>,
    pub phi_draws: DMatrix<f64>,
    pub psi_draws: DMatrix<f64>,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
}

impl GibbsDraws {
    pub fn n_draws(&self) -> usize {
        self.beta_draws.nrows()
    }

    pub fn beta_mean(&self) -> DVector<f64> {
        self.beta_draws.row_mean().transpose()
    }

    pub fn sigma2_mean(&self) -> f64 {
        self.sigma2_draws.mean()
    }

    /// Monte Carlo standard error of each posterior mean of `β`, by
    /// non-overlapping batch means with `⌊√S⌋` draws per batch.
    pub fn beta_mcse(&self) -> DVector<f64> {
        let s = self.n_draws();
        let batch = ((s as f64).sqrt().floor() as usize).max(1);
        let n_batches = s / batch;
        let m = self.beta_draws.ncols();
        DVector::from_fn(m, |j, _| {
            if n_batches < 2 {
                return f64::NAN;
            }
            let col = self.beta_draws.column(j);
            let means: Vec<f64> = (0..n_batches)
                .map(|b| col.rows(b * batch, batch).sum() / batch as f64)
                .collect();
            let grand = means.iter().sum::<f64>() / n_batches as f64;
            let var = means.iter().map(|v| (v - grand).powi(2)).sum::<f64>() / (n_batches - 1) as f64;
            (var / n_batches as f64).sqrt()
        })
    }
}

fn standard_normal_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

fn numerical(what: &str) -> Error {
    Error::Numerical(format!("non-finite {what} draw"))
}

/// Draws `β ~ N(Q⁻¹ h Xᵀy, Q⁻¹)` with `Q = h XᵀX + diag(1/prior_var)`.
fn draw_beta(
    rng: &mut ChaCha8Rng,
    problem: &RegressionProblem,
    gram: Option<&DMatrix<f64>>,
    xty: Option<&DVector<f64>>,
    h: f64,
    prior_var: &DVector<f64>,
) -> Result<DVector<f64>> {
    let m = prior_var.len();
    match (gram, xty) {
        (Some(gram), Some(xty)) => {
            let mut q = gram * h;
            for i in 0..m {
                q[(i, i)] += 1.0 / prior_var[i];
            }
            let chol = q.cholesky().ok_or_else(|| Error::Numerical("β precision not positive definite".into()))?;
            let mean = chol.solve(&(xty * h));
            let z = standard_normal_vector(rng, m);
            let noise = chol
                .l()
                .transpose()
                .solve_upper_triangular(&z)
                .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
            Ok(mean + noise)
        }
        _ => {
            // exact sampler for M > T working in the T-dimensional space
            let x = problem.x();
            let sh = h.sqrt();
            let phi = x * sh;
            let alpha = problem.y() * sh;
            let u = standard_normal_vector(rng, m).component_mul(&prior_var.map(f64::sqrt));
            let delta = standard_normal_vector(rng, x.nrows());
            let v = &phi * &u + delta;
            let mut phi_d = phi.clone();
            for (mut col, s) in phi_d.column_iter_mut().zip(prior_var.iter()) {
                col *= *s;
            }
            let mut system = &phi_d * phi.transpose();
            for i in 0..x.nrows() {
                system[(i, i)] += 1.0;
            }
            let chol = system.cholesky().ok_or_else(|| Error::Numerical("β sampler system singular".into()))?;
            let w = chol.solve(&(alpha - v));
            Ok(u + phi_d.tr_mul(&w))
        }
    }
}

/// Runs `burn_in + n_draws · thin` sweeps from a ridge starting point,
/// keeping every `thin`-th draw after burn-in. Same seed, same draws.
pub fn gibbs_fit(problem: &RegressionProblem, prior: &DLPrior, options: &GibbsOptions) -> Result<GibbsDraws> {
    prior.validate()?;
    if options.n_draws == 0 || options.thin == 0 {
        return Err(Error::InvalidInput("n_draws and thin must be at least 1".into()));
    }
    let m = problem.n_regressors();
    let n = problem.n_obs() as f64;
    let a = prior.concentration(m);
    let x = problem.x();
    let y = problem.y();
    let (gram, xty) = if m <= x.nrows() { (Some(x.tr_mul(x)), Some(x.tr_mul(y))) } else { (None, None) };
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);

    let mut ridge = x.tr_mul(x);
    for i in 0..m {
        ridge[(i, i)] += 1.0;
    }
    let mut beta = ridge
        .cholesky()
        .ok_or_else(|| Error::Numerical("ridge start failed".into()))?
        .solve(&x.tr_mul(y));
    let var_y = problem.y_variance();
    let mut h = if var_y > 1e-300 { 1.0 / var_y } else { 1.0 };
    let mut phi = DVector::from_element(m, 1.0 / m as f64);
    let mut psi = DVector::from_element(m, 1.0);

    let mut out = GibbsDraws {
        beta_draws: DMatrix::zeros(options.n_draws, m),
        sigma2_draws: DVector::zeros(options.n_draws),
        tau_draws: DVector::zeros(options.n_draws),
        phi_draws: DMatrix::zeros(options.n_draws, m),
        psi_draws: DMatrix::zeros(options.n_draws, m),
        burn_in: options.burn_in,
        thin: options.thin,
        seed: options.seed,
    };

    let total = options.burn_in + options.n_draws * options.thin;
    let noise_shape = prior.nu + 0.5 * n;
    for sweep in 0..total {
        let abs_beta = beta.map(|b| b.abs().max(ABS_BETA_FLOOR));

        for j in 0..m {
            let g = Gig::new(a - 1.0, 1.0, 2.0 * abs_beta[j]).ok_or_else(|| numerical("φ"))?;
            phi[j] = g.sample(&mut rng).max(SCALE_FLOOR);
        }
        let total_t = phi.sum();
        phi /= total_t;
        if phi.iter().any(|v| !v.is_finite()) {
            return Err(numerical("φ"));
        }
        for p in phi.iter_mut() {
            *p = p.max(SCALE_FLOOR);
        }

        let chi: f64 = abs_beta.iter().zip(phi.iter()).map(|(b, p)| b / p).sum();
        let g = Gig::new(m as f64 * a - m as f64, 1.0, 2.0 * chi).ok_or_else(|| numerical("τ"))?;
        let tau = g.sample(&mut rng).max(SCALE_FLOOR);

        for j in 0..m {
            // inverse Gaussian(μ, 1) is GIG(-1/2, 1/μ², 1)
            let mu = phi[j] * tau / abs_beta[j];
            let g = Gig::new(-0.5, 1.0 / (mu * mu), 1.0).ok_or_else(|| numerical("ψ"))?;
            psi[j] = 1.0 / g.sample(&mut rng);
        }

        let prior_var = DVector::from_fn(m, |j, _| (psi[j] * phi[j] * phi[j] * tau * tau).max(SCALE_FLOOR));
        beta = draw_beta(&mut rng, problem, gram.as_ref(), xty.as_ref(), h, &prior_var)?;
        if beta.iter().any(|v| !v.is_finite()) {
            return Err(numerical("β"));
        }

        let sse = (y - x * &beta).norm_squared();
        let gamma = Gamma::new(noise_shape, 1.0 / (prior.s + 0.5 * sse)).map_err(|_| numerical("σ⁻²"))?;
        h = gamma.sample(&mut rng);
        if !(h > 0.0 && h.is_finite()) {
            return Err(numerical("σ⁻²"));
        }

        if sweep >= options.burn_in && (sweep - options.burn_in + 1) % options.thin == 0 {
            let k = (sweep - options.burn_in) / options.thin;
            out.beta_draws.set_row(k, &beta.transpose());
            out.sigma2_draws[k] = 1.0 / h;
            out.tau_draws[k] = tau;
            out.phi_draws.set_row(k, &phi.transpose());
            out.psi_draws.set_row(k, &psi.transpose());
        }
    }
    Ok(out)
}
