//! Mean-field coordinate-ascent VB for the Dirichlet-Laplace regression.
//!
//! The prior is fitted in an equivalent conjugate parametrization. Writing
//! `ℓ_m = φ_m τ` turns `(τ, φ)` into `M` independent `G(a, 1/2)` local
//! scales (their sum is `τ`, their shares are `φ`), and writing
//! `u_m = ψ_m ℓ_m` gives
//!
//! ```text
//! β_m | u_m, ℓ_m ~ N(0, u_m ℓ_m)     u_m | ℓ_m ~ Exp(rate 1/(2 ℓ_m))     ℓ_m ~ G(a, 1/2)
//! ```
//!
//! which is the same joint prior on `β`. Under the factorization
//! `q(β) q(σ⁻²) ∏ q(u_m) ∏ q(ℓ_m)` every optimal factor is in closed form:
//!
//! * `q(β)`   Gaussian with precision `E[σ⁻²] XᵀX + diag(E[1/u_m] E[1/ℓ_m])`
//! * `q(σ⁻²)` Gamma(`ν + T/2`, `s + E‖y − Xβ‖²/2`)
//! * `q(u_m)` GIG(`1/2`, `E[1/ℓ_m]`, `E[β_m²] E[1/ℓ_m]`)
//! * `q(ℓ_m)` GIG(`a − 3/2`, `1`, `E[u_m] + E[β_m²] E[1/u_m]`)
//!
//! so each update is an exact coordinate maximizer and the lower bound never
//! decreases.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use super::gig::{Gig, GigMoments};
use super::{DLPrior, RegressionProblem};
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Lower bound on `E[β_m²]` inside the latent-scale updates, i.e. `|β_m|`
/// floored at 1e-10.
const BETA_SQ_FLOOR: f64 = 1e-20;

/// Full covariance is kept in the state only up to this many coefficients.
const KEEP_COVARIANCE_UP_TO: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauMoments {
    pub mean: f64,
    pub variance: f64,
}

/// Approximate posterior of one regression.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalState {
    pub beta_mean: DVector<f64>,
    /// Marginal variances of `q(β)`.
    pub beta_var: DVector<f64>,
    /// Full covariance of `q(β)` for small problems.
    pub beta_cov: Option<DMatrix<f64>>,
    /// `q(σ⁻²)` shape and rate.
    pub noise_shape: f64,
    pub noise_rate: f64,
    pub e_inv_sigma2: f64,
    /// `q(u_m)`, the mixing variances of the Laplace-as-normal-mixture.
    pub mixing: Vec<Gig>,
    /// `q(ℓ_m)`, the local Laplace scales `φ_m τ`.
    pub local_scale: Vec<Gig>,
    /// `E[1/ψ_m] = E[ℓ_m] E[1/u_m]` under the factorization.
    pub e_psi_inv: DVector<f64>,
    pub e_tau_moments: TauMoments,
    /// `E[ℓ_m] / Σ E[ℓ_j]`, a simplex summary of the Dirichlet weights.
    pub phi_mean: DVector<f64>,
    pub elbo_trace: Vec<f64>,
    pub n_iters: usize,
    pub converged: bool,
    log_det_cov: f64,
    trace_gram_cov: f64,
}

impl VariationalState {
    /// Posterior mean of `σ²` under `q(σ⁻²)`, falling back to `1/E[σ⁻²]`
    /// when the inverse-gamma mean does not exist.
    pub fn sigma2_mean(&self) -> f64 {
        if self.noise_shape > 1.0 {
            self.noise_rate / (self.noise_shape - 1.0)
        } else {
            1.0 / self.e_inv_sigma2
        }
    }

    pub fn final_elbo(&self) -> Option<f64> {
        self.elbo_trace.last().copied()
    }
}

struct GaussianFactor {
    mean: DVector<f64>,
    var: DVector<f64>,
    cov: Option<DMatrix<f64>>,
    log_det: f64,
    /// `tr(XᵀX Σ)`
    trace_gram: f64,
}

/// Cached pieces of the design reused across sweeps.
struct Design<'a> {
    problem: &'a RegressionProblem,
    gram: Option<DMatrix<f64>>,
    xty: Option<DVector<f64>>,
}

impl<'a> Design<'a> {
    fn new(problem: &'a RegressionProblem) -> Self {
        let x = problem.x();
        if x.ncols() <= x.nrows() {
            Self { problem, gram: Some(x.tr_mul(x)), xty: Some(x.tr_mul(problem.y())) }
        } else {
            Self { problem, gram: None, xty: None }
        }
    }

    fn update(&self, noise_precision: f64, prior_precision: &DVector<f64>) -> Result<GaussianFactor> {
        match (&self.gram, &self.xty) {
            (Some(gram), Some(xty)) => self.update_primal(gram, xty, noise_precision, prior_precision),
            _ => self.update_woodbury(noise_precision, prior_precision),
        }
    }

    /// `M ≤ T`: factor the `M × M` posterior precision directly.
    fn update_primal(
        &self,
        gram: &DMatrix<f64>,
        xty: &DVector<f64>,
        h: f64,
        d: &DVector<f64>,
    ) -> Result<GaussianFactor> {
        let m = d.len();
        let mut precision = gram * h;
        for i in 0..m {
            precision[(i, i)] += d[i];
        }
        let chol = precision
            .cholesky()
            .ok_or_else(|| Error::Numerical("posterior precision of β is not positive definite".into()))?;
        let log_det = -2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let cov = chol.inverse();
        let mean = &cov * xty * h;
        let var = cov.diagonal();
        let trace_gram = gram.component_mul(&cov).sum();
        let cov = (m <= KEEP_COVARIANCE_UP_TO).then_some(cov);
        Ok(GaussianFactor { mean, var, cov, log_det, trace_gram })
    }

    /// `M > T`: work with the `T × T` matrix `A = I/h + X D⁻¹ Xᵀ` so a sweep
    /// costs `O(T² M)`.
    fn update_woodbury(&self, h: f64, d: &DVector<f64>) -> Result<GaussianFactor> {
        let x = self.problem.x();
        let y = self.problem.y();
        let t = x.nrows();
        let d_inv = d.map(|v| 1.0 / v);
        let mut x_dinv = x.clone();
        for (mut col, s) in x_dinv.column_iter_mut().zip(d_inv.iter()) {
            col *= *s;
        }
        let b = &x_dinv * x.transpose();
        let mut a = b.clone();
        for i in 0..t {
            a[(i, i)] += 1.0 / h;
        }
        let chol =
            a.cholesky().ok_or_else(|| Error::Numerical("Woodbury system for β is not positive definite".into()))?;
        let alpha = chol.solve(y);
        let mean = x_dinv.tr_mul(&alpha);
        let l = chol.l();
        let v = l
            .solve_lower_triangular(x)
            .ok_or_else(|| Error::Numerical("triangular solve failed in β update".into()))?;
        let var = DVector::from_iterator(
            d.len(),
            v.column_iter().zip(d_inv.iter()).map(|(col, &di)| (di - col.norm_squared() * di * di).max(f64::MIN_POSITIVE)),
        );
        let lb = l
            .solve_lower_triangular(&b)
            .ok_or_else(|| Error::Numerical("triangular solve failed in β update".into()))?;
        let trace_gram = b.trace() - lb.norm_squared();
        let log_det_a = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let log_det = -(d.iter().map(|v| v.ln()).sum::<f64>() + t as f64 * h.ln() + log_det_a);
        Ok(GaussianFactor { mean, var, cov: None, log_det, trace_gram })
    }
}

fn check_finite(what: &str, values: impl IntoIterator<Item = f64>) -> Result<()> {
    if values.into_iter().all(f64::is_finite) {
        Ok(())
    } else {
        Err(Error::Numerical(format!("non-finite {what}; consider rescaling the inputs")))
    }
}

fn gig(p: f64, a: f64, b: f64, what: &str) -> Result<Gig> {
    Gig::new(p, a, b).ok_or_else(|| Error::Numerical(format!("degenerate {what} factor (a = {a}, b = {b})")))
}

/// Result of one coordinate-ascent sweep.
struct Sweep {
    gauss: GaussianFactor,
    noise_rate: f64,
    mixing: Vec<Gig>,
    local_scale: Vec<Gig>,
    mixing_moments: Vec<GigMoments>,
    local_moments: Vec<GigMoments>,
    elbo: f64,
}

/// Everything a sweep reads from the previous one, on the log scale:
/// `[ln E[σ⁻²], ln E[1/u_1..M], ln E[1/ℓ_1..M]]`.
type Drivers = DVector<f64>;

struct Sweeper<'a> {
    problem: &'a RegressionProblem,
    prior: &'a DLPrior,
    design: Design<'a>,
    a: f64,
    noise_shape: f64,
}

impl Sweeper<'_> {
    fn m(&self) -> usize {
        self.problem.n_regressors()
    }

    fn sweep(&self, drivers: &Drivers) -> Result<Sweep> {
        let m = self.m();
        let e_h = drivers[0].exp();
        let e_inv_u = drivers.rows(1, m).map(f64::exp);
        let e_inv_l = drivers.rows(1 + m, m).map(f64::exp);
        let gauss = self.design.update(e_h, &e_inv_u.component_mul(&e_inv_l))?;
        check_finite("posterior mean of β", gauss.mean.iter().copied())?;

        let resid = self.problem.y() - self.problem.x() * &gauss.mean;
        let expected_sq_err = resid.norm_squared() + gauss.trace_gram;
        let noise_rate = self.prior.s + 0.5 * expected_sq_err;

        let mut mixing = Vec::with_capacity(m);
        let mut local_scale = Vec::with_capacity(m);
        let mut mixing_moments = Vec::with_capacity(m);
        let mut local_moments = Vec::with_capacity(m);
        for j in 0..m {
            let beta_sq = (gauss.mean[j].powi(2) + gauss.var[j]).max(BETA_SQ_FLOOR);
            let qu = gig(0.5, e_inv_l[j], beta_sq * e_inv_l[j], "mixing variance")?;
            let mu = qu.moments();
            let ql = gig(self.a - 1.5, 1.0, mu.mean + beta_sq * mu.mean_inv, "local scale")?;
            mixing.push(qu);
            local_scale.push(ql);
            mixing_moments.push(mu);
            local_moments.push(ql.moments());
        }
        check_finite(
            "latent scale moments",
            mixing_moments.iter().chain(&local_moments).map(|g| g.mean_inv),
        )?;

        let elbo = BoundTerms {
            beta_mean: &gauss.mean,
            beta_var: &gauss.var,
            expected_sq_err,
            log_det_cov: gauss.log_det,
            noise_shape: self.noise_shape,
            noise_rate,
            mixing: &mixing,
            mixing_moments: &mixing_moments,
            local_scale: &local_scale,
            local_moments: &local_moments,
        }
        .evaluate(self.problem.n_obs() as f64, m, self.prior)?;
        Ok(Sweep { gauss, noise_rate, mixing, local_scale, mixing_moments, local_moments, elbo })
    }

    fn drivers_after(&self, s: &Sweep) -> Drivers {
        let m = self.m();
        let mut d = DVector::zeros(1 + 2 * m);
        d[0] = (self.noise_shape / s.noise_rate).ln();
        for j in 0..m {
            d[1 + j] = s.mixing_moments[j].mean_inv.ln();
            d[1 + m + j] = s.local_moments[j].mean_inv.ln();
        }
        d
    }
}

/// Largest extrapolation step length tried.
const MAX_STEP: f64 = 64.0;

/// Squared-extrapolation point from three successive sweep inputs, or
/// `None` when the sequence has stalled.
fn extrapolate(t0: &Drivers, t1: &Drivers, t2: &Drivers) -> Option<Drivers> {
    let r = t1 - t0;
    let v = t2 - t1 * 2.0 + t0;
    let (nr, nv) = (r.norm(), v.norm());
    if !(nv > 0.0 && nr.is_finite() && nv.is_finite()) {
        return None;
    }
    let alpha = (-nr / nv).clamp(-MAX_STEP, -1.0);
    let point = t0 - r * (2.0 * alpha) + v * (alpha * alpha);
    point.iter().all(|x| x.is_finite()).then_some(point)
}

/// Fits `q` by coordinate ascent until the largest change in `E[β]` over a
/// sweep drops below `tol`, or `max_iter` sweeps have run (then
/// `converged == false`).
///
/// After every two sweeps the inputs of the next sweep are extrapolated
/// along the last two steps; the extrapolated sweep is kept only when it
/// does not lower the bound, so `elbo_trace` stays nondecreasing. Rejected
/// sweeps count towards `n_iters` but are not traced. Convergence is only
/// judged on plain sweeps.
pub fn vb_fit(problem: &RegressionProblem, prior: &DLPrior, tol: f64, max_iter: usize) -> Result<VariationalState> {
    prior.validate()?;
    if !(tol > 0.0) || max_iter == 0 {
        return Err(Error::InvalidInput("tol must be positive and max_iter at least 1".into()));
    }
    let m = problem.n_regressors();
    let sweeper = Sweeper {
        problem,
        prior,
        design: Design::new(problem),
        a: prior.concentration(m),
        noise_shape: prior.nu + 0.5 * problem.n_obs() as f64,
    };

    let var_y = problem.y_variance();
    let mut drivers = DVector::zeros(1 + 2 * m);
    drivers[0] = -(if var_y > 1e-300 { var_y } else { 1.0 }).ln();
    let mut beta_mean = DVector::zeros(m);
    let mut plain_inputs: Vec<Drivers> = Vec::with_capacity(2);

    let mut elbo_trace = Vec::new();
    let mut converged = false;
    let mut n_iters = 0;
    let mut last: Option<Sweep> = None;

    while n_iters < max_iter {
        let s = sweeper.sweep(&drivers)?;
        n_iters += 1;
        let delta = (&s.gauss.mean - &beta_mean).amax();
        elbo_trace.push(s.elbo);
        plain_inputs.push(std::mem::replace(&mut drivers, sweeper.drivers_after(&s)));
        beta_mean = s.gauss.mean.clone();
        last = Some(s);
        if delta < tol {
            converged = true;
            break;
        }
        if plain_inputs.len() < 2 {
            continue;
        }
        if n_iters < max_iter {
            if let Some(point) = extrapolate(&plain_inputs[0], &plain_inputs[1], &drivers) {
                n_iters += 1;
                let floor = last.as_ref().map_or(f64::NEG_INFINITY, |l| l.elbo);
                if let Ok(s) = sweeper.sweep(&point) {
                    if s.elbo >= floor {
                        elbo_trace.push(s.elbo);
                        drivers = sweeper.drivers_after(&s);
                        beta_mean = s.gauss.mean.clone();
                        last = Some(s);
                    }
                }
            }
        }
        plain_inputs.clear();
    }

    let s = last.expect("max_iter >= 1");
    let e_l = DVector::from_iterator(m, s.local_moments.iter().map(|g| g.mean));
    let e_u_inv = DVector::from_iterator(m, s.mixing_moments.iter().map(|g| g.mean_inv));
    let tau_mean = e_l.sum();
    let noise_shape = sweeper.noise_shape;
    Ok(VariationalState {
        beta_mean: s.gauss.mean,
        beta_var: s.gauss.var,
        beta_cov: s.gauss.cov,
        noise_shape,
        noise_rate: s.noise_rate,
        e_inv_sigma2: noise_shape / s.noise_rate,
        e_psi_inv: e_l.component_mul(&e_u_inv),
        e_tau_moments: TauMoments { mean: tau_mean, variance: s.local_scale.iter().map(Gig::variance).sum() },
        phi_mean: &e_l / tau_mean,
        mixing: s.mixing,
        local_scale: s.local_scale,
        elbo_trace,
        n_iters,
        converged,
        log_det_cov: s.gauss.log_det,
        trace_gram_cov: s.gauss.trace_gram,
    })
}

/// Evidence lower bound of `state` for `problem` under `prior`.
///
/// The `E[log u]`, `E[log ℓ]` and `E[log σ⁻²]` terms cancel between the
/// model and the entropies because each factor's shape parameter is fixed by
/// the model, so only first moments and log normalizers appear.
pub fn elbo(state: &VariationalState, problem: &RegressionProblem, prior: &DLPrior) -> Result<f64> {
    let m = problem.n_regressors();
    if state.beta_mean.len() != m || state.mixing.len() != m || state.local_scale.len() != m {
        return Err(Error::DimensionMismatch("state does not match the problem".into()));
    }
    let resid = problem.y() - problem.x() * &state.beta_mean;
    let mixing_moments: Vec<GigMoments> = state.mixing.iter().map(Gig::moments).collect();
    let local_moments: Vec<GigMoments> = state.local_scale.iter().map(Gig::moments).collect();
    BoundTerms {
        beta_mean: &state.beta_mean,
        beta_var: &state.beta_var,
        expected_sq_err: resid.norm_squared() + state.trace_gram_cov,
        log_det_cov: state.log_det_cov,
        noise_shape: state.noise_shape,
        noise_rate: state.noise_rate,
        mixing: &state.mixing,
        mixing_moments: &mixing_moments,
        local_scale: &state.local_scale,
        local_moments: &local_moments,
    }
    .evaluate(problem.n_obs() as f64, m, prior)
}

struct BoundTerms<'a> {
    beta_mean: &'a DVector<f64>,
    beta_var: &'a DVector<f64>,
    expected_sq_err: f64,
    log_det_cov: f64,
    noise_shape: f64,
    noise_rate: f64,
    mixing: &'a [Gig],
    mixing_moments: &'a [GigMoments],
    local_scale: &'a [Gig],
    local_moments: &'a [GigMoments],
}

impl BoundTerms<'_> {
    fn evaluate(&self, n: f64, m: usize, prior: &DLPrior) -> Result<f64> {
        let a = prior.concentration(m);
        let e_h = self.noise_shape / self.noise_rate;

        let mut bound = -0.5 * n * LN_2PI - 0.5 * e_h * self.expected_sq_err;
        // noise precision prior and entropy (shape-dependent log terms cancel)
        bound += prior.nu * prior.s.ln() - ln_gamma(prior.nu) - prior.s * e_h;
        bound += -self.noise_shape * self.noise_rate.ln() + ln_gamma(self.noise_shape) + self.noise_shape;
        // entropy of q(β)
        bound += 0.5 * m as f64 * (1.0 + LN_2PI) + 0.5 * self.log_det_cov;

        let local_const = -a * std::f64::consts::LN_2 - ln_gamma(a);
        for j in 0..m {
            let (qu, mu) = (&self.mixing[j], &self.mixing_moments[j]);
            let (ql, ml) = (&self.local_scale[j], &self.local_moments[j]);
            let beta_sq = self.beta_mean[j].powi(2) + self.beta_var[j];
            // log p(β_m | u, ℓ) + log p(u | ℓ) + log p(ℓ)
            bound += -0.5 * LN_2PI - 0.5 * beta_sq * mu.mean_inv * ml.mean_inv;
            bound += -std::f64::consts::LN_2 - 0.5 * mu.mean * ml.mean_inv;
            bound += local_const - 0.5 * ml.mean;
            // entropies of q(u), q(ℓ)
            bound += mu.log_normalizer + 0.5 * (qu.a * mu.mean + qu.b * mu.mean_inv);
            bound += ml.log_normalizer + 0.5 * (ql.a * ml.mean + ql.b * ml.mean_inv);
        }
        if bound.is_finite() {
            Ok(bound)
        } else {
            Err(Error::Numerical("evidence lower bound is not finite".into()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dlreg::predict;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
    }

    fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
        x.tr_mul(x).cholesky().unwrap().solve(&x.tr_mul(y))
    }

    fn orthonormal_design(rng: &mut ChaCha8Rng, t: usize, m: usize) -> DMatrix<f64> {
        random_matrix(rng, t, m).qr().q()
    }

    #[test]
    fn recovers_single_signal_on_orthonormal_design() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = orthonormal_design(&mut rng, 200, 3);
        let noise = random_matrix(&mut rng, 200, 1).column(0) * 0.01;
        let y = x.column(0) * 2.0 + noise;
        let problem = RegressionProblem::new(y.clone(), x.clone()).unwrap();
        let fit = vb_fit(&problem, &DLPrior::default(), 1e-6, 1000).unwrap();
        assert!(fit.converged);
        let reference = ols(&x, &y);
        assert!((fit.beta_mean[0] - 2.0).abs() < 0.05);
        for j in 1..3 {
            assert!(fit.beta_mean[j].abs() < 0.05);
            assert!(fit.beta_mean[j].abs() <= reference[j].abs() + 1e-12, "coefficient {j} shrinks");
        }
    }

    #[test]
    fn zero_response_gives_zero_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(t, m) in &[(30, 5), (10, 40)] {
            let problem = RegressionProblem::new(DVector::zeros(t), random_matrix(&mut rng, t, m)).unwrap();
            let fit = vb_fit(&problem, &DLPrior::default(), 1e-6, 1000).unwrap();
            assert!(fit.beta_mean.amax() == 0.0);
            assert!(fit.final_elbo().unwrap().is_finite());
        }
    }

    #[test]
    fn elbo_trace_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &(t, m) in &[(50, 4), (20, 61), (100, 10)] {
            let x = random_matrix(&mut rng, t, m);
            let mut beta = DVector::zeros(m);
            beta[0] = 1.5;
            beta[m - 1] = -0.7;
            let y = &x * &beta + random_matrix(&mut rng, t, 1).column(0);
            let fit = vb_fit(&RegressionProblem::new(y, x).unwrap(), &DLPrior::default(), 1e-6, 1000).unwrap();
            for w in fit.elbo_trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-6, "elbo decreased: {} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn woodbury_and_primal_paths_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (t, m) = (12, 12);
        let x = random_matrix(&mut rng, t, m);
        let problem = RegressionProblem::new(random_matrix(&mut rng, t, 1).column(0).into_owned(), x).unwrap();
        let d = DVector::from_fn(m, |i, _| 0.3 + i as f64 * 0.1);
        let primal = Design::new(&problem);
        let dual = Design { problem: &problem, gram: None, xty: None };
        let p = primal.update(2.5, &d).unwrap();
        let w = dual.update(2.5, &d).unwrap();
        assert!((p.mean - w.mean).amax() < 1e-10);
        assert!((p.var - w.var).amax() < 1e-10);
        assert!((p.log_det - w.log_det).abs() < 1e-9);
        assert!((p.trace_gram - w.trace_gram).abs() < 1e-9);
    }

    #[test]
    fn elbo_depends_on_noise_prior_and_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_matrix(&mut rng, 40, 3);
        let y = x.column(1) * 0.8 + random_matrix(&mut rng, 40, 1).column(0);
        let problem = RegressionProblem::new(y, x).unwrap();
        let prior = DLPrior::default();
        let fit = vb_fit(&problem, &prior, 1e-6, 1000).unwrap();
        let base = elbo(&fit, &problem, &prior).unwrap();
        assert_eq!(base, elbo(&fit, &problem, &prior).unwrap());
        assert_eq!(base, *fit.elbo_trace.last().unwrap());
        let doubled = DLPrior { s: 2.0 * prior.s, ..prior };
        assert_ne!(base, elbo(&fit, &problem, &doubled).unwrap());
    }

    #[test]
    fn state_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = random_matrix(&mut rng, 15, 30);
        let y = x.column(2) * 3.0 + random_matrix(&mut rng, 15, 1).column(0);
        let fit = vb_fit(&RegressionProblem::new(y, x).unwrap(), &DLPrior::with_a(0.5), 1e-6, 1000).unwrap();
        assert!((fit.phi_mean.sum() - 1.0).abs() < 1e-8);
        assert!(fit.phi_mean.iter().all(|&p| p > 0.0));
        assert!(fit.beta_var.iter().all(|&v| v > 0.0));
        assert!(fit.e_psi_inv.iter().all(|&v| v > 0.0));
        assert!(fit.e_tau_moments.mean > 0.0);
    }

    #[test]
    fn max_iter_truncation_is_flagged() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_matrix(&mut rng, 30, 4);
        let y = x.column(0) + random_matrix(&mut rng, 30, 1).column(0);
        let fit = vb_fit(&RegressionProblem::new(y, x).unwrap(), &DLPrior::default(), 1e-12, 2).unwrap();
        assert!(!fit.converged);
        assert_eq!(fit.n_iters, 2);
        assert_eq!(fit.elbo_trace.len(), 2);
        let fit = vb_fit(&RegressionProblem::new(fit.beta_mean.clone(), DMatrix::identity(4, 4)).unwrap(), &DLPrior::default(), 1e-12, 7).unwrap();
        assert!(fit.n_iters <= 7 && fit.elbo_trace.len() <= fit.n_iters);
    }

    #[test]
    fn prediction_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_matrix(&mut rng, 60, 3);
        let y = &x * DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let fit = vb_fit(&RegressionProblem::new(y.clone(), x.clone()).unwrap(), &DLPrior::default(), 1e-6, 1000)
            .unwrap();
        let yhat = predict(&fit, &x).unwrap();
        let mean = y.mean();
        let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
        let r2 = 1.0 - (&y - &yhat).norm_squared() / ss_tot;
        assert!(r2 > 0.999, "r2 = {r2}");

        let eye = DMatrix::identity(3, 3);
        assert_eq!(predict(&fit, &eye).unwrap(), fit.beta_mean);
        assert!(predict(&fit, &DMatrix::zeros(2, 4)).is_err());
    }
}
