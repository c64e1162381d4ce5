//! Generalized inverse Gaussian distribution.
//!
//! Density `f(x) ∝ x^{p-1} exp(-(a·x + b/x) / 2)` for `x > 0`, `a, b > 0`.
//! Moments go through `E[x^r] = (b/a)^{r/2} K_{p+r}(ω) / K_p(ω)` with
//! `ω = sqrt(a·b)`.
//!
//! Sampling uses the fact that `log X` has a log-concave density for every
//! parameter choice, so an exact rejection sampler with a flat top around the
//! mode and tangent exponential tails always applies.

use rand::Rng;

use super::bessel::{bessel_k_ratio, log_bessel_k, log_bessel_k_with_neighbours};

/// First moments and log normalizer, as needed by the VB updates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GigMoments {
    pub mean: f64,
    pub mean_inv: f64,
    pub log_normalizer: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gig {
    pub p: f64,
    pub a: f64,
    pub b: f64,
}

impl Gig {
    pub fn new(p: f64, a: f64, b: f64) -> Option<Self> {
        if p.is_finite() && a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite() {
            Some(Self { p, a, b })
        } else {
            None
        }
    }

    fn omega(&self) -> f64 {
        (self.a * self.b).sqrt()
    }

    /// `ln ∫ x^{p-1} exp(-(a x + b/x)/2) dx = ln 2 + ln K_p(ω) - (p/2) ln(a/b)`.
    pub fn log_normalizer(&self) -> f64 {
        std::f64::consts::LN_2 + log_bessel_k(self.p, self.omega()) - 0.5 * self.p * (self.a / self.b).ln()
    }

    /// `E[x]`, `E[1/x]` and the log normalizer from a single Bessel
    /// evaluation; index 1/2 (the inverse-Gaussian family) is closed form.
    pub fn moments(&self) -> GigMoments {
        let w = self.omega();
        let (log_k, up, down) = if self.p == 0.5 {
            (0.5 * (std::f64::consts::PI / (2.0 * w)).ln() - w, 1.0 + 1.0 / w, 1.0)
        } else {
            log_bessel_k_with_neighbours(self.p, w)
        };
        let ratio = (self.b / self.a).sqrt();
        GigMoments {
            mean: ratio * up,
            mean_inv: down / ratio,
            log_normalizer: std::f64::consts::LN_2 + log_k - 0.5 * self.p * (self.a / self.b).ln(),
        }
    }

    pub fn mean(&self) -> f64 {
        (self.b / self.a).sqrt() * bessel_k_ratio(self.p, self.omega())
    }

    /// `E[1/x]`.
    pub fn mean_inv(&self) -> f64 {
        // K_{p-1}/K_p = 1 / (K_p / K_{p-1})
        (self.a / self.b).sqrt() / bessel_k_ratio(self.p - 1.0, self.omega())
    }

    pub fn second_moment(&self) -> f64 {
        let w = self.omega();
        (self.b / self.a) * bessel_k_ratio(self.p, w) * bessel_k_ratio(self.p + 1.0, w)
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        (self.second_moment() - m * m).max(0.0)
    }

    /// Mode of `log X`: the root of `p - (a e^u - b e^{-u}) / 2`.
    fn log_mode(&self) -> f64 {
        let disc = (self.p * self.p + self.a * self.b).sqrt();
        if self.p >= 0.0 {
            ((self.p + disc) / self.a).ln()
        } else {
            (self.b / (disc - self.p)).ln()
        }
    }

    /// Unnormalized log density of `U = log X`.
    fn log_density_u(&self, u: f64) -> f64 {
        self.p * u - 0.5 * (self.a * u.exp() + self.b * (-u).exp())
    }

    fn log_density_u_slope(&self, u: f64) -> f64 {
        self.p - 0.5 * (self.a * u.exp() - self.b * (-u).exp())
    }

    /// Finds `u` on one side of the mode where the log density has dropped by one.
    fn unit_drop(&self, mode: f64, peak: f64, direction: f64) -> f64 {
        let target = peak - 1.0;
        let mut step = 1.0;
        let mut inner = mode;
        let mut outer = mode + direction * step;
        while self.log_density_u(outer) > target {
            inner = outer;
            step *= 2.0;
            outer = mode + direction * step;
        }
        for _ in 0..200 {
            let mid = 0.5 * (inner + outer);
            if self.log_density_u(mid) > target {
                inner = mid;
            } else {
                outer = mid;
            }
            if (outer - inner).abs() < 1e-12 * (1.0 + mid.abs()) {
                break;
            }
        }
        0.5 * (inner + outer)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let mode = self.log_mode();
        let peak = self.log_density_u(mode);
        let left = self.unit_drop(mode, peak, -1.0);
        let right = self.unit_drop(mode, peak, 1.0);
        // hat: exp(peak) on [left, right]; tangent lines beyond
        let slope_l = self.log_density_u_slope(left);
        let slope_r = self.log_density_u_slope(right);
        let h_l = self.log_density_u(left) - peak;
        let h_r = self.log_density_u(right) - peak;
        let mass_mid = right - left;
        let mass_l = h_l.exp() / slope_l;
        let mass_r = h_r.exp() / -slope_r;
        let total = mass_mid + mass_l + mass_r;
        loop {
            let pick = rng.random::<f64>() * total;
            let e: f64 = -(1.0 - rng.random::<f64>()).ln();
            let (u, log_hat) = if pick < mass_mid {
                (left + pick, 0.0)
            } else if pick < mass_mid + mass_r {
                let u = right + e / -slope_r;
                (u, h_r + slope_r * (u - right))
            } else {
                let u = left - e / slope_l;
                (u, h_l + slope_l * (u - left))
            };
            let accept: f64 = rng.random();
            if accept.ln() <= self.log_density_u(u) - peak - log_hat {
                return u.exp();
            }
        }
    }
}
