//! First-passage quantities for a drifted Brownian motion `X_t = u + mu t + sigma W_t`
//! against a flat lower barrier `c`.

use crate::error::{CocoError, Result};

/// Exponents above this are combined with `ln Phi` instead of exponentiated.
const LOG_SPACE_THRESHOLD: f64 = 700.0;

/// Standard normal CDF via `erfc`, accurate in both tails.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// `ln Phi(x)`, finite far into the lower tail where `Phi` underflows.
pub fn ln_norm_cdf(x: f64) -> f64 {
    if x > -35.0 {
        return norm_cdf(x).ln();
    }
    // Mills-ratio asymptotic series; relative error below 1e-12 for x <= -35.
    let x2 = x * x;
    let inv = 1.0 / x2;
    let series = 1.0 - inv + 3.0 * inv * inv - 15.0 * inv.powi(3) + 105.0 * inv.powi(4);
    -0.5 * x2 - (-x).ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() + series.ln()
}

/// `d_-`, `d_+` and the reflection factor of the survival formula.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosedFormTerms {
    pub d_minus: f64,
    pub d_plus: f64,
    /// `exp{-2 mu (u - c) / sigma^2}`; may overflow to infinity, see
    /// [`log_reflection`](Self::log_reflection).
    pub reflection_factor: f64,
    pub log_reflection: f64,
}

impl ClosedFormTerms {
    pub fn new(u: f64, c: f64, mu: f64, sigma: f64, dt: f64) -> Result<Self> {
        check_inputs(sigma, dt)?;
        let scale = sigma * dt.sqrt();
        let log_reflection = -2.0 * mu * (u - c) / (sigma * sigma);
        Ok(ClosedFormTerms {
            d_minus: (c - u - mu * dt) / scale,
            d_plus: (c - u + mu * dt) / scale,
            reflection_factor: log_reflection.exp(),
            log_reflection,
        })
    }

    /// `Phi(-d_-) - exp{...} Phi(d_+)`, clamped to `[0, 1]`.
    pub fn survival(&self) -> f64 {
        let direct = norm_cdf(-self.d_minus);
        let reflected = if self.log_reflection > LOG_SPACE_THRESHOLD {
            (self.log_reflection + ln_norm_cdf(self.d_plus)).exp()
        } else {
            self.reflection_factor * norm_cdf(self.d_plus)
        };
        (direct - reflected).clamp(0.0, 1.0)
    }
}

fn check_inputs(sigma: f64, dt: f64) -> Result<()> {
    if !(sigma > 0.0) {
        return Err(CocoError::domain(format!("sigma must be > 0, got {sigma}")));
    }
    if !(dt > 0.0) {
        return Err(CocoError::domain(format!("horizon must be > 0, got {dt}")));
    }
    Ok(())
}

/// Probability that the process started at `u` stays strictly above `c` over
/// `[0, dt]`. Returns 0 when `u <= c` (already absorbed).
pub fn survival_closed_form(u: f64, c: f64, mu: f64, sigma: f64, dt: f64) -> Result<f64> {
    check_inputs(sigma, dt)?;
    if u <= c {
        return Ok(0.0);
    }
    Ok(ClosedFormTerms::new(u, c, mu, sigma, dt)?.survival())
}

/// CDF of the first-passage time below `c` (inverse-Gaussian law when `mu < 0`).
pub fn first_passage_cdf(u: f64, c: f64, mu: f64, sigma: f64, t: f64) -> Result<f64> {
    Ok(1.0 - survival_closed_form(u, c, mu, sigma, t)?)
}

/// Probability that a Brownian bridge with variance rate `sigma^2` pinned at
/// `x_prev` and `x_next` over an interval `dt` never touches `c`.
#[inline]
pub fn bridge_no_hit(x_prev: f64, x_next: f64, c: f64, sigma: f64, dt: f64) -> f64 {
    debug_assert!(sigma > 0.0 && dt > 0.0);
    if x_prev <= c || x_next <= c {
        return 0.0;
    }
    -(-2.0 * (x_prev - c) * (x_next - c) / (sigma * sigma * dt)).exp_m1()
}

/// Complement of [`bridge_no_hit`] for endpoints strictly above `c`.
#[inline]
pub(crate) fn bridge_hit_probability(a_prev: f64, a_next: f64, sigma2_dt: f64) -> f64 {
    let exponent = 2.0 * a_prev * a_next / sigma2_dt;
    // exp(-746) underflows to zero.
    if exponent > 746.0 {
        0.0
    } else {
        (-exponent).exp()
    }
}
