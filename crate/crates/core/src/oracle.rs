//! Closed-form reference values used to cross-check the numerical pipeline.

use crate::math;

fn d1(s: f64, k: f64, sigma: f64, tau: f64) -> f64 {
    let v = sigma * math::sqrt(tau);
    (math::ln(s / k) + 0.5 * v * v) / v
}

/// Black-Scholes call price with zero rate and time to maturity `tau`.
pub fn bs_call(s: f64, k: f64, sigma: f64, tau: f64) -> f64 {
    if tau <= 0.0 {
        return (s - k).max(0.0);
    }
    let d = d1(s, k, sigma, tau);
    s * math::norm_cdf(d) - k * math::norm_cdf(d - sigma * math::sqrt(tau))
}

/// Black-Scholes call delta with zero rate.
pub fn bs_call_delta(s: f64, k: f64, sigma: f64, tau: f64) -> f64 {
    if tau <= 0.0 {
        return if s > k { 1.0 } else { 0.0 };
    }
    math::norm_cdf(d1(s, k, sigma, tau))
}

/// `E[exp(-int_0^t (g0 + g1 X) du)]` for a CIR factor
/// `dX = kappa (theta - X) dt + a sqrt(X) dB` started at `x0`, from the
/// explicit solution of the Riccati system.
pub fn cir_affine_survival(kappa: f64, theta: f64, a: f64, g0: f64, g1: f64, x0: f64, t: f64) -> f64 {
    if g1 == 0.0 {
        return math::exp(-g0 * t);
    }
    let h = math::sqrt(kappa * kappa + 2.0 * a * a * g1);
    let e = math::exp(h * t) - 1.0;
    let den = (h + kappa) * e + 2.0 * h;
    let beta = 2.0 * g1 * e / den;
    let base = 2.0 * h * math::exp(0.5 * (kappa + h) * t) / den;
    let alpha = (2.0 * kappa * theta / (a * a)) * math::ln(base);
    math::exp(-g0 * t + alpha - beta * x0)
}

/// Same quantity by RK4 integration of `beta' = g1 - kappa beta - a^2 beta^2 / 2`,
/// `alpha' = -kappa theta beta`, `beta(0) = alpha(0) = 0`.
#[allow(clippy::too_many_arguments)]
pub fn cir_affine_survival_rk4(kappa: f64, theta: f64, a: f64, g0: f64, g1: f64, x0: f64, t: f64, steps: usize) -> f64 {
    let f = |b: f64| (g1 - kappa * b - 0.5 * a * a * b * b, -kappa * theta * b);
    let h = t / steps as f64;
    let (mut alpha, mut beta) = (0.0, 0.0);
    for _ in 0..steps {
        let (k1b, k1a) = f(beta);
        let (k2b, k2a) = f(beta + 0.5 * h * k1b);
        let (k3b, k3a) = f(beta + 0.5 * h * k2b);
        let (k4b, k4a) = f(beta + h * k3b);
        beta += h / 6.0 * (k1b + 2.0 * k2b + 2.0 * k3b + k4b);
        alpha += h / 6.0 * (k1a + 2.0 * k2a + 2.0 * k3a + k4a);
    }
    math::exp(-g0 * t + alpha - beta * x0)
}

/// `E[X_t]` for a mean-reverting factor with drift `kappa (theta - x)`.
pub fn mean_reverting_mean(kappa: f64, theta: f64, x0: f64, t: f64) -> f64 {
    theta + (x0 - theta) * math::exp(-kappa * t)
}
