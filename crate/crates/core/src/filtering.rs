//! Filter of the hidden factor given the price history.
//!
//! Under the minimal martingale measure `S` is driftless, so the price
//! filtration is generated by `W_hat` alone and `(W_hat, B)` are independent
//! Brownian motions. The conditional law of `(X, Y)` given the prices is
//! therefore sampled exactly (up to time discretization) by driving each
//! particle with the *observed* `W_hat` increments and its own fresh `B`
//! increments. Particles are never weighted or resampled for `pi`.
//!
//! Conditional expectations under `P` reuse the same cloud with weights
//! `1 / L^i`, where `log L^i` is accumulated along each particle in
//! `P_hat` form. Projections taken on `{tau >= t}` are ratios with the
//! survival process as an extra weight.

use alloc::vec::Vec;

use thiserror::Error;

use crate::math;
use crate::model::{ModelError, ScenarioConfig};
use crate::rng::{self, StreamRng};
use crate::stats::Estimate;

/// Minimum admissible survival mass `sum w y / sum w` of a cloud.
pub const SURVIVAL_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FilterError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("sigma evaluates to {sigma} on the observed path at step {step}")]
    DegenerateSigma { step: usize, sigma: f64 },
    #[error("non-finite particle state at step {step}, particle {particle}")]
    NonFinite { step: usize, particle: usize },
    #[error("survival mass exhausted at step {step}: {mass:e} < {SURVIVAL_FLOOR:e}")]
    SurvivalMassExhausted { step: usize, mass: f64 },
    #[error("observed path has {got} points, the grid needs {expected}")]
    GridMismatch { expected: usize, got: usize },
    #[error("cloud already at the last grid point")]
    EndOfGrid,
}

/// State of one particle as seen by test functions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Particle {
    pub t: f64,
    pub s: f64,
    pub x: f64,
    pub y: f64,
}

/// Empirical conditional law of `(X, Y)` given the observed prices up to
/// the current grid index.
#[derive(Clone, Debug)]
pub struct ParticleCloud<'a> {
    config: &'a ScenarioConfig,
    t_grid: Vec<f64>,
    s: &'a [f64],
    dw_hat: Vec<f64>,
    index: usize,
    x: Vec<f64>,
    gamma: Vec<f64>,
    gamma_cum: Vec<f64>,
    y: Vec<f64>,
    log_l: Vec<f64>,
    rng: StreamRng,
}

/// Recovers the `W_hat` increments from a price path. Under `P_hat`,
/// `d ln S = sigma dW_hat - sigma^2/2 dt`, which inverts the log-Euler price
/// update exactly on the grid.
pub fn observed_increments(config: &ScenarioConfig, s_path: &[f64]) -> Result<Vec<f64>, FilterError> {
    let n = config.n_steps;
    if s_path.len() != n + 1 {
        return Err(FilterError::GridMismatch { expected: n + 1, got: s_path.len() });
    }
    let dt = config.dt();
    (0..n)
        .map(|k| {
            let t = k as f64 * dt;
            let sigma = config.model.sigma(t, s_path[k]);
            if !(sigma > 0.0) {
                return Err(FilterError::DegenerateSigma { step: k, sigma });
            }
            Ok((math::ln(s_path[k + 1]) - math::ln(s_path[k]) + 0.5 * sigma * sigma * dt) / sigma)
        })
        .collect()
}

/// Starts a cloud of `config.n_particles` at the known initial state
/// `(x0, y = 1)` against the observed price path `s_path`.
pub fn init_cloud<'a>(config: &'a ScenarioConfig, s_path: &'a [f64], rng: StreamRng) -> Result<ParticleCloud<'a>, FilterError> {
    init_cloud_with(config, s_path, config.n_particles, rng)
}

pub fn init_cloud_with<'a>(
    config: &'a ScenarioConfig,
    s_path: &'a [f64],
    n_particles: usize,
    rng: StreamRng,
) -> Result<ParticleCloud<'a>, FilterError> {
    let dw_hat = observed_increments(config, s_path)?;
    let g0 = config.model.gamma(0.0, config.x0);
    Ok(ParticleCloud {
        config,
        t_grid: config.time_grid(),
        s: s_path,
        dw_hat,
        index: 0,
        x: alloc::vec![config.x0; n_particles],
        gamma: alloc::vec![g0; n_particles],
        gamma_cum: alloc::vec![0.0; n_particles],
        y: alloc::vec![1.0; n_particles],
        log_l: alloc::vec![0.0; n_particles],
        rng,
    })
}

impl<'a> ParticleCloud<'a> {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn time(&self) -> f64 {
        self.t_grid[self.index]
    }

    pub fn price(&self) -> f64 {
        self.s[self.index]
    }

    pub fn observed_dw_hat(&self) -> &[f64] {
        &self.dw_hat
    }

    pub fn particles(&self) -> impl Iterator<Item = Particle> + '_ {
        let (t, s) = (self.time(), self.price());
        self.x.iter().zip(&self.y).map(move |(&x, &y)| Particle { t, s, x, y })
    }

    /// Advances every particle by one Euler step using the observed
    /// `W_hat` increment.
    pub fn step(&mut self) -> Result<(), FilterError> {
        let k = self.index;
        if k + 1 >= self.t_grid.len() {
            return Err(FilterError::EndOfGrid);
        }
        let m = &self.config.model;
        let (t, t_next, s) = (self.t_grid[k], self.t_grid[k + 1], self.s[k]);
        let dt = self.config.dt();
        let sqrt_dt = math::sqrt(dt);
        let rho = m.rho;
        let rho_perp = math::sqrt(1.0 - rho * rho);
        let dw_hat = self.dw_hat[k];
        for i in 0..self.x.len() {
            let x = self.x[i];
            let kappa = self.config.kernel(t, s, x)?;
            let a = m.a(t, x);
            let db = sqrt_dt * rng::standard_normal(&mut self.rng);
            let drift = m.b(t, x) - a * rho * kappa;
            let x_next = x + drift * dt + a * (rho * dw_hat + rho_perp * db);
            if !x_next.is_finite() {
                return Err(FilterError::NonFinite { step: k + 1, particle: i });
            }
            let g_next = m.gamma(t_next, x_next);
            self.gamma_cum[i] += 0.5 * (self.gamma[i] + g_next) * dt;
            self.gamma[i] = g_next;
            self.y[i] = math::exp(-self.gamma_cum[i]);
            self.log_l[i] += -kappa * dw_hat + 0.5 * kappa * kappa * dt;
            self.x[i] = x_next;
        }
        self.index = k + 1;
        Ok(())
    }

    /// `pi_t(f)`: unweighted particle mean.
    pub fn pi(&self, f: impl Fn(Particle) -> f64) -> f64 {
        self.pi_se(f).mean
    }

    pub fn pi_se(&self, f: impl Fn(Particle) -> f64) -> Estimate {
        let n = self.len() as f64;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for p in self.particles() {
            let v = f(p);
            sum += v;
            sum2 += v * v;
        }
        let mean = sum / n;
        let var = if n > 1.0 { ((sum2 - n * mean * mean) / (n - 1.0)).max(0.0) } else { 0.0 };
        Estimate { mean, se: math::sqrt(var / n) }
    }

    /// `pi_t(y f) / pi_t(y)`: conditional expectation under `P_hat` given the
    /// price history and survival up to now.
    pub fn survival_ratio(&self, f: impl Fn(Particle) -> f64) -> Result<f64, FilterError> {
        let mut num = 0.0;
        let mut den = 0.0;
        for p in self.particles() {
            num += p.y * f(p);
            den += p.y;
        }
        let mass = den / self.len() as f64;
        if !(mass >= SURVIVAL_FLOOR) {
            return Err(FilterError::SurvivalMassExhausted { step: self.index, mass });
        }
        Ok(num / den)
    }

    /// Normalised inverse-density weights `w^i ∝ 1 / L^i`, scaled so the
    /// largest equals 1.
    fn inverse_density_weights(&self) -> Vec<f64> {
        let max = self.log_l.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(-v));
        self.log_l.iter().map(|&v| math::exp(-v - max)).collect()
    }

    /// `sum w y f / sum w y`: the `P`-conditional expectation of `f` given the
    /// price history on survival, with its delta-method standard error.
    pub fn p_projection(&self, f: impl Fn(Particle) -> f64) -> Result<Estimate, FilterError> {
        let w = self.inverse_density_weights();
        let mut wsum = 0.0;
        let mut den = 0.0;
        let mut num = 0.0;
        let vals: Vec<f64> = self.particles().map(&f).collect();
        for ((wi, yi), vi) in w.iter().zip(&self.y).zip(&vals) {
            wsum += wi;
            den += wi * yi;
            num += wi * yi * vi;
        }
        let mass = den / wsum;
        if !(mass >= SURVIVAL_FLOOR) {
            return Err(FilterError::SurvivalMassExhausted { step: self.index, mass });
        }
        let mean = num / den;
        let var: f64 = w
            .iter()
            .zip(&self.y)
            .zip(&vals)
            .map(|((wi, yi), vi)| {
                let r = wi * yi * (vi - mean);
                r * r
            })
            .sum();
        Ok(Estimate { mean, se: math::sqrt(var) / den })
    }

    /// Projection of the asset drift under `P` given the price history, on
    /// survival. Read at grid index `k`, it is the predictable value for the
    /// step `k -> k + 1`.
    pub fn project_mu(&self) -> Result<Estimate, FilterError> {
        let m = &self.config.model;
        self.p_projection(|p| m.mu(p.t, p.s, p.x))
    }

    /// Mortality intensity under partial information, `gamma^S`.
    pub fn hazard_rate_partial(&self) -> Result<Estimate, FilterError> {
        let m = &self.config.model;
        self.p_projection(|p| m.gamma(p.t, p.x))
    }
}

/// Filter outputs on the grid. `p_mu` and `gamma_s` have one entry per step
/// (left endpoint, predictable); `pi_y` has one entry per grid point.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ProjectionSeries {
    pub t: Vec<f64>,
    pub p_mu: Vec<Estimate>,
    pub gamma_s: Vec<Estimate>,
    pub pi_y: Vec<Estimate>,
}

/// Runs a cloud along the whole observed path and records the projections.
pub fn run_projections(config: &ScenarioConfig, s_path: &[f64], rng: StreamRng) -> Result<ProjectionSeries, FilterError> {
    let mut cloud = init_cloud(config, s_path, rng)?;
    let n = config.n_steps;
    let mut out = ProjectionSeries { t: cloud.t_grid.clone(), ..Default::default() };
    for k in 0..=n {
        out.pi_y.push(cloud.pi_se(|p| p.y));
        if k < n {
            out.p_mu.push(cloud.project_mu()?);
            out.gamma_s.push(cloud.hazard_rate_partial()?);
            cloud.step()?;
        }
    }
    Ok(out)
}

/// A twice-differentiable test function `f(t, s, x, y)` with its partial
/// derivatives. Derivatives default to zero.
pub trait TestFunction {
    fn value(&self, p: Particle) -> f64;
    fn d_t(&self, _p: Particle) -> f64 {
        0.0
    }
    fn d_s(&self, _p: Particle) -> f64 {
        0.0
    }
    fn d_x(&self, _p: Particle) -> f64 {
        0.0
    }
    fn d_y(&self, _p: Particle) -> f64 {
        0.0
    }
    fn d_ss(&self, _p: Particle) -> f64 {
        0.0
    }
    fn d_xx(&self, _p: Particle) -> f64 {
        0.0
    }
    fn d_sx(&self, _p: Particle) -> f64 {
        0.0
    }
}

/// `f = c`.
pub struct Constant(pub f64);

impl TestFunction for Constant {
    fn value(&self, _p: Particle) -> f64 {
        self.0
    }
}

/// `f = y`.
pub struct IdY;

impl TestFunction for IdY {
    fn value(&self, p: Particle) -> f64 {
        p.y
    }
    fn d_y(&self, _p: Particle) -> f64 {
        1.0
    }
}

/// `f = x`.
pub struct IdX;

impl TestFunction for IdX {
    fn value(&self, p: Particle) -> f64 {
        p.x
    }
    fn d_x(&self, _p: Particle) -> f64 {
        1.0
    }
}

/// Generator of `(S, X, Y)` under `P_hat` applied to `f`.
pub fn generator(config: &ScenarioConfig, f: &dyn TestFunction, p: Particle) -> Result<f64, ModelError> {
    let m = &config.model;
    let kappa = config.kernel(p.t, p.s, p.x)?;
    let a = m.a(p.t, p.x);
    let sigma = m.sigma(p.t, p.s);
    Ok(f.d_t(p) + (m.b(p.t, p.x) - m.rho * kappa * a) * f.d_x(p) - p.y * m.gamma(p.t, p.x) * f.d_y(p)
        + 0.5 * a * a * f.d_xx(p)
        + m.rho * a * sigma * p.s * f.d_sx(p)
        + 0.5 * sigma * sigma * p.s * p.s * f.d_ss(p))
}

/// Residual of the filter equation along the cloud:
/// `R_t = pi_t(f) - pi_0(f) - int pi(L f) du - int [rho pi(a f_x) + S sigma pi(f_s)] dW_hat`,
/// with both integrals taken as left-point sums. Consumes the cloud, which
/// must start at index 0; returns `R` on every grid point.
pub fn ks_residual(mut cloud: ParticleCloud<'_>, f: &dyn TestFunction) -> Result<Vec<f64>, FilterError> {
    if cloud.index != 0 {
        return Err(FilterError::GridMismatch { expected: 0, got: cloud.index });
    }
    let config = cloud.config;
    let m = &config.model;
    let n = cloud.t_grid.len() - 1;
    let pi0 = cloud.pi(|p| f.value(p));
    let mut integral = 0.0;
    let mut out = Vec::with_capacity(n + 1);
    out.push(0.0);
    for k in 0..n {
        let dt = cloud.t_grid[k + 1] - cloud.t_grid[k];
        let (t, s) = (cloud.time(), cloud.price());
        let mut drift = 0.0;
        let mut gain_x = 0.0;
        let mut gain_s = 0.0;
        for p in cloud.particles() {
            drift += generator(config, f, p)?;
            gain_x += m.a(p.t, p.x) * f.d_x(p);
            gain_s += f.d_s(p);
        }
        let np = cloud.len() as f64;
        let gain = m.rho * gain_x / np + s * m.sigma(t, s) * gain_s / np;
        integral += drift / np * dt + gain * cloud.dw_hat[k];
        cloud.step()?;
        out.push(cloud.pi(|p| f.value(p)) - pi0 - integral);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::{base, cir};
    use crate::model::{FactorModel, HazardModel};
    use crate::rng::Purpose;
    use crate::simulate::{simulate_path, Measure};

    fn particles_rng(i: u64) -> StreamRng {
        rng::stream(99, Purpose::Particles, i)
    }

    #[test]
    fn initial_cloud_is_dirac() {
        let c = cir();
        let p = simulate_path(&c, Measure::P, 0).unwrap();
        let cloud = init_cloud(&c, &p.s, particles_rng(0)).unwrap();
        assert_eq!(cloud.pi(|p| p.y), 1.0);
        let f = |p: Particle| p.x * p.x + p.s * p.y + p.t;
        assert!((cloud.pi(f) - f(Particle { t: 0.0, s: c.s0, x: c.x0, y: 1.0 })).abs() < 1e-14);
    }

    #[test]
    fn log_inversion_recovers_increment() {
        let mut c = base();
        c.n_steps = 2;
        let (dt, sigma, z) = (c.dt(), 0.2, 0.7);
        let s1 = c.s0 * math::exp(sigma * math::sqrt(dt) * z - 0.5 * sigma * sigma * dt);
        let dw = observed_increments(&c, &[c.s0, s1, s1]).unwrap();
        assert!((dw[0] - math::sqrt(dt) * z).abs() < 1e-14);
    }

    #[test]
    fn pi_of_one_is_one_everywhere() {
        let c = cir();
        let p = simulate_path(&c, Measure::P, 1).unwrap();
        let mut cloud = init_cloud(&c, &p.s, particles_rng(1)).unwrap();
        for _ in 0..c.n_steps {
            assert_eq!(cloud.pi(|_| 1.0), 1.0);
            cloud.step().unwrap();
            assert!(cloud.pi(|p| p.x.max(0.0)) >= 0.0);
        }
        assert_eq!(cloud.pi(|_| 1.0), 1.0);
        assert!(matches!(cloud.step(), Err(FilterError::EndOfGrid)));
    }

    #[test]
    fn zero_hazard_keeps_full_survival() {
        let mut c = cir();
        c.model.hazard = HazardModel::Constant { gamma0: 0.0 };
        let p = simulate_path(&c, Measure::P, 1).unwrap();
        let series = run_projections(&c, &p.s, particles_rng(1)).unwrap();
        assert!(series.pi_y.iter().all(|e| e.mean == 1.0));
    }

    #[test]
    fn dirac_filter_identities() {
        let mut c = base();
        c.model.factor = FactorModel::Ou { kappa: 2.0, theta: 0.3, a: 0.0 };
        c.model.hazard = HazardModel::Linear;
        c.model.price.m1 = 0.5;
        c.model.rho = 0.5;
        let p = simulate_path(&c, Measure::P, 2).unwrap();
        let mut cloud = init_cloud(&c, &p.s, particles_rng(2)).unwrap();
        for k in 0..c.n_steps {
            // every particle follows the deterministic factor path
            assert!(cloud.x.iter().all(|&x| x == p.x[k]));
            let g = cloud.hazard_rate_partial().unwrap();
            assert!((g.mean - p.x[k]).abs() < 1e-14);
            let mu = cloud.project_mu().unwrap();
            assert!((mu.mean - c.model.mu(p.t_grid[k], p.s[k], p.x[k])).abs() < 1e-14);
            cloud.step().unwrap();
        }
    }

    #[test]
    fn constant_intensity_and_drift_are_reproduced_exactly() {
        let mut c = cir();
        c.model.hazard = HazardModel::Constant { gamma0: 0.07 };
        c.model.price.m1 = 0.0;
        let p = simulate_path(&c, Measure::P, 3).unwrap();
        let s = run_projections(&c, &p.s, particles_rng(3)).unwrap();
        for k in 0..c.n_steps {
            assert!((s.gamma_s[k].mean - 0.07).abs() < 1e-15);
            assert!((s.p_mu[k].mean - c.model.price.m0).abs() < 1e-15);
        }
    }

    #[test]
    fn ks_residual_of_constant_is_zero() {
        let c = cir();
        let p = simulate_path(&c, Measure::P, 4).unwrap();
        let cloud = init_cloud(&c, &p.s, particles_rng(4)).unwrap();
        let r = ks_residual(cloud, &Constant(3.0)).unwrap();
        assert!(r.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ks_residual_of_survival_is_order_dt() {
        let mut c = base();
        c.model.hazard = HazardModel::Constant { gamma0: 0.5 };
        let mut last = f64::INFINITY;
        for n_steps in [25, 50, 100] {
            c.n_steps = n_steps;
            let p = simulate_path(&c, Measure::P, 0).unwrap();
            let cloud = init_cloud_with(&c, &p.s, 10, particles_rng(0)).unwrap();
            let r = ks_residual(cloud, &IdY).unwrap();
            let end = r.last().unwrap().abs();
            // bound with C = gamma^2 T, from the trapezoid-vs-Euler gap
            assert!(end <= 0.25 * c.dt() * 1.01, "n={n_steps}: {end}");
            assert!(end < last);
            last = end;
        }
    }

    #[test]
    fn survival_floor_is_enforced() {
        let mut c = base();
        c.model.hazard = HazardModel::Constant { gamma0: 40.0 };
        let p = simulate_path(&c, Measure::P, 0).unwrap();
        let mut cloud = init_cloud_with(&c, &p.s, 4, particles_rng(0)).unwrap();
        for _ in 0..c.n_steps {
            cloud.step().unwrap();
        }
        assert!(matches!(cloud.hazard_rate_partial(), Err(FilterError::SurvivalMassExhausted { .. })));
        assert!(matches!(cloud.survival_ratio(|_| 1.0), Err(FilterError::SurvivalMassExhausted { .. })));
    }
}
