//! Monte Carlo worlds.
//!
//! A world is the grid path of `(W, B, S, X)` plus the survival process
//! `Y = exp(-Gamma)`, the death time and the death indicator. `S` moves by
//! log-Euler so it stays positive; `X` moves by Euler-Maruyama; `Gamma`
//! integrates `gamma(t, X_t)` by the trapezoidal rule.
//!
//! Path `i` draws from the streams `(seed, World, i)` and `(seed, Death, i)`,
//! so the `P` and `P_hat` worlds with the same index share their Brownian
//! increments and exponential threshold.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math;
use crate::model::{ModelError, ScenarioConfig};
use crate::rng::{self, ExpDraw, Purpose, StreamRng};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("non-finite state on path {path} at step {step}: s={s}, x={x}")]
    NonFinite { path: u64, step: usize, s: f64, x: f64 },
    #[error("grid mismatch: expected {expected} values, got {got}")]
    GridMismatch { expected: usize, got: usize },
}

/// Probability measure a world is simulated under.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Measure {
    /// Physical measure: `S` has drift `mu`.
    P,
    /// Minimal martingale measure: `S` is driftless and `X` has drift
    /// `b - a rho mu / sigma`.
    PHat,
}

/// One simulated world on the uniform grid.
#[derive(Clone, Debug, PartialEq)]
pub struct PathBundle {
    pub index: u64,
    pub measure: Measure,
    pub t_grid: Vec<f64>,
    /// `P`-Brownian motion driving `S`.
    pub w: Vec<f64>,
    /// `P_hat`-Brownian motion, `W + int mu/sigma dt`.
    pub w_hat: Vec<f64>,
    /// Brownian motion independent of `W`.
    pub b: Vec<f64>,
    pub s: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Cumulative hazard `int_0^t gamma(u, X_u) du`.
    pub gamma_cum: Vec<f64>,
    pub death: DeathTime,
}

/// Death time snapped to the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct DeathTime {
    /// Grid time of death, `f64::INFINITY` when the policyholder survives `T`.
    pub tau: f64,
    /// Grid index of death, if it happens on `[0, T]`.
    pub index: Option<usize>,
    /// `H_t = 1{tau <= t}` on the grid.
    pub h: Vec<u8>,
}

impl PathBundle {
    pub fn n_steps(&self) -> usize {
        self.t_grid.len() - 1
    }

    /// Index at which the stopped processes freeze: the death index, or the
    /// last grid index on survival.
    pub fn stop_index(&self) -> usize {
        self.death.index.unwrap_or(self.n_steps())
    }

    pub fn stopped(&self) -> StoppedView<'_> {
        StoppedView { bundle: self }
    }
}

/// Canonical hazard construction: `tau` is the first grid time at which the
/// cumulative hazard reaches the exponential threshold. Crossing inside a
/// step is attributed to the right end of that step.
pub fn sample_death_time(t_grid: &[f64], gamma_cum: &[f64], draw: ExpDraw) -> DeathTime {
    let threshold = draw.value();
    let index = gamma_cum.iter().position(|&g| g >= threshold);
    let h = match index {
        Some(d) => (0..gamma_cum.len()).map(|k| u8::from(k >= d)).collect(),
        None => vec![0; gamma_cum.len()],
    };
    DeathTime { tau: index.map_or(f64::INFINITY, |d| t_grid[d]), index, h }
}

/// Per-step state update shared by full worlds and Feynman-Kac probes.
struct Stepper<'a> {
    config: &'a ScenarioConfig,
    measure: Measure,
    dt: f64,
    sqrt_dt: f64,
    rho_perp: f64,
}

struct StepOut {
    s: f64,
    x: f64,
    dw: f64,
    dw_hat: f64,
    db: f64,
}

impl<'a> Stepper<'a> {
    fn new(config: &'a ScenarioConfig, measure: Measure) -> Self {
        let dt = config.dt();
        let rho = config.model.rho;
        Stepper { config, measure, dt, sqrt_dt: math::sqrt(dt), rho_perp: math::sqrt(1.0 - rho * rho) }
    }

    #[inline]
    fn step(&self, t: f64, s: f64, x: f64, z_w: f64, z_b: f64) -> Result<StepOut, ModelError> {
        let m = &self.config.model;
        let dt = self.dt;
        let sigma = m.sigma(t, s);
        let kappa = self.config.kernel(t, s, x)?;
        let a = m.a(t, x);
        let db = self.sqrt_dt * z_b;
        let (dw, dw_hat, drift_x, dw_f) = match self.measure {
            Measure::P => {
                let dw = self.sqrt_dt * z_w;
                (dw, dw + kappa * dt, m.b(t, x), dw)
            }
            Measure::PHat => {
                let dw_hat = self.sqrt_dt * z_w;
                (dw_hat - kappa * dt, dw_hat, m.b(t, x) - a * m.rho * kappa, dw_hat)
            }
        };
        // d ln S = sigma dW_hat - sigma^2/2 dt under both measures
        let log_s = math::ln(s) + sigma * dw_hat - 0.5 * sigma * sigma * dt;
        let x_next = x + drift_x * dt + a * (m.rho * dw_f + self.rho_perp * db);
        Ok(StepOut { s: math::exp(log_s), x: x_next, dw, dw_hat, db })
    }
}

/// Simulates world `index` under `measure`.
pub fn simulate_path(config: &ScenarioConfig, measure: Measure, index: u64) -> Result<PathBundle, SimError> {
    let mut world = rng::stream(config.seed, Purpose::World, index);
    let mut death_rng = rng::stream(config.seed, Purpose::Death, index);
    let draw = rng::unit_exponential(&mut death_rng);
    simulate_with(config, measure, index, &mut world, draw)
}

/// Simulates a world from an explicit normal stream and death threshold.
pub fn simulate_with(
    config: &ScenarioConfig,
    measure: Measure,
    index: u64,
    world: &mut StreamRng,
    draw: ExpDraw,
) -> Result<PathBundle, SimError> {
    let normals: Vec<(f64, f64)> =
        (0..config.n_steps).map(|_| (rng::standard_normal(world), rng::standard_normal(world))).collect();
    simulate_from_normals(config, measure, index, &normals, draw)
}

/// Simulates a world from standard normal pairs `(z_W, z_B)`, one per step.
/// Coarse and fine worlds sharing Brownian increments are built by summing
/// fine pairs and rescaling.
pub fn simulate_from_normals(
    config: &ScenarioConfig,
    measure: Measure,
    index: u64,
    normals: &[(f64, f64)],
    draw: ExpDraw,
) -> Result<PathBundle, SimError> {
    let n = config.n_steps;
    if normals.len() != n {
        return Err(SimError::GridMismatch { expected: n, got: normals.len() });
    }
    let t_grid = config.time_grid();
    let stepper = Stepper::new(config, measure);
    let m = &config.model;
    let dt = stepper.dt;

    let mut w = Vec::with_capacity(n + 1);
    let mut w_hat = Vec::with_capacity(n + 1);
    let mut b = Vec::with_capacity(n + 1);
    let mut s = Vec::with_capacity(n + 1);
    let mut x = Vec::with_capacity(n + 1);
    let mut gamma_cum = Vec::with_capacity(n + 1);
    w.push(0.0);
    w_hat.push(0.0);
    b.push(0.0);
    s.push(config.s0);
    x.push(config.x0);
    gamma_cum.push(0.0);
    let mut gamma_prev = m.gamma(0.0, config.x0);

    for k in 0..n {
        let t = t_grid[k];
        let (z_w, z_b) = normals[k];
        let out = stepper.step(t, s[k], x[k], z_w, z_b)?;
        if !(out.s.is_finite() && out.s > 0.0 && out.x.is_finite()) {
            return Err(SimError::NonFinite { path: index, step: k + 1, s: out.s, x: out.x });
        }
        let gamma_next = m.gamma(t_grid[k + 1], out.x);
        gamma_cum.push(gamma_cum[k] + 0.5 * (gamma_prev + gamma_next) * dt);
        gamma_prev = gamma_next;
        w.push(w[k] + out.dw);
        w_hat.push(w_hat[k] + out.dw_hat);
        b.push(b[k] + out.db);
        s.push(out.s);
        x.push(out.x);
    }
    let y = gamma_cum.iter().map(|&g| math::exp(-g)).collect();
    let death = sample_death_time(&t_grid, &gamma_cum, draw);
    Ok(PathBundle { index, measure, t_grid, w, w_hat, b, s, x, y, gamma_cum, death })
}

/// Simulates worlds `0..config.n_paths` in order.
pub fn simulate_paths(config: &ScenarioConfig, measure: Measure) -> Result<Vec<PathBundle>, SimError> {
    (0..config.n_paths as u64).map(|i| simulate_path(config, measure, i)).collect()
}

/// Terminal state of a path started at `(t0, s, x)` under `P_hat`, with the
/// discounting and death-benefit integrals a Feynman-Kac estimator needs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeSample {
    pub s_terminal: f64,
    /// `exp(-int_{t0}^T gamma)`.
    pub survival: f64,
    /// `int_{t0}^T exp(-int_{t0}^r gamma) U(r, S_r) gamma(r, X_r) dr`.
    pub death_benefit: f64,
}

/// Runs one `P_hat` path from `(t0, s, x)` to maturity on the configured
/// step size. `t0` is rounded to the nearest grid time.
pub fn simulate_probe(
    config: &ScenarioConfig,
    t0: f64,
    s0: f64,
    x0: f64,
    rng: &mut StreamRng,
) -> Result<ProbeSample, SimError> {
    let n = config.n_steps;
    let dt = config.dt();
    let start = (math::round(t0 / dt) as usize).min(n);
    let stepper = Stepper::new(config, Measure::PHat);
    let m = &config.model;
    let recovery = config.contract.death_recovery;
    let (mut s, mut x) = (s0, x0);
    let mut gamma_prev = m.gamma(start as f64 * dt, x);
    let mut cum = 0.0;
    let mut survival = 1.0;
    let mut benefit = 0.0;
    for k in start..n {
        let t = k as f64 * dt;
        let z_w = rng::standard_normal(rng);
        let z_b = rng::standard_normal(rng);
        let out = stepper.step(t, s, x, z_w, z_b)?;
        if !(out.s.is_finite() && out.s > 0.0 && out.x.is_finite()) {
            return Err(SimError::NonFinite { path: 0, step: k + 1, s: out.s, x: out.x });
        }
        let gamma_next = m.gamma(t + dt, out.x);
        cum += 0.5 * (gamma_prev + gamma_next) * dt;
        let survival_next = math::exp(-cum);
        // exp(-int gamma) gamma dr = -d exp(-int gamma)
        benefit += 0.5 * (recovery.eval(t, s) + recovery.eval(t + dt, out.s)) * (survival - survival_next);
        survival = survival_next;
        gamma_prev = gamma_next;
        s = out.s;
        x = out.x;
    }
    Ok(ProbeSample { s_terminal: s, survival, death_benefit: benefit })
}

/// Read-only view of a world stopped at `tau ∧ T`.
#[derive(Clone, Copy, Debug)]
pub struct StoppedView<'a> {
    bundle: &'a PathBundle,
}

impl<'a> StoppedView<'a> {
    fn at(&self, k: usize) -> usize {
        k.min(self.bundle.stop_index())
    }

    pub fn s(&self, k: usize) -> f64 {
        self.bundle.s[self.at(k)]
    }

    pub fn x(&self, k: usize) -> f64 {
        self.bundle.x[self.at(k)]
    }

    pub fn w(&self, k: usize) -> f64 {
        self.bundle.w[self.at(k)]
    }

    /// `S^tau` on the whole grid.
    pub fn s_path(&self) -> Vec<f64> {
        (0..self.bundle.t_grid.len()).map(|k| self.s(k)).collect()
    }

    /// Increment of the jump martingale `M = H - int (1 - H_{t-}) gamma dt`
    /// over step `k - 1 -> k`, `k >= 1`. The compensator uses the same
    /// trapezoidal hazard increment as `Gamma`, so the increments sum to
    /// `H_{T∧tau} - Gamma_{T∧tau}` exactly.
    pub fn delta_m(&self, k: usize) -> f64 {
        let b = self.bundle;
        let h = &b.death.h;
        let alive_before = 1.0 - f64::from(h[k - 1]);
        f64::from(h[k]) - f64::from(h[k - 1]) - alive_before * (b.gamma_cum[k] - b.gamma_cum[k - 1])
    }

    /// `M` on the grid.
    pub fn m_path(&self) -> Vec<f64> {
        let n = self.bundle.n_steps();
        let mut m = Vec::with_capacity(n + 1);
        m.push(0.0);
        for k in 1..=n {
            m.push(m[k - 1] + self.delta_m(k));
        }
        m
    }
}

/// Increments of the stopped innovation process over each grid step:
/// `dI = dW + (mu - p_mu) / sigma dt` while the policyholder is alive at the
/// start of the step, zero afterwards. `p_mu[k]` is the predictable
/// projection of the drift for step `k -> k + 1`.
pub fn innovation_increments(config: &ScenarioConfig, bundle: &PathBundle, p_mu: &[f64]) -> Result<Vec<f64>, SimError> {
    let n = bundle.n_steps();
    if p_mu.len() != n {
        return Err(SimError::GridMismatch { expected: n, got: p_mu.len() });
    }
    let stop = bundle.stop_index();
    let dt = config.dt();
    let m = &config.model;
    Ok((0..n)
        .map(|k| {
            if k >= stop {
                return 0.0;
            }
            let t = bundle.t_grid[k];
            let (s, x) = (bundle.s[k], bundle.x[k]);
            let dw = bundle.w[k + 1] - bundle.w[k];
            dw + (m.mu(t, s, x) - p_mu[k]) / m.sigma(t, s) * dt
        })
        .collect())
}
