//! Hedging strategies, value and cost processes, and backtest diagnostics.
//!
//! Conventions on the simulation grid `t_0 < ... < t_n`:
//!
//! * `theta[k]` is the number of shares held over `(t_k, t_{k+1}]`. It is
//!   computed from information at `t_k` only, so it is predictable. Holdings
//!   are zero from the stop index `tau ∧ T` on.
//! * `V_k = V_hat_k - N_k`, where `V_hat` is the `P_hat` conditional
//!   expectation of the total claim and `N` the payments made so far. On
//!   death at grid index `d`, `V_hat_d = U(t_d, S_d) = N_d` and the value is
//!   exactly zero. On survival `V_hat_n` is read off the PDE terminal slice,
//!   so `V_n` is the payoff interpolation residual.
//! * `eta[k] = V_k - theta[k] S_k` for `k` before the stop index. At the stop
//!   index the pre-liquidation holding `theta[stop - 1]` is used, so the
//!   bond leg makes `V` vanish there.
//! * `C_k = N_k + V_k - sum_{j<k} theta[j] (S^tau_{j+1} - S^tau_j)`.

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::filtering::{self, FilterError, SURVIVAL_FLOOR};
use crate::model::{ModelError, Payoff, Recovery, ScenarioConfig};
use crate::pde::{PdeError, PdeSolution};
use crate::rng::{self, Purpose};
use crate::simulate::{self, Measure, PathBundle, SimError};
use crate::stats::{self, Estimate};

/// Fewest worlds a backtest accepts; below this the standard errors behind
/// the 3-SE tests are not meaningful.
pub const MIN_BACKTEST_PATHS: usize = 30;

/// Number of checkpoints for the cost-increment tests.
pub const CHECKPOINTS: usize = 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HedgeError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Simulation(#[from] SimError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Pde(#[from] PdeError),
    #[error("path {path} leaves the PDE domain at step {step}: t={t}, s={s}, x={x}")]
    DomainExcursion { path: u64, step: usize, t: f64, s: f64, x: f64 },
    #[error("survival mass {mass:e} below {SURVIVAL_FLOOR:e} at step {step}")]
    SurvivalMassExhausted { step: usize, mass: f64 },
    #[error("backtest needs at least {need} paths, got {got}")]
    InsufficientPaths { got: usize, need: usize },
    #[error("series length mismatch: expected {expected}, got {got}")]
    GridMismatch { expected: usize, got: usize },
    #[error("closed form needs rho = 0 and a death benefit of the form delta*s")]
    ClosedFormUnavailable,
}

fn excursion(path: u64, step: usize, e: PdeError) -> HedgeError {
    match e {
        PdeError::OutOfDomain { t, s, x } => HedgeError::DomainExcursion { path, step, t, s, x },
        other => HedgeError::Pde(other),
    }
}

/// What the insurer observes: the price path and the death indicator. The
/// partial-information strategy is computed from this alone.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservedHistory {
    pub index: u64,
    pub t_grid: Vec<f64>,
    pub s: Vec<f64>,
    pub h: Vec<u8>,
}

impl ObservedHistory {
    pub fn from_bundle(bundle: &PathBundle) -> Self {
        ObservedHistory { index: bundle.index, t_grid: bundle.t_grid.clone(), s: bundle.s.clone(), h: bundle.death.h.clone() }
    }

    pub fn n_steps(&self) -> usize {
        self.t_grid.len() - 1
    }

    pub fn death_index(&self) -> Option<usize> {
        self.h.iter().position(|&v| v == 1)
    }

    pub fn stop_index(&self) -> usize {
        self.death_index().unwrap_or(self.n_steps())
    }

    /// `S^tau` on the grid.
    pub fn stopped_s(&self) -> Vec<f64> {
        let stop = self.stop_index();
        (0..self.s.len()).map(|k| self.s[k.min(stop)]).collect()
    }
}

/// Payments `N_t` of the endowment contract on the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct PaymentStream {
    pub n: Vec<f64>,
}

impl PaymentStream {
    pub fn new(config: &ScenarioConfig, history: &ObservedHistory) -> Self {
        let len = history.s.len();
        let mut n = vec![0.0; len];
        match history.death_index() {
            Some(d) => {
                let u = config.contract.death_recovery.eval(history.t_grid[d], history.s[d]);
                n[d..].iter_mut().for_each(|v| *v = u);
            }
            None => n[len - 1] = config.contract.survival_payoff.eval(history.s[len - 1]),
        }
        PaymentStream { n }
    }

    /// `N_{T ∧ tau}`.
    pub fn terminal_claim(&self) -> f64 {
        self.n[self.n.len() - 1]
    }
}

/// Strategy, value, bond leg, cost and payments of one hedge on the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct HedgeSeries {
    /// Holding over `(t_k, t_{k+1}]`; length `n`.
    pub theta: Vec<f64>,
    pub v_hat: Vec<f64>,
    pub value: Vec<f64>,
    pub eta: Vec<f64>,
    pub cost: Vec<f64>,
    pub payments: Vec<f64>,
    /// `int_0^t theta dS^tau`.
    pub gains: Vec<f64>,
    pub stop: usize,
}

impl HedgeSeries {
    /// `V_{T ∧ tau}`.
    pub fn terminal_value(&self) -> f64 {
        self.value[self.stop]
    }
}

/// Strategy and value estimate of one hedge before assembly.
#[derive(Clone, Debug, PartialEq)]
pub struct StrategyPath {
    /// Length `n`, zero from the stop index on.
    pub theta: Vec<f64>,
    /// Length `n + 1`, frozen from the stop index on.
    pub v_hat: Vec<f64>,
    /// Filtered `p_mu` per step before the stop (partial information only;
    /// empty for full information).
    pub p_mu: Vec<f64>,
}

fn terminal_v_hat(config: &ScenarioConfig, history: &ObservedHistory, death: Option<usize>, survival_value: f64) -> f64 {
    match death {
        Some(d) => config.contract.death_recovery.eval(history.t_grid[d], history.s[d]),
        None => survival_value,
    }
}

fn freeze(v: &mut [f64], stop: usize) {
    let last = v[stop];
    v[stop..].iter_mut().for_each(|x| *x = last);
}

/// Full-information strategy `theta^F = g_s + rho a / (S sigma) g_x` along a
/// world, with the value estimate `V_hat = g(t, S, X)` before the stop.
pub fn full_information(config: &ScenarioConfig, bundle: &PathBundle, g: &PdeSolution) -> Result<StrategyPath, HedgeError> {
    let n = bundle.n_steps();
    let stop = bundle.stop_index();
    let m = &config.model;
    let mut theta = vec![0.0; n];
    let mut v_hat = vec![0.0; n + 1];
    let history = ObservedHistory::from_bundle(bundle);
    for k in 0..=stop {
        let (t, s, x) = (bundle.t_grid[k], bundle.s[k], bundle.x[k]);
        if k == stop {
            let survival = if bundle.death.index.is_none() {
                g.value(t, s, x).map_err(|e| excursion(bundle.index, k, e))?
            } else {
                0.0
            };
            v_hat[k] = terminal_v_hat(config, &history, bundle.death.index, survival);
            break;
        }
        let p = g.eval(t, s, x).map_err(|e| excursion(bundle.index, k, e))?;
        theta[k] = p.d_s + m.rho * m.a(t, x) / (s * m.sigma(t, s)) * p.d_x;
        v_hat[k] = p.value;
    }
    freeze(&mut v_hat, stop);
    Ok(StrategyPath { theta, v_hat, p_mu: Vec::new() })
}

/// `theta^F` alone.
pub fn theta_full(config: &ScenarioConfig, bundle: &PathBundle, g: &PdeSolution) -> Result<Vec<f64>, HedgeError> {
    Ok(full_information(config, bundle, g)?.theta)
}

/// Partial-information strategy and value from the observed history and a
/// particle filter:
/// `theta* = [pi(y g_s) + rho / (sigma S) pi(a y g_x)] / pi(y)` and
/// `V_hat = pi(y g) / pi(y)`, both read from the cloud at `t_k`.
/// The filter draws from the stream `(seed, Particles, history.index)`.
pub fn partial_information(config: &ScenarioConfig, history: &ObservedHistory, g: &PdeSolution) -> Result<StrategyPath, HedgeError> {
    let rng = rng::stream(config.seed, Purpose::Particles, history.index);
    partial_information_with(config, history, g, config.n_particles, rng)
}

pub fn partial_information_with(
    config: &ScenarioConfig,
    history: &ObservedHistory,
    g: &PdeSolution,
    n_particles: usize,
    rng: rng::StreamRng,
) -> Result<StrategyPath, HedgeError> {
    let n = history.n_steps();
    if n != config.n_steps {
        return Err(HedgeError::GridMismatch { expected: config.n_steps, got: n });
    }
    let death = history.death_index();
    let stop = history.stop_index();
    let m = &config.model;
    let mut cloud = filtering::init_cloud_with(config, &history.s, n_particles, rng)?;
    let mut theta = vec![0.0; n];
    let mut v_hat = vec![0.0; n + 1];
    let mut p_mu = vec![0.0; n];
    for k in 0..=stop {
        let (t, s) = (history.t_grid[k], history.s[k]);
        if k == stop && death.is_some() {
            v_hat[k] = terminal_v_hat(config, history, death, 0.0);
            break;
        }
        let (mut num_s, mut num_x, mut num_v, mut den) = (0.0, 0.0, 0.0, 0.0);
        for p in cloud.particles() {
            let e = g.eval(t, s, p.x).map_err(|e| excursion(history.index, k, e))?;
            num_s += p.y * e.d_s;
            num_x += m.a(t, p.x) * p.y * e.d_x;
            num_v += p.y * e.value;
            den += p.y;
        }
        let mass = den / cloud.len() as f64;
        if !(mass >= SURVIVAL_FLOOR) {
            return Err(HedgeError::SurvivalMassExhausted { step: k, mass });
        }
        v_hat[k] = num_v / den;
        if k == stop {
            break;
        }
        theta[k] = (num_s + m.rho / (m.sigma(t, s) * s) * num_x) / den;
        p_mu[k] = cloud.project_mu()?.mean;
        cloud.step()?;
    }
    freeze(&mut v_hat, stop);
    Ok(StrategyPath { theta, v_hat, p_mu })
}

/// `theta*` alone.
pub fn theta_partial(config: &ScenarioConfig, history: &ObservedHistory, g: &PdeSolution) -> Result<Vec<f64>, HedgeError> {
    Ok(partial_information(config, history, g)?.theta)
}

/// Assembles `V`, `eta` and `C` from a strategy and value estimate.
pub fn eta_and_value(
    history: &ObservedHistory,
    strategy: &StrategyPath,
    payments: &PaymentStream,
) -> Result<HedgeSeries, HedgeError> {
    let n = history.n_steps();
    if strategy.theta.len() != n {
        return Err(HedgeError::GridMismatch { expected: n, got: strategy.theta.len() });
    }
    if strategy.v_hat.len() != n + 1 || payments.n.len() != n + 1 {
        return Err(HedgeError::GridMismatch { expected: n + 1, got: strategy.v_hat.len().min(payments.n.len()) });
    }
    let stop = history.stop_index();
    let s = history.stopped_s();
    let mut gains = vec![0.0; n + 1];
    for k in 0..n {
        gains[k + 1] = gains[k] + strategy.theta[k] * (s[k + 1] - s[k]);
    }
    let value: Vec<f64> = strategy.v_hat.iter().zip(&payments.n).map(|(v, p)| v - p).collect();
    let eta = (0..=n)
        .map(|k| {
            let held = if k < stop { strategy.theta[k] } else { strategy.theta[stop - 1] };
            value[k] - held * s[k]
        })
        .collect();
    let cost = (0..=n).map(|k| payments.n[k] + value[k] - gains[k]).collect();
    Ok(HedgeSeries {
        theta: strategy.theta.clone(),
        v_hat: strategy.v_hat.clone(),
        value,
        eta,
        cost,
        payments: payments.n.clone(),
        gains,
        stop,
    })
}

/// Death benefit slope `delta` for `U = delta s` (zero for no benefit).
fn recovery_delta(recovery: Recovery) -> Option<f64> {
    match recovery {
        Recovery::Zero => Some(0.0),
        Recovery::Linear { delta } => Some(delta),
        Recovery::Constant { .. } => None,
    }
}

/// Survival curve `E[Y_t]` on the simulation grid from the `Phi` solution,
/// using time homogeneity: `E[Y_t] = Phi(T - t, x0)`.
pub fn survival_curve(config: &ScenarioConfig, phi: &PdeSolution) -> Result<Vec<f64>, HedgeError> {
    let t_max = config.maturity();
    config
        .time_grid()
        .iter()
        .map(|&t| Ok(phi.value((t_max - t).max(0.0), config.s0, config.x0)?))
        .collect()
}

/// Closed-form strategies when `rho = 0` and `U = delta s`. `survival[k]`
/// is `E[Y_{t_k}]`.
#[derive(Clone, Debug)]
pub struct ClosedForm<'a> {
    pub gtilde: &'a PdeSolution,
    pub phi: &'a PdeSolution,
    pub survival: Vec<f64>,
    pub delta: f64,
}

impl<'a> ClosedForm<'a> {
    pub fn new(config: &ScenarioConfig, gtilde: &'a PdeSolution, phi: &'a PdeSolution, survival: Vec<f64>) -> Result<Self, HedgeError> {
        let delta = recovery_delta(config.contract.death_recovery).ok_or(HedgeError::ClosedFormUnavailable)?;
        if config.model.rho != 0.0 {
            return Err(HedgeError::ClosedFormUnavailable);
        }
        if survival.len() != config.n_steps + 1 {
            return Err(HedgeError::GridMismatch { expected: config.n_steps + 1, got: survival.len() });
        }
        Ok(ClosedForm { gtilde, phi, survival, delta })
    }

    /// `g = g~ Phi + delta s (1 - Phi)`.
    pub fn value_full(&self, t: f64, s: f64, x: f64) -> Result<f64, PdeError> {
        let phi = self.phi.value(t, s, x)?;
        Ok(self.gtilde.value(t, s, x)? * phi + self.delta * s * (1.0 - phi))
    }

    /// `theta^F = (g~_s - delta) Phi(t, x) + delta`.
    pub fn theta_full(&self, t: f64, s: f64, x: f64) -> Result<f64, PdeError> {
        let phi = self.phi.value(t, s, x)?;
        Ok((self.gtilde.d_s(t, s, x)? - self.delta) * phi + self.delta)
    }

    /// `theta* = ((g~_s - delta) E[Y_T] + delta E[Y_t]) / E[Y_t]` at grid index `k`.
    pub fn theta_partial(&self, k: usize, t: f64, s: f64) -> Result<f64, PdeError> {
        let ey_t = self.survival[k];
        let ey_n = self.survival[self.survival.len() - 1];
        Ok(((self.gtilde.d_s(t, s, 0.0)? - self.delta) * ey_n + self.delta * ey_t) / ey_t)
    }

    /// `theta*` along an observed history; zero from the stop index on.
    pub fn theta_partial_path(&self, history: &ObservedHistory) -> Result<Vec<f64>, HedgeError> {
        let stop = history.stop_index();
        (0..history.n_steps())
            .map(|k| {
                if k >= stop {
                    return Ok(0.0);
                }
                self.theta_partial(k, history.t_grid[k], history.s[k]).map_err(|e| excursion(history.index, k, e))
            })
            .collect()
    }
}

/// Everything the backtest keeps about one world.
#[derive(Clone, Debug, PartialEq)]
pub struct PathOutcome {
    pub index: u64,
    pub history: ObservedHistory,
    pub partial: HedgeSeries,
    pub full: HedgeSeries,
    /// `p_mu` read from the filter for each step before the stop, zero after.
    pub p_mu: Vec<f64>,
    /// `N_{T ∧ tau}` on the `P_hat` world with the same index.
    pub claim_hat: f64,
}

/// Runs both strategies on `P` world `index` and the claim on the matching
/// `P_hat` world.
pub fn backtest_path(config: &ScenarioConfig, g: &PdeSolution, index: u64) -> Result<PathOutcome, HedgeError> {
    let bundle = simulate::simulate_path(config, Measure::P, index)?;
    let history = ObservedHistory::from_bundle(&bundle);
    let payments = PaymentStream::new(config, &history);
    let star = partial_information(config, &history, g)?;
    let partial = eta_and_value(&history, &star, &payments)?;
    let full = eta_and_value(&history, &full_information(config, &bundle, g)?, &payments)?;
    let p_mu = star.p_mu;
    let hat = simulate::simulate_path(config, Measure::PHat, index)?;
    let claim_hat = PaymentStream::new(config, &ObservedHistory::from_bundle(&hat)).terminal_claim();
    Ok(PathOutcome { index, history, partial, full, p_mu, claim_hat })
}

/// One 3-SE test.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct ZTest {
    pub estimate: f64,
    pub se: f64,
    pub z: f64,
    pub pass: bool,
}

impl ZTest {
    pub fn new(estimate: f64, se: f64) -> Self {
        let z = stats::z_score(estimate, se);
        ZTest { estimate, se, z, pass: z.abs() < 3.0 }
    }

    pub fn from_estimate(e: Estimate) -> Self {
        ZTest::new(e.mean, e.se)
    }
}

/// Cross-path diagnostics of a backtest.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct HedgeReport {
    pub n_paths: usize,
    /// `g(0, s0, x0)`.
    pub zeta0_pde: f64,
    /// Monte Carlo `E_hat[N_{T ∧ tau}]`.
    pub zeta0_mc: Estimate,
    pub checkpoints: Vec<usize>,
    /// Mean of `C_{k_j} - C_{k_{j-1}}` across paths for each checkpoint.
    pub cost_increments: Vec<ZTest>,
    /// Per-path `sum_j dC_j dS^tau_j` over checkpoint blocks.
    pub orthogonality: ZTest,
    /// Sample covariance of block increments `dC_j`, `dS^tau_j` (descriptive).
    pub covariance_s: Vec<ZTest>,
    /// Sample covariance of `dC_j` with `dM_j = dS^tau - p_mu S dt` (descriptive).
    pub covariance_m: Vec<ZTest>,
    /// `E_P[N - int theta* dS^tau]`.
    pub price_lhs: Estimate,
    /// `lhs - zeta0_mc` with the combined standard error.
    pub price_identity: ZTest,
    pub max_terminal_value: f64,
    pub discretization_bound: f64,
    pub terminal_value_pass: bool,
    /// Variance of `C_{T ∧ tau} - C_0` for the partial and the full strategy.
    pub cost_variance_partial: f64,
    pub cost_variance_full: f64,
    pub full_max_terminal_value: f64,
}

impl HedgeReport {
    pub fn mean_self_financing_pass(&self) -> bool {
        self.cost_increments.iter().all(|t| t.pass)
    }

    /// The statistical clauses plus the 0-achieving check.
    pub fn passed(&self) -> bool {
        self.mean_self_financing_pass() && self.orthogonality.pass && self.price_identity.pass && self.terminal_value_pass
    }
}

/// Checkpoint grid indices `round(j n / 8)`, `j = 0..=8`.
pub fn checkpoints(n: usize) -> Vec<usize> {
    (0..=CHECKPOINTS).map(|j| (j * n + CHECKPOINTS / 2) / CHECKPOINTS).collect()
}

/// Bound on `|V_{T ∧ tau}|`: the interpolation error of the payoff on the
/// PDE `s` grid plus a rounding allowance.
pub fn discretization_bound(config: &ScenarioConfig, g: &PdeSolution) -> f64 {
    let payoff = config.contract.survival_payoff;
    let scale = match payoff {
        Payoff::Constant { k } => k,
        Payoff::Linear { delta } => delta * config.pde_grid.s_max,
        Payoff::Call { .. } | Payoff::Put { .. } => config.pde_grid.s_max,
    };
    g.terminal_interpolation_error(|s| payoff.eval(s)) + 1e-10 * (1.0 + scale)
}

/// Reduces per-path outcomes, in index order, to the report.
pub fn aggregate(config: &ScenarioConfig, g: &PdeSolution, outcomes: &[PathOutcome]) -> Result<HedgeReport, HedgeError> {
    let n_paths = outcomes.len();
    if n_paths < MIN_BACKTEST_PATHS {
        return Err(HedgeError::InsufficientPaths { got: n_paths, need: MIN_BACKTEST_PATHS });
    }
    let n = config.n_steps;
    let dt = config.dt();
    let cps = checkpoints(n);
    let blocks = cps.len() - 1;

    let mut cost_increments = Vec::with_capacity(blocks);
    let mut covariance_s = Vec::with_capacity(blocks);
    let mut covariance_m = Vec::with_capacity(blocks);
    let mut realized = vec![0.0; n_paths];
    for j in 0..blocks {
        let (a, b) = (cps[j], cps[j + 1]);
        let mut dc = Vec::with_capacity(n_paths);
        let mut ds = Vec::with_capacity(n_paths);
        let mut dm = Vec::with_capacity(n_paths);
        for (i, o) in outcomes.iter().enumerate() {
            let s = o.history.stopped_s();
            let c = &o.partial.cost;
            let d_c = c[b] - c[a];
            let d_s = s[b] - s[a];
            let drift: f64 = (a..b).filter(|&k| k < o.partial.stop).map(|k| o.p_mu[k] * s[k] * dt).sum();
            realized[i] += d_c * d_s;
            dc.push(d_c);
            ds.push(d_s);
            dm.push(d_s - drift);
        }
        cost_increments.push(ZTest::from_estimate(stats::mean_se(&dc)));
        covariance_s.push(ZTest::from_estimate(stats::covariance_se(&dc, &ds)));
        covariance_m.push(ZTest::from_estimate(stats::covariance_se(&dc, &dm)));
    }
    let orthogonality = ZTest::from_estimate(stats::mean_se(&realized));

    let lhs: Vec<f64> = outcomes.iter().map(|o| o.partial.payments[n] - o.partial.gains[n]).collect();
    let claims: Vec<f64> = outcomes.iter().map(|o| o.claim_hat).collect();
    let price_lhs = stats::mean_se(&lhs);
    let zeta0_mc = stats::mean_se(&claims);
    let price_identity = ZTest::new(price_lhs.mean - zeta0_mc.mean, libm::hypot(price_lhs.se, zeta0_mc.se));

    let max_terminal_value = outcomes.iter().map(|o| o.partial.terminal_value().abs()).fold(0.0, f64::max);
    let full_max_terminal_value = outcomes.iter().map(|o| o.full.terminal_value().abs()).fold(0.0, f64::max);
    let discretization_bound = discretization_bound(config, g);

    let total = |h: &HedgeSeries| h.cost[n] - h.cost[0];
    let cost_variance_partial = stats::variance(&outcomes.iter().map(|o| total(&o.partial)).collect::<Vec<_>>());
    let cost_variance_full = stats::variance(&outcomes.iter().map(|o| total(&o.full)).collect::<Vec<_>>());

    Ok(HedgeReport {
        n_paths,
        zeta0_pde: g.value(0.0, config.s0, config.x0)?,
        zeta0_mc,
        checkpoints: cps,
        cost_increments,
        orthogonality,
        covariance_s,
        covariance_m,
        price_lhs,
        price_identity,
        max_terminal_value,
        discretization_bound,
        terminal_value_pass: max_terminal_value <= discretization_bound,
        cost_variance_partial,
        cost_variance_full,
        full_max_terminal_value,
    })
}

/// Serial backtest over worlds `0..config.n_paths`.
pub fn backtest(config: &ScenarioConfig, g: &PdeSolution) -> Result<(HedgeReport, Vec<PathOutcome>), HedgeError> {
    if config.n_paths < MIN_BACKTEST_PATHS {
        return Err(HedgeError::InsufficientPaths { got: config.n_paths, need: MIN_BACKTEST_PATHS });
    }
    let outcomes = (0..config.n_paths as u64).map(|i| backtest_path(config, g, i)).collect::<Result<Vec<_>, _>>()?;
    let report = aggregate(config, g, &outcomes)?;
    Ok((report, outcomes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::{base, cir};
    use crate::model::{FactorModel, HazardModel};
    use crate::oracle;
    use crate::pde;

    fn affine(mut c: ScenarioConfig) -> ScenarioConfig {
        c.contract.survival_payoff = Payoff::Linear { delta: 0.8 };
        c.contract.death_recovery = Recovery::Linear { delta: 0.8 };
        c
    }

    #[test]
    fn payment_stream_on_death_and_survival() {
        let mut c = cir();
        c.contract.death_recovery = Recovery::Linear { delta: 0.5 };
        let mut h = ObservedHistory { index: 0, t_grid: c.time_grid(), s: vec![1.2; 51], h: vec![0; 51] };
        let p = PaymentStream::new(&c, &h);
        assert!(p.n[..50].iter().all(|&v| v == 0.0));
        assert!((p.terminal_claim() - 0.2).abs() < 1e-15);
        h.h[20..].iter_mut().for_each(|v| *v = 1);
        let p = PaymentStream::new(&c, &h);
        assert!(p.n[..20].iter().all(|&v| v == 0.0));
        assert!(p.n[20..].iter().all(|&v| v == 0.6));
        // at most one jump
        assert_eq!(p.n.windows(2).filter(|w| w[0] != w[1]).count(), 1);
    }

    #[test]
    fn affine_contract_gives_constant_strategies() {
        let mut c = affine(cir());
        c.model.rho = 0.5;
        c.n_particles = 50;
        let g = pde::solve_g(&c).unwrap();
        for i in 0..5 {
            let bundle = simulate::simulate_path(&c, Measure::P, i).unwrap();
            let h = ObservedHistory::from_bundle(&bundle);
            let stop = h.stop_index();
            let star = partial_information(&c, &h, &g).unwrap();
            let full = full_information(&c, &bundle, &g).unwrap();
            for k in 0..stop {
                assert!((star.theta[k] - 0.8).abs() < 1e-8);
                assert!((full.theta[k] - 0.8).abs() < 1e-8);
            }
            let series = eta_and_value(&h, &star, &PaymentStream::new(&c, &h)).unwrap();
            assert!((series.v_hat[0] - 0.8).abs() < 1e-8);
            assert!(series.terminal_value().abs() < 1e-8);
            // C_t = N_t + V_t - gains holds by construction
            for k in 0..=c.n_steps {
                let lhs = series.cost[k];
                assert_eq!(lhs, series.payments[k] + series.value[k] - series.gains[k]);
            }
        }
    }

    #[test]
    fn dirac_filter_reproduces_full_information() {
        let mut c = base();
        c.model.rho = 0.4;
        c.model.price.m1 = 0.5;
        c.model.factor = FactorModel::Ou { kappa: 2.0, theta: 0.1, a: 0.0 };
        c.contract.death_recovery = Recovery::Linear { delta: 0.3 };
        c.c_bound = 5.0;
        c.n_particles = 7;
        let g = pde::solve_g(&c).unwrap();
        for i in 0..5 {
            let bundle = simulate::simulate_path(&c, Measure::P, i).unwrap();
            let star = partial_information(&c, &ObservedHistory::from_bundle(&bundle), &g).unwrap();
            let full = full_information(&c, &bundle, &g).unwrap();
            for (a, b) in star.theta.iter().zip(&full.theta) {
                assert!((a - b).abs() < 1e-12);
            }
            for (a, b) in star.v_hat.iter().zip(&full.v_hat) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn initial_value_is_price() {
        let c = cir();
        let g = pde::solve_g(&c).unwrap();
        let bundle = simulate::simulate_path(&c, Measure::P, 3).unwrap();
        let star = partial_information(&c, &ObservedHistory::from_bundle(&bundle), &g).unwrap();
        let g0 = g.value(0.0, c.s0, c.x0).unwrap();
        assert!((star.v_hat[0] - g0).abs() < 1e-12);
    }

    #[test]
    fn value_vanishes_at_death() {
        let mut c = cir();
        c.model.hazard = HazardModel::Constant { gamma0: 2.0 };
        c.contract.death_recovery = Recovery::Linear { delta: 0.9 };
        c.n_particles = 20;
        let g = pde::solve_g(&c).unwrap();
        let mut seen = 0;
        for i in 0..20 {
            let bundle = simulate::simulate_path(&c, Measure::P, i).unwrap();
            let Some(d) = bundle.death.index else { continue };
            seen += 1;
            let h = ObservedHistory::from_bundle(&bundle);
            let series = eta_and_value(&h, &partial_information(&c, &h, &g).unwrap(), &PaymentStream::new(&c, &h)).unwrap();
            assert_eq!(series.stop, d);
            assert_eq!(series.value[d], 0.0);
            let jump = series.cost[d] - series.cost[d - 1];
            let expect = 0.9 * h.s[d] - series.v_hat[d - 1] - series.theta[d - 1] * (h.s[d] - h.s[d - 1]);
            assert!((jump - expect).abs() < 1e-12);
            assert!(series.theta[d..].iter().all(|&t| t == 0.0));
            assert!(series.cost[d..].iter().all(|&v| v == series.cost[d]));
            // bond leg at death offsets the pre-liquidation stock holding
            assert!((series.eta[d] + series.theta[d - 1] * h.s[d]).abs() < 1e-12);
        }
        assert!(seen > 5);
    }

    #[test]
    fn black_scholes_replication() {
        let mut c = base();
        c.model.hazard = HazardModel::Constant { gamma0: 0.0 };
        c.pde_grid.n_s = 200;
        c.pde_grid.n_x = 4;
        c.pde_grid.n_t = Some(200);
        c.n_particles = 4;
        let g = pde::solve_g(&c).unwrap();
        let bundle = simulate::simulate_path(&c, Measure::P, 0).unwrap();
        let h = ObservedHistory::from_bundle(&bundle);
        let series = eta_and_value(&h, &partial_information(&c, &h, &g).unwrap(), &PaymentStream::new(&c, &h)).unwrap();
        for k in [0usize, 10, 25, 40] {
            let (t, s) = (h.t_grid[k], h.s[k]);
            let tau = 1.0 - t;
            let price = oracle::bs_call(s, 1.0, 0.2, tau);
            let delta = oracle::bs_call_delta(s, 1.0, 0.2, tau);
            assert!((series.value[k] / price - 1.0).abs() < 0.01, "k={k}");
            assert!((series.theta[k] / delta - 1.0).abs() < 0.01, "k={k}");
            let bond = price - s * delta;
            assert!((series.eta[k] - bond).abs() < 0.01 * bond.abs().max(0.01), "k={k}");
        }
    }

    #[test]
    fn endowment_decomposes_into_its_parts() {
        let mut c = cir();
        c.model.rho = 0.3;
        c.contract.death_recovery = Recovery::Linear { delta: 0.6 };
        c.n_particles = 30;
        let mut pure = c.clone();
        pure.contract.death_recovery = Recovery::Zero;
        let mut term = c.clone();
        term.contract.survival_payoff = Payoff::Constant { k: 0.0 };
        let (g, g_pure, g_term) = (pde::solve_g(&c).unwrap(), pde::solve_g(&pure).unwrap(), pde::solve_g(&term).unwrap());
        let h = ObservedHistory::from_bundle(&simulate::simulate_path(&c, Measure::P, 1).unwrap());
        let a = partial_information(&c, &h, &g).unwrap();
        let b = partial_information(&pure, &h, &g_pure).unwrap();
        let t = partial_information(&term, &h, &g_term).unwrap();
        for k in 0..c.n_steps {
            assert!((a.theta[k] - b.theta[k] - t.theta[k]).abs() < 1e-10);
        }
        for k in 0..h.stop_index() {
            assert!((a.v_hat[k] - b.v_hat[k] - t.v_hat[k]).abs() < 1e-10);
        }
    }

    #[test]
    fn closed_form_routes_agree_at_rho_zero() {
        let mut c = cir();
        c.contract.death_recovery = Recovery::Linear { delta: 0.5 };
        c.pde_grid.n_x = 60;
        let g = pde::solve_g(&c).unwrap();
        let gt = pde::solve_gtilde(&c).unwrap();
        let phi = pde::solve_phi(&c).unwrap();
        let cf = ClosedForm::new(&c, &gt, &phi, survival_curve(&c, &phi).unwrap()).unwrap();
        for &(t, s, x) in &[(0.0, 1.0, 0.05), (0.5, 0.8, 0.1), (0.8, 1.3, 0.02)] {
            let direct = g.d_s(t, s, x).unwrap();
            let closed = cf.theta_full(t, s, x).unwrap();
            assert!((direct / closed - 1.0).abs() < 0.01, "{t} {s} {x}: {direct} {closed}");
            let v = g.value(t, s, x).unwrap();
            assert!((v / cf.value_full(t, s, x).unwrap() - 1.0).abs() < 0.01);
        }
    }

    #[test]
    fn survival_curve_matches_riccati() {
        let mut c = cir();
        c.pde_grid.n_x = 120;
        c.pde_grid.x_max = 0.8;
        c.pde_grid.n_t = Some(200);
        let phi = pde::solve_phi(&c).unwrap();
        let curve = survival_curve(&c, &phi).unwrap();
        for (k, &t) in c.time_grid().iter().enumerate() {
            let exact = oracle::cir_affine_survival(1.0, 0.05, 0.2, 0.0, 1.0, 0.05, t);
            assert!((curve[k] / exact - 1.0).abs() < 1e-3, "{t}: {} {exact}", curve[k]);
        }
    }

    #[test]
    fn too_few_paths_rejected() {
        let mut c = cir();
        c.n_paths = 5;
        let g = pde::solve_g(&c).unwrap();
        assert!(matches!(backtest(&c, &g), Err(HedgeError::InsufficientPaths { got: 5, .. })));
    }

    #[test]
    fn checkpoint_grid() {
        assert_eq!(checkpoints(48), vec![0, 6, 12, 18, 24, 30, 36, 42, 48]);
        let c = checkpoints(50);
        assert_eq!((c[0], c[8]), (0, 50));
        assert!(c.windows(2).all(|w| w[1] > w[0]));
    }
}
