//! Coefficient families, contracts and the scenario configuration.
//!
//! The market is a single risky asset `S` with volatility `sigma(t, s)` and
//! drift `mu(t, s, x)`, a hidden factor `X` with drift `b(t, x)` and
//! volatility `a(t, x)`, Brownian correlation `rho`, and a mortality
//! intensity `gamma(t, x)`. The riskless asset is the numeraire and equals 1.
//!
//! The families shipped here are time-homogeneous; every coefficient still
//! takes `t` so time-dependent families fit the same interface.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("market price of risk |mu/sigma| = {ratio} exceeds c_bound = {bound} at (t={t}, s={s}, x={x})")]
    BoundViolation { t: f64, s: f64, x: f64, ratio: f64, bound: f64 },
    #[error("price must be strictly positive, got s = {0}")]
    NonPositivePrice(f64),
    #[error("sigma must be strictly positive, got {0}")]
    NonPositiveSigma(f64),
}

/// Asset coefficients: constant volatility and a drift affine in the factor,
/// `mu(t, s, x) = m0 + m1 * x`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriceModel {
    pub sigma: f64,
    pub m0: f64,
    pub m1: f64,
}

/// Mean-reverting factor, `b(t, x) = kappa * (theta - x)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FactorModel {
    /// Constant volatility `a`.
    Ou { kappa: f64, theta: f64, a: f64 },
    /// Volatility `a * sqrt(max(x, 0))`.
    Cir { kappa: f64, theta: f64, a: f64 },
}

/// Mortality intensity families. The factor enters through `max(x, 0)` so
/// the intensity stays nonnegative when an OU factor dips below zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HazardModel {
    Constant { gamma0: f64 },
    Linear,
    Affine { gamma0: f64, gamma1: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFamily {
    pub price: PriceModel,
    pub factor: FactorModel,
    pub hazard: HazardModel,
    pub rho: f64,
}

/// The five coefficient values at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoefficientValues {
    pub mu: f64,
    pub sigma: f64,
    pub b: f64,
    pub a: f64,
    pub gamma: f64,
}

impl ModelFamily {
    #[inline]
    pub fn mu(&self, _t: f64, _s: f64, x: f64) -> f64 {
        self.price.m0 + self.price.m1 * x
    }

    #[inline]
    pub fn sigma(&self, _t: f64, _s: f64) -> f64 {
        self.price.sigma
    }

    #[inline]
    pub fn b(&self, _t: f64, x: f64) -> f64 {
        match self.factor {
            FactorModel::Ou { kappa, theta, .. } | FactorModel::Cir { kappa, theta, .. } => {
                kappa * (theta - x)
            }
        }
    }

    #[inline]
    pub fn a(&self, _t: f64, x: f64) -> f64 {
        match self.factor {
            FactorModel::Ou { a, .. } => a,
            FactorModel::Cir { a, .. } => a * math::sqrt(x.max(0.0)),
        }
    }

    #[inline]
    pub fn gamma(&self, _t: f64, x: f64) -> f64 {
        match self.hazard {
            HazardModel::Constant { gamma0 } => gamma0,
            HazardModel::Linear => x.max(0.0),
            HazardModel::Affine { gamma0, gamma1 } => gamma0 + gamma1 * x.max(0.0),
        }
    }

    #[inline]
    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// `true` when `mu` does not depend on the factor.
    pub fn drift_is_observable(&self) -> bool {
        self.price.m1 == 0.0
    }
}

/// Survival benefit `G(T, s)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Payoff {
    Constant { k: f64 },
    Linear { delta: f64 },
    Call { strike: f64 },
    Put { strike: f64 },
}

impl Payoff {
    #[inline]
    pub fn eval(&self, s: f64) -> f64 {
        match *self {
            Payoff::Constant { k } => k,
            Payoff::Linear { delta } => delta * s,
            Payoff::Call { strike } => (s - strike).max(0.0),
            Payoff::Put { strike } => (strike - s).max(0.0),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(*self, Payoff::Constant { k } if k == 0.0)
            || matches!(*self, Payoff::Linear { delta } if delta == 0.0)
    }
}

/// Death benefit `U(t, s)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Recovery {
    Zero,
    Linear { delta: f64 },
    Constant { k: f64 },
}

impl Recovery {
    #[inline]
    pub fn eval(&self, _t: f64, s: f64) -> f64 {
        match *self {
            Recovery::Zero => 0.0,
            Recovery::Linear { delta } => delta * s,
            Recovery::Constant { k } => k,
        }
    }

    pub fn is_zero(&self) -> bool {
        match *self {
            Recovery::Zero => true,
            Recovery::Linear { delta } => delta == 0.0,
            Recovery::Constant { k } => k == 0.0,
        }
    }
}

/// What kind of policy a contract amounts to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ContractKind {
    /// Survival benefit only.
    TermInsurance,
    /// Death benefit only.
    PureEndowment,
    /// Both benefits.
    EndowmentInsurance,
    /// Neither benefit pays anything.
    Void,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Contract {
    pub maturity: f64,
    pub survival_payoff: Payoff,
    pub death_recovery: Recovery,
}

impl Contract {
    /// Classification used in reports. The naming follows the convention
    /// that a zero death benefit with a survival benefit is a term
    /// insurance, and the reverse a pure endowment.
    pub fn kind(&self) -> ContractKind {
        match (self.survival_payoff.is_zero(), self.death_recovery.is_zero()) {
            (false, true) => ContractKind::TermInsurance,
            (true, false) => ContractKind::PureEndowment,
            (false, false) => ContractKind::EndowmentInsurance,
            (true, true) => ContractKind::Void,
        }
    }
}

/// Finite-difference domain for the backward problems.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdeGrid {
    /// Number of `s` intervals on `[0, s_max]`.
    pub n_s: usize,
    /// Number of `x` intervals on `[x_min, x_max]`.
    pub n_x: usize,
    pub s_max: f64,
    pub x_min: f64,
    pub x_max: f64,
    /// Number of time steps; defaults to the simulation `n_steps`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_t: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub model: ModelFamily,
    pub contract: Contract,
    pub s0: f64,
    pub x0: f64,
    pub n_steps: usize,
    pub n_paths: usize,
    pub n_particles: usize,
    pub pde_grid: PdeGrid,
    pub seed: u64,
    pub c_bound: f64,
}

/// Outcome of [`validate`]: an empty violation list means the configuration
/// passed.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    fn require(&mut self, ok: bool, msg: impl FnOnce() -> String) {
        if !ok {
            self.violations.push(msg());
        }
    }
}

/// Number of sample points per axis used when probing the coefficient bound.
const PROBE_POINTS: usize = 17;

impl ScenarioConfig {
    #[inline]
    pub fn maturity(&self) -> f64 {
        self.contract.maturity
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.contract.maturity / self.n_steps as f64
    }

    /// Uniform simulation grid `t_k = k T / n_steps`, `k = 0..=n_steps`.
    pub fn time_grid(&self) -> Vec<f64> {
        let dt = self.dt();
        (0..=self.n_steps).map(|k| k as f64 * dt).collect()
    }

    pub fn pde_time_steps(&self) -> usize {
        self.pde_grid.n_t.unwrap_or(self.n_steps)
    }

    /// Market price of risk `mu / sigma`, checked against `c_bound`.
    #[inline]
    pub fn kernel(&self, t: f64, s: f64, x: f64) -> Result<f64, ModelError> {
        let sigma = self.model.sigma(t, s);
        let ratio = self.model.mu(t, s, x) / sigma;
        if ratio.abs() > self.c_bound || !ratio.is_finite() {
            return Err(ModelError::BoundViolation { t, s, x, ratio, bound: self.c_bound });
        }
        Ok(ratio)
    }

    /// Evaluates all five coefficients at `(t, s, x)`.
    pub fn evaluate(&self, t: f64, s: f64, x: f64) -> Result<CoefficientValues, ModelError> {
        if !(s > 0.0) {
            return Err(ModelError::NonPositivePrice(s));
        }
        let sigma = self.model.sigma(t, s);
        if !(sigma > 0.0) {
            return Err(ModelError::NonPositiveSigma(sigma));
        }
        self.kernel(t, s, x)?;
        let m = &self.model;
        Ok(CoefficientValues { mu: m.mu(t, s, x), sigma, b: m.b(t, x), a: m.a(t, x), gamma: m.gamma(t, x) })
    }

    /// Probe points of the configured `(t, s, x)` domain.
    pub fn probe_domain(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        let n = PROBE_POINTS - 1;
        let g = &self.pde_grid;
        let t_max = self.contract.maturity;
        (0..=n).flat_map(move |i| {
            (0..=n).flat_map(move |j| {
                (0..=n).map(move |k| {
                    let t = t_max * i as f64 / n as f64;
                    // s > 0 strictly: the first probe sits one step above 0
                    let s = g.s_max * (j.max(1)) as f64 / n as f64;
                    let x = g.x_min + (g.x_max - g.x_min) * k as f64 / n as f64;
                    (t, s, x)
                })
            })
        })
    }
}

fn finite_nonneg(v: f64) -> bool {
    v.is_finite() && v >= 0.0
}

/// Checks parameter domains, grid sizes and the coefficient bound on the
/// configured domain. Never fails; returns every violation found.
pub fn validate(config: &ScenarioConfig) -> ValidationReport {
    let mut r = ValidationReport::default();
    let m = &config.model;
    let sigma = m.price.sigma;
    r.require(sigma > 0.0 && sigma.is_finite(), || String::from("sigma must be strictly positive"));
    r.require(m.price.m0.is_finite() && m.price.m1.is_finite(), || String::from("drift parameters must be finite"));
    r.require((0.0..=1.0).contains(&m.rho), || format!("rho must lie in [0, 1], got {}", m.rho));
    match m.factor {
        FactorModel::Ou { kappa, theta, a } => {
            r.require(kappa > 0.0, || format!("kappa must be > 0, got {kappa}"));
            r.require(theta.is_finite(), || String::from("theta must be finite"));
            r.require(finite_nonneg(a), || format!("OU volatility a must be >= 0, got {a}"));
        }
        FactorModel::Cir { kappa, theta, a } => {
            r.require(kappa > 0.0, || format!("kappa must be > 0, got {kappa}"));
            r.require(a > 0.0 && a.is_finite(), || format!("CIR volatility a must be > 0, got {a}"));
            r.require(2.0 * kappa * theta >= a * a, || {
                format!("CIR Feller condition violated: 2*kappa*theta = {} < a^2 = {}", 2.0 * kappa * theta, a * a)
            });
        }
    }
    match m.hazard {
        HazardModel::Constant { gamma0 } => {
            r.require(finite_nonneg(gamma0), || format!("gamma0 must be >= 0, got {gamma0}"))
        }
        HazardModel::Linear => {}
        HazardModel::Affine { gamma0, gamma1 } => {
            r.require(finite_nonneg(gamma0), || format!("gamma0 must be >= 0, got {gamma0}"));
            r.require(finite_nonneg(gamma1), || format!("gamma1 must be >= 0, got {gamma1}"));
        }
    }

    let c = &config.contract;
    r.require(c.maturity > 0.0 && c.maturity.is_finite(), || format!("maturity must be > 0, got {}", c.maturity));
    match c.survival_payoff {
        Payoff::Constant { k } => r.require(finite_nonneg(k), || format!("constant payoff must be >= 0, got {k}")),
        Payoff::Linear { delta } => r.require(finite_nonneg(delta), || format!("payoff delta must be >= 0, got {delta}")),
        Payoff::Call { strike } | Payoff::Put { strike } => {
            r.require(strike > 0.0 && strike.is_finite(), || format!("strike must be > 0, got {strike}"))
        }
    }
    match c.death_recovery {
        Recovery::Zero => {}
        Recovery::Linear { delta } => r.require(finite_nonneg(delta), || format!("recovery delta must be >= 0, got {delta}")),
        Recovery::Constant { k } => r.require(finite_nonneg(k), || format!("constant recovery must be >= 0, got {k}")),
    }

    r.require(config.n_steps >= 2, || format!("n_steps must be >= 2, got {}", config.n_steps));
    r.require(config.n_paths >= 1, || String::from("n_paths must be ≥ 1"));
    r.require(config.n_particles >= 1, || String::from("n_particles must be ≥ 1"));
    r.require(config.s0 > 0.0 && config.s0.is_finite(), || format!("s0 must be > 0, got {}", config.s0));
    r.require(config.c_bound > 0.0, || format!("c_bound must be > 0, got {}", config.c_bound));
    let g = &config.pde_grid;
    r.require(g.s_max > config.s0, || format!("s_max = {} must exceed s0 = {}", g.s_max, config.s0));
    r.require(g.x_min < config.x0 && config.x0 < g.x_max, || {
        format!("x0 = {} must lie strictly inside (x_min, x_max) = ({}, {})", config.x0, g.x_min, g.x_max)
    });
    r.require(g.n_s >= 2, || format!("pde_grid.n_s must be >= 2, got {}", g.n_s));
    r.require(g.n_x >= 2, || format!("pde_grid.n_x must be >= 2, got {}", g.n_x));
    r.require(config.pde_time_steps() >= 1, || String::from("pde_grid.n_t must be >= 1"));

    if r.passed() {
        // domain probes only make sense once the grid itself is sane
        for (t, s, x) in config.probe_domain() {
            if let Err(e) = config.kernel(t, s, x) {
                r.violations.push(format!("{e}"));
                break;
            }
            let gamma = m.gamma(t, x);
            if !(gamma >= 0.0) {
                r.violations.push(format!("gamma({t}, {x}) = {gamma} is negative"));
                break;
            }
        }
    }
    r
}

/// Evaluates the coefficient quintuple; thin wrapper over
/// [`ScenarioConfig::evaluate`].
pub fn evaluate_coefficients(config: &ScenarioConfig, t: f64, s: f64, x: f64) -> Result<CoefficientValues, ModelError> {
    config.evaluate(t, s, x)
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn base_config_passes() {
        let report = validate(&base());
        assert!(report.passed(), "{:?}", report.violations);
    }

    #[test]
    fn zero_sigma_fails() {
        let mut c = base();
        c.model.price.sigma = 0.0;
        let r = validate(&c);
        assert!(r.violations.iter().any(|v| v == "sigma must be strictly positive"), "{:?}", r.violations);
    }

    #[test]
    fn cir_feller_violation_fails() {
        let mut c = cir();
        c.model.factor = FactorModel::Cir { kappa: 1.0, theta: 0.02, a: 0.5 };
        let r = validate(&c);
        assert!(r.violations.iter().any(|v| v.contains("Feller")), "{:?}", r.violations);
    }

    #[test]
    fn counts_and_domain_checked() {
        let mut c = base();
        c.n_paths = 0;
        c.n_steps = 1;
        c.pde_grid.s_max = 0.5;
        c.x0 = 5.0;
        let r = validate(&c);
        assert!(r.violations.iter().any(|v| v == "n_paths must be ≥ 1"));
        assert!(r.violations.iter().any(|v| v.contains("n_steps")));
        assert!(r.violations.iter().any(|v| v.contains("s_max")));
        assert!(r.violations.iter().any(|v| v.contains("x0")));
    }

    #[test]
    fn bound_probed_on_domain() {
        let mut c = cir();
        c.c_bound = 1.0; // (0.02 + 0.6) / 0.2 = 3.1 at x_max
        let r = validate(&c);
        assert!(r.violations.iter().any(|v| v.contains("c_bound")), "{:?}", r.violations);
    }

    #[test]
    fn coefficient_examples() {
        let c = base();
        assert_eq!(c.evaluate(0.3, 1.0, 0.4).unwrap().gamma, 0.05);
        let mut lin = base();
        lin.model.hazard = HazardModel::Linear;
        assert_eq!(lin.evaluate(0.0, 1.0, -1.0).unwrap().gamma, 0.0);
        let mut ou = base();
        ou.model.factor = FactorModel::Ou { kappa: 2.0, theta: 0.1, a: 0.3 };
        assert_eq!(ou.evaluate(0.0, 1.0, 0.1).unwrap().b, 0.0);
    }

    #[test]
    fn bound_breach_is_an_error() {
        let mut c = base();
        c.model.price.m1 = 1.0;
        assert!(matches!(c.evaluate(0.0, 1.0, 10.0), Err(ModelError::BoundViolation { .. })));
        assert!(matches!(c.evaluate(0.0, 0.0, 0.0), Err(ModelError::NonPositivePrice(_))));
    }

    #[test]
    fn validated_config_evaluates_on_its_domain() {
        let c = cir();
        assert!(validate(&c).passed());
        for (t, s, x) in c.probe_domain() {
            c.evaluate(t, s, x).unwrap();
        }
    }

    #[test]
    fn contract_kinds() {
        let mut c = base().contract;
        assert_eq!(c.kind(), ContractKind::TermInsurance);
        c.death_recovery = Recovery::Linear { delta: 0.5 };
        assert_eq!(c.kind(), ContractKind::EndowmentInsurance);
        c.survival_payoff = Payoff::Constant { k: 0.0 };
        assert_eq!(c.kind(), ContractKind::PureEndowment);
    }

    proptest::proptest! {
        #[test]
        fn gamma_nonnegative(x in -10.0f64..10.0, g0 in 0.0f64..1.0, g1 in 0.0f64..2.0) {
            let mut c = base();
            for hazard in [HazardModel::Constant { gamma0: g0 }, HazardModel::Linear, HazardModel::Affine { gamma0: g0, gamma1: g1 }] {
                c.model.hazard = hazard;
                proptest::prop_assert!(c.model.gamma(0.0, x) >= 0.0);
            }
        }

        #[test]
        fn coefficients_continuous(t in 0.0f64..1.0, s in 0.1f64..3.0, x in 0.0f64..0.5) {
            let c = cir();
            let h = 1e-7;
            let v0 = c.evaluate(t, s, x).unwrap();
            let v1 = c.evaluate(t + h, s + h, x + h).unwrap();
            for (p, q) in [(v0.mu, v1.mu), (v0.sigma, v1.sigma), (v0.b, v1.b), (v0.a, v1.a), (v0.gamma, v1.gamma)] {
                // sqrt has an unbounded derivative at 0; x >= 0 keeps h-steps small
                proptest::prop_assert!((p - q).abs() < 1e-3);
            }
            proptest::prop_assert_eq!(v0, c.evaluate(t, s, x).unwrap());
        }
    }
}
