#![allow(dead_code)]

use lrm_core::*;

/// Black-Scholes asset, OU factor, constant hazard, call payoff.
pub fn ou() -> ScenarioConfig {
    ScenarioConfig {
        model: ModelFamily {
            price: PriceModel { sigma: 0.2, m0: 0.05, m1: 0.0 },
            factor: FactorModel::Ou { kappa: 2.0, theta: 0.1, a: 0.1 },
            hazard: HazardModel::Constant { gamma0: 0.5 },
            rho: 0.0,
        },
        contract: Contract { maturity: 1.0, survival_payoff: Payoff::Call { strike: 1.0 }, death_recovery: Recovery::Zero },
        s0: 1.0,
        x0: 0.1,
        n_steps: 50,
        n_paths: 20_000,
        n_particles: 200,
        pde_grid: PdeGrid { n_s: 100, n_x: 40, s_max: 4.0, x_min: -0.5, x_max: 0.7, n_t: None },
        seed: 7,
        c_bound: 5.0,
    }
}

/// CIR factor driving both the drift and the hazard.
pub fn cir() -> ScenarioConfig {
    let mut c = ou();
    c.model.price = PriceModel { sigma: 0.2, m0: 0.02, m1: 1.0 };
    c.model.factor = FactorModel::Cir { kappa: 1.0, theta: 0.05, a: 0.2 };
    c.model.hazard = HazardModel::Linear;
    c.model.rho = 0.5;
    c.x0 = 0.05;
    c.pde_grid.x_min = -0.05;
    c.pde_grid.x_max = 0.6;
    c
}

pub fn within(z: f64, limit: f64) -> bool {
    z.is_finite() && z.abs() < limit
}
