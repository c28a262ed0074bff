//! Property tests of pathwise and structural invariants.

mod common;

use lrm_core::filtering;
use lrm_core::hedging::{self, ObservedHistory, PaymentStream};
use lrm_core::measure;
use lrm_core::pde;
use lrm_core::rng::{self, Purpose};
use lrm_core::simulate::{self, Measure};
use lrm_core::*;
use proptest::prelude::*;

fn measure_of(b: bool) -> Measure {
    if b {
        Measure::P
    } else {
        Measure::PHat
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn survival_is_exp_of_cumulative_hazard(seed in any::<u64>(), index in 0u64..1_000_000, p in any::<bool>()) {
        let mut c = common::cir();
        c.seed = seed;
        let b = simulate::simulate_path(&c, measure_of(p), index).unwrap();
        for (y, g) in b.y.iter().zip(&b.gamma_cum) {
            prop_assert!((y - (-g).exp()).abs() <= 1e-12);
        }
        // H jumps once, at the recorded index, and never before time zero
        let first = b.death.h.iter().position(|&h| h == 1);
        prop_assert_eq!(first, b.death.index);
        prop_assert!(b.death.h.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(b.death.h[0], 0);
    }

    #[test]
    fn same_seed_same_bundle(seed in any::<u64>(), index in 0u64..1_000_000, p in any::<bool>()) {
        let mut c = common::cir();
        c.seed = seed;
        let a = simulate::simulate_path(&c, measure_of(p), index).unwrap();
        let b = simulate::simulate_path(&c, measure_of(p), index).unwrap();
        prop_assert_eq!(&a, &b);
        let other = simulate::simulate_path(&c, measure_of(p), index + 1).unwrap();
        prop_assert_ne!(a.w, other.w);
    }

    #[test]
    fn tradeoff_processes_bounded(seed in any::<u64>(), index in 0u64..10_000) {
        let mut c = common::cir();
        c.seed = seed;
        c.n_particles = 20;
        let b = simulate::simulate_path(&c, Measure::P, index).unwrap();
        let s = filtering::run_projections(&c, &b.s, rng::stream(seed, Purpose::Particles, index)).unwrap();
        let pmu: Vec<f64> = s.p_mu.iter().map(|e| e.mean).collect();
        let sc = measure::structure_coefficients(&c, &b, &pmu).unwrap();
        let cap = c.c_bound * c.c_bound * c.maturity() * (1.0 + 1e-12);
        prop_assert!(sc.k.iter().all(|&k| (0.0..=cap).contains(&k)));
        prop_assert!(sc.k_tilde.iter().all(|&k| (0.0..=cap).contains(&k)));
        let l = measure::density_path(&c, &b).unwrap();
        prop_assert!(l.l.iter().all(|&v| v > 0.0 && v.is_finite()));
    }

    #[test]
    fn filter_mass_and_positivity(seed in any::<u64>(), index in 0u64..10_000, n in 1usize..300) {
        let mut c = common::cir();
        c.n_steps = 20;
        let b = simulate::simulate_path(&c, Measure::P, index).unwrap();
        let mut cloud = filtering::init_cloud_with(&c, &b.s, n, rng::stream(seed, Purpose::Particles, index)).unwrap();
        for _ in 0..c.n_steps {
            prop_assert_eq!(cloud.pi(|_| 1.0), 1.0);
            prop_assert!(cloud.pi(|p| p.y) >= 0.0);
            prop_assert!(cloud.pi(|p| p.x.max(0.0) * p.s) >= 0.0);
            prop_assert!(cloud.particles().all(|p| p.s == cloud.price()));
            cloud.step().unwrap();
        }
    }

    #[test]
    fn validated_configs_evaluate_on_the_grid(
        kappa in 0.1f64..3.0,
        theta in 0.01f64..0.3,
        a in 0.01f64..0.4,
        m1 in -2.0f64..2.0,
        rho in -0.99f64..0.99,
        u in 0.0f64..1.0,
        v in 0.0f64..1.0,
        w in 0.0f64..1.0,
    ) {
        let mut c = common::cir();
        c.model.factor = FactorModel::Cir { kappa, theta, a };
        c.model.price.m1 = m1;
        c.model.rho = rho;
        prop_assume!(model::validate(&c).passed());
        let g = c.pde_grid;
        let (t, s, x) = (u * c.maturity(), v * g.s_max, g.x_min + w * (g.x_max - g.x_min));
        prop_assert!(model::evaluate_coefficients(&c, t, s.max(1e-12), x).is_ok());
    }

    #[test]
    fn linear_contract_exact(delta in 0.0f64..2.0, rho in -0.9f64..0.9) {
        let mut c = common::cir();
        c.model.rho = rho;
        c.pde_grid.n_s = 30;
        c.pde_grid.n_x = 10;
        c.n_steps = 10;
        c.contract.survival_payoff = Payoff::Linear { delta };
        c.contract.death_recovery = Recovery::Linear { delta };
        let g = pde::solve_g(&c).unwrap();
        for k in 0..g.t.len() {
            for (i, &s) in g.s.iter().enumerate() {
                for j in 0..g.x.len() {
                    prop_assert!((g.node(k, i, j) - delta * s).abs() <= 1e-8);
                }
            }
        }
    }

    #[test]
    fn maximum_principle(strike in 0.2f64..2.0, k in 0.0f64..1.5, rho in -0.9f64..0.9) {
        let mut c = common::cir();
        c.model.rho = rho;
        c.pde_grid.n_s = 40;
        c.pde_grid.n_x = 12;
        c.n_steps = 12;
        c.contract.survival_payoff = Payoff::Put { strike };
        c.contract.death_recovery = Recovery::Constant { k };
        let g = pde::solve_g(&c).unwrap();
        prop_assert!(g.within_bounds(0.0, strike.max(k), 1e-12));
    }

    #[test]
    fn hedge_bookkeeping(index in 0u64..5_000, delta in 0.0f64..1.0) {
        let mut c = common::cir();
        c.n_steps = 20;
        c.n_particles = 20;
        c.pde_grid.n_s = 40;
        c.pde_grid.n_x = 12;
        c.model.hazard = HazardModel::Constant { gamma0: 1.0 };
        c.contract.death_recovery = Recovery::Linear { delta };
        let g = pde::solve_g(&c).unwrap();
        let b = simulate::simulate_path(&c, Measure::P, index).unwrap();
        let h = ObservedHistory::from_bundle(&b);
        let star = hedging::partial_information(&c, &h, &g).unwrap();
        let pay = PaymentStream::new(&c, &h);
        let series = hedging::eta_and_value(&h, &star, &pay).unwrap();
        for k in 0..=c.n_steps {
            prop_assert_eq!(series.cost[k], series.payments[k] + series.value[k] - series.gains[k]);
            prop_assert!((series.value[k] - (series.v_hat[k] - series.payments[k])).abs() < 1e-12);
        }
        prop_assert!(series.terminal_value().abs() < 1e-9);
        if let Some(d) = h.death_index() {
            prop_assert!(series.value[d].abs() < 1e-12);
            prop_assert!((pay.n[d] - delta * h.s[d]).abs() < 1e-15);
        }
        // strategy values depend on the observed history only
        let mut blind = b.clone();
        blind.x.iter_mut().for_each(|x| *x = f64::NAN);
        blind.w.iter_mut().for_each(|w| *w = f64::NAN);
        let again = hedging::theta_partial(&c, &ObservedHistory::from_bundle(&blind), &g).unwrap();
        prop_assert_eq!(again, star.theta);
    }
}
