//! Locally risk-minimizing hedging of unit-linked life insurance contracts
//! when the asset drift and the mortality intensity depend on a factor the
//! insurer cannot observe.
//!
//! The crate is `no_std` (it needs `alloc`). Every operation is a pure
//! function of a [`ScenarioConfig`] and a path index, so callers are free to
//! fan the work out over threads; the `lrm` companion crate does exactly that
//! and adds config files, CSV output and a CLI.
//!
//! Module map:
//!
//! * [`model`]: coefficient families, contracts, scenario configuration.
//! * [`simulate`]: Monte Carlo worlds under `P` or the minimal martingale
//!   measure, death times, stopped views, innovation increments.
//! * [`measure`]: density process of the minimal martingale measure,
//!   Girsanov shift, structure-condition coefficients.
//! * [`filtering`]: particle filter of the hidden factor given the price
//!   history, projections under `P` via inverse-density weights.
//! * [`pde`]: backward Cauchy problems for the hedge value functions.
//! * [`hedging`]: full and partial information strategies, value and cost
//!   processes, backtest diagnostics.

#![no_std]
// `!(x > 0.0)` is used on purpose so NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod filtering;
pub mod hedging;
pub mod math;
pub mod measure;
pub mod model;
pub mod oracle;
pub mod pde;
pub mod rng;
pub mod simulate;
pub mod stats;

mod error;

pub use error::Error;
pub use model::{
    Contract, FactorModel, HazardModel, ModelFamily, PdeGrid, Payoff, PriceModel, Recovery,
    ScenarioConfig,
};
