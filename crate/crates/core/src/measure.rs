//! Minimal martingale measure machinery.
//!
//! The density of the minimal martingale measure is the stochastic
//! exponential `L = E(-int mu/sigma dW)`; along a world it is integrated in
//! log space. The same path can be written in `P_hat` form,
//! `log L_t = -int mu/sigma dW_hat + 1/2 int (mu/sigma)^2 dt`, which is what
//! the filter uses to weight particles.

use alloc::vec::Vec;

use thiserror::Error;

use crate::math;
use crate::model::{ModelError, ScenarioConfig};
use crate::simulate::{Measure, PathBundle};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeasureError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("non-finite log density at step {0}")]
    NonFinite(usize),
    #[error("grid mismatch: expected {expected} values, got {got}")]
    GridMismatch { expected: usize, got: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DensityPath {
    pub l: Vec<f64>,
    pub log_l: Vec<f64>,
    /// `mu / sigma` at the left end of each step.
    pub kernel: Vec<f64>,
}

impl DensityPath {
    /// `L^tau`: the density frozen at grid index `stop`.
    pub fn stopped(&self, stop: usize) -> Vec<f64> {
        (0..self.l.len()).map(|k| self.l[k.min(stop)]).collect()
    }
}

fn kernel_path(config: &ScenarioConfig, bundle: &PathBundle) -> Result<Vec<f64>, MeasureError> {
    let n = bundle.n_steps();
    (0..n)
        .map(|k| Ok(config.kernel(bundle.t_grid[k], bundle.s[k], bundle.x[k])?))
        .collect()
}

/// Density process of the minimal martingale measure along a world. For `P`
/// worlds the increments use `dW`; for `P_hat` worlds, `dW_hat`.
pub fn density_path(config: &ScenarioConfig, bundle: &PathBundle) -> Result<DensityPath, MeasureError> {
    let kernel = kernel_path(config, bundle)?;
    let dt = config.dt();
    let mut log_l = Vec::with_capacity(kernel.len() + 1);
    log_l.push(0.0);
    for (k, &c) in kernel.iter().enumerate() {
        let inc = match bundle.measure {
            Measure::P => -c * (bundle.w[k + 1] - bundle.w[k]) - 0.5 * c * c * dt,
            Measure::PHat => -c * (bundle.w_hat[k + 1] - bundle.w_hat[k]) + 0.5 * c * c * dt,
        };
        let next = log_l[k] + inc;
        if !next.is_finite() {
            return Err(MeasureError::NonFinite(k + 1));
        }
        log_l.push(next);
    }
    let l = log_l.iter().map(|&v| math::exp(v)).collect();
    Ok(DensityPath { l, log_l, kernel })
}

/// `W_hat = W + int mu/sigma dt` on the grid.
pub fn girsanov_shift(config: &ScenarioConfig, bundle: &PathBundle) -> Result<Vec<f64>, MeasureError> {
    let kernel = kernel_path(config, bundle)?;
    let dt = config.dt();
    let mut drift = 0.0;
    let mut out = Vec::with_capacity(bundle.w.len());
    out.push(bundle.w[0]);
    for (k, c) in kernel.iter().enumerate() {
        drift += c * dt;
        out.push(bundle.w[k + 1] + drift);
    }
    Ok(out)
}

/// Structure-condition coefficients and mean-variance tradeoff processes.
#[derive(Clone, Debug, PartialEq)]
pub struct StructureCoefficients {
    /// `mu / (S sigma^2)` for each step while alive, zero afterwards.
    pub alpha_g: Vec<f64>,
    /// `p_mu / (S sigma^2)` likewise.
    pub alpha_gtilde: Vec<f64>,
    /// `K_t = int alpha_G^2 d<M^G>`, with `d<M^G> = S^2 sigma^2 dt`.
    pub k: Vec<f64>,
    pub k_tilde: Vec<f64>,
}

pub fn structure_coefficients(
    config: &ScenarioConfig,
    bundle: &PathBundle,
    p_mu: &[f64],
) -> Result<StructureCoefficients, MeasureError> {
    let n = bundle.n_steps();
    if p_mu.len() != n {
        return Err(MeasureError::GridMismatch { expected: n, got: p_mu.len() });
    }
    let stop = bundle.stop_index();
    let dt = config.dt();
    let m = &config.model;
    let mut alpha_g = Vec::with_capacity(n);
    let mut alpha_gtilde = Vec::with_capacity(n);
    let mut k = alloc::vec![0.0];
    let mut k_tilde = alloc::vec![0.0];
    for j in 0..n {
        let (ag, agt, qv) = if j < stop {
            let (t, s, x) = (bundle.t_grid[j], bundle.s[j], bundle.x[j]);
            config.kernel(t, s, x)?;
            let sigma = m.sigma(t, s);
            let v = s * s * sigma * sigma;
            (m.mu(t, s, x) / v, p_mu[j] / v, v * dt)
        } else {
            (0.0, 0.0, 0.0)
        };
        alpha_g.push(ag);
        alpha_gtilde.push(agt);
        k.push(k[j] + ag * ag * qv);
        k_tilde.push(k_tilde[j] + agt * agt * qv);
    }
    Ok(StructureCoefficients { alpha_g, alpha_gtilde, k, k_tilde })
}
