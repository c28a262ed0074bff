//! Backward Cauchy problems for the hedge value functions.
//!
//! Three problems share one finite-difference engine on a rectangular
//! `(s, x)` grid:
//!
//! * the full value `g(t, s, x)`:
//!   `L g - gamma g + U gamma = 0`, `g(T) = G`, where `L` is the `P_hat`
//!   generator of `(S, X)`;
//! * the martingale price `g~(t, s)`: `g~_t + 1/2 sigma^2 s^2 g~_ss = 0`,
//!   `g~(T) = G`;
//! * the survival factor `Phi(t, x)`:
//!   `Phi_t + b Phi_x + 1/2 a^2 Phi_xx - gamma Phi = 0`, `Phi(T) = 1`.
//!
//! Time stepping is backward Euler with the mixed derivative lagged to the
//! previous slice. The `x` drift uses central differences where the cell
//! Peclet number allows and upwinding elsewhere. On the truncation edges the
//! second derivative normal to the edge is taken as zero (linear
//! extrapolation) and first derivatives are one-sided into the domain.

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::math;
use crate::model::{ModelError, ScenarioConfig};
use crate::rng::{self, Purpose};
use crate::simulate::{self, SimError};
use crate::stats::{self, Estimate};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PdeError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("zero pivot in banded LU at row {0}")]
    SingularSystem(usize),
    #[error("non-finite solution value at time index {0}")]
    NonFinite(usize),
    #[error("point (t={t}, s={s}, x={x}) lies outside the PDE domain")]
    OutOfDomain { t: f64, s: f64, x: f64 },
    #[error("grid refinement changed g(0, s0, x0) by {rel:e} (relative), tolerance {tol:e}")]
    RefinementDisagreement { rel: f64, tol: f64 },
    #[error(transparent)]
    Simulation(#[from] SimError),
}

/// Which backward problem a solution belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Problem {
    /// `g(t, s, x)`.
    HedgeValue,
    /// `g~(t, s)`.
    MartingalePrice,
    /// `Phi(t, x)`.
    Survival,
}

/// Value of a solution and its spatial derivatives at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointValue {
    pub value: f64,
    pub d_s: f64,
    pub d_x: f64,
}

/// Grid solution of a backward problem. Derivative arrays are stored per
/// node (central differences inside, one-sided on edges) and interpolated
/// bilinearly like the values.
#[derive(Clone, Debug, PartialEq)]
pub struct PdeSolution {
    pub problem: Problem,
    pub t: Vec<f64>,
    pub s: Vec<f64>,
    pub x: Vec<f64>,
    values: Vec<f64>,
    d_s: Vec<f64>,
    d_x: Vec<f64>,
}

/// Interpolation coordinate along one axis.
#[derive(Clone, Copy)]
struct Axis {
    lo: usize,
    frac: f64,
}

fn locate(grid: &[f64], v: f64) -> Option<Axis> {
    let n = grid.len();
    if n == 1 {
        return Some(Axis { lo: 0, frac: 0.0 });
    }
    let (first, last) = (grid[0], grid[n - 1]);
    let tol = 1e-12 * (last - first).abs().max(1.0);
    if !(v >= first - tol && v <= last + tol) {
        return None;
    }
    let h = (last - first) / (n - 1) as f64;
    let pos = ((v - first) / h).clamp(0.0, (n - 1) as f64);
    let mut lo = math::floor(pos) as usize;
    if lo >= n - 1 {
        lo = n - 2;
    }
    let mut frac = pos - lo as f64;
    if frac < 1e-12 {
        frac = 0.0;
    }
    Some(Axis { lo, frac })
}

impl PdeSolution {
    fn slice_len(&self) -> usize {
        self.s.len() * self.x.len()
    }

    /// Value array of time slice `k`, `s`-major.
    pub fn slice(&self, k: usize) -> &[f64] {
        let n = self.slice_len();
        &self.values[k * n..(k + 1) * n]
    }

    pub fn d_s_slice(&self, k: usize) -> &[f64] {
        let n = self.slice_len();
        &self.d_s[k * n..(k + 1) * n]
    }

    pub fn d_x_slice(&self, k: usize) -> &[f64] {
        let n = self.slice_len();
        &self.d_x[k * n..(k + 1) * n]
    }

    /// Node value at time index `k`, `s` index `i`, `x` index `j`.
    pub fn node(&self, k: usize, i: usize, j: usize) -> f64 {
        self.slice(k)[i * self.x.len() + j]
    }

    fn bilinear(&self, data: &[f64], k: usize, si: Axis, xj: Axis) -> f64 {
        let nx = self.x.len();
        let base = k * self.slice_len();
        let at = |i: usize, j: usize| data[base + i * nx + j];
        let (i0, j0) = (si.lo, xj.lo);
        let i1 = if self.s.len() > 1 { i0 + 1 } else { i0 };
        let j1 = if nx > 1 { j0 + 1 } else { j0 };
        let lower = if xj.frac == 0.0 { at(i0, j0) } else { at(i0, j0) * (1.0 - xj.frac) + at(i0, j1) * xj.frac };
        if si.frac == 0.0 {
            return lower;
        }
        let upper = if xj.frac == 0.0 { at(i1, j0) } else { at(i1, j0) * (1.0 - xj.frac) + at(i1, j1) * xj.frac };
        lower * (1.0 - si.frac) + upper * si.frac
    }

    /// Interpolated value and derivatives at `(t, s, x)`. One-point axes
    /// ignore their coordinate.
    pub fn eval(&self, t: f64, s: f64, x: f64) -> Result<PointValue, PdeError> {
        let out = || PdeError::OutOfDomain { t, s, x };
        let tk = locate(&self.t, t).ok_or_else(out)?;
        let si = locate(&self.s, s).ok_or_else(out)?;
        let xj = locate(&self.x, x).ok_or_else(out)?;
        let at_slice = |k: usize| PointValue {
            value: self.bilinear(&self.values, k, si, xj),
            d_s: self.bilinear(&self.d_s, k, si, xj),
            d_x: self.bilinear(&self.d_x, k, si, xj),
        };
        let lo = at_slice(tk.lo);
        if tk.frac == 0.0 {
            return Ok(lo);
        }
        let hi = at_slice(tk.lo + 1);
        let w = tk.frac;
        Ok(PointValue {
            value: lo.value * (1.0 - w) + hi.value * w,
            d_s: lo.d_s * (1.0 - w) + hi.d_s * w,
            d_x: lo.d_x * (1.0 - w) + hi.d_x * w,
        })
    }

    pub fn value(&self, t: f64, s: f64, x: f64) -> Result<f64, PdeError> {
        Ok(self.eval(t, s, x)?.value)
    }

    pub fn d_s(&self, t: f64, s: f64, x: f64) -> Result<f64, PdeError> {
        Ok(self.eval(t, s, x)?.d_s)
    }

    pub fn d_x(&self, t: f64, s: f64, x: f64) -> Result<f64, PdeError> {
        Ok(self.eval(t, s, x)?.d_x)
    }

    /// `true` when every node value lies in `[lower, upper]` up to `tol`.
    pub fn within_bounds(&self, lower: f64, upper: f64, tol: f64) -> bool {
        self.values.iter().all(|&v| v >= lower - tol && v <= upper + tol)
    }

    /// Largest gap between the interpolated terminal slice and `payoff`,
    /// sampled at 16 points per `s` cell. This is the error the solution
    /// makes at maturity purely from interpolating a node payoff.
    pub fn terminal_interpolation_error(&self, payoff: impl Fn(f64) -> f64) -> f64 {
        let k = self.t.len() - 1;
        let ns = self.s.len();
        if ns == 1 {
            return 0.0;
        }
        let nx = self.x.len();
        let mut worst: f64 = 0.0;
        for i in 0..ns - 1 {
            for q in 0..=16 {
                let frac = q as f64 / 16.0;
                let s = self.s[i] + frac * (self.s[i + 1] - self.s[i]);
                let interp = self.bilinear(&self.values, k, Axis { lo: i, frac }, Axis { lo: 0, frac: 0.0 });
                worst = worst.max((interp - payoff(s)).abs());
                if nx > 1 {
                    // terminal data never depend on x; one column suffices
                }
            }
        }
        worst
    }
}

fn linspace(lo: f64, hi: f64, intervals: usize) -> Vec<f64> {
    let h = (hi - lo) / intervals as f64;
    (0..=intervals).map(|i| if i == intervals { hi } else { lo + i as f64 * h }).collect()
}

/// Banded matrix with equal lower and upper bandwidth, LU-factored in place
/// without pivoting. The assembled systems are diagonally dominant
/// M-matrices, for which this is stable.
#[derive(Clone, Debug, PartialEq)]
struct Banded {
    n: usize,
    p: usize,
    data: Vec<f64>,
}

impl Banded {
    fn new(n: usize, p: usize) -> Self {
        Banded { n, p, data: vec![0.0; n * (2 * p + 1)] }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        i * (2 * self.p + 1) + (j + self.p - i)
    }

    #[inline]
    fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    fn factor(&mut self) -> Result<(), PdeError> {
        let (n, p) = (self.n, self.p);
        for k in 0..n {
            let piv = self.data[self.idx(k, k)];
            if !(piv.abs() > 1e-300) {
                return Err(PdeError::SingularSystem(k));
            }
            let end = (k + p).min(n - 1);
            for i in k + 1..=end {
                let ik = self.idx(i, k);
                let l = self.data[ik] / piv;
                if l == 0.0 {
                    continue;
                }
                self.data[ik] = l;
                for j in k + 1..=end {
                    let kj = self.data[self.idx(k, j)];
                    let ij = self.idx(i, j);
                    self.data[ij] -= l * kj;
                }
            }
        }
        Ok(())
    }

    fn solve(&self, b: &mut [f64]) {
        let (n, p) = (self.n, self.p);
        for i in 0..n {
            let mut acc = b[i];
            for k in i.saturating_sub(p)..i {
                acc -= self.data[self.idx(i, k)] * b[k];
            }
            b[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc = b[i];
            for j in i + 1..=(i + p).min(n - 1) {
                acc -= self.data[self.idx(i, j)] * b[j];
            }
            b[i] = acc / self.data[self.idx(i, i)];
        }
    }
}

/// Coefficients of the backward operator at one node.
#[derive(Clone, Copy, Default)]
struct NodeCoeffs {
    diff_s: f64,
    drift_x: f64,
    diff_x: f64,
    mixed: f64,
    reaction: f64,
    source: f64,
}

fn node_coeffs(config: &ScenarioConfig, problem: Problem, t: f64, s: f64, x: f64) -> Result<NodeCoeffs, ModelError> {
    let m = &config.model;
    let sigma = m.sigma(t, s);
    Ok(match problem {
        Problem::HedgeValue => {
            let kappa = config.kernel(t, s, x)?;
            let a = m.a(t, x);
            let gamma = m.gamma(t, x);
            NodeCoeffs {
                diff_s: 0.5 * sigma * sigma * s * s,
                drift_x: m.b(t, x) - m.rho * a * kappa,
                diff_x: 0.5 * a * a,
                mixed: m.rho * a * sigma * s,
                reaction: gamma,
                source: config.contract.death_recovery.eval(t, s) * gamma,
            }
        }
        Problem::MartingalePrice => NodeCoeffs { diff_s: 0.5 * sigma * sigma * s * s, ..Default::default() },
        Problem::Survival => {
            let a = m.a(t, x);
            NodeCoeffs { drift_x: m.b(t, x), diff_x: 0.5 * a * a, reaction: m.gamma(t, x), ..Default::default() }
        }
    })
}

/// Central differences inside, one-sided on the edges; zero on a one-point
/// axis. `stride` walks the differentiated axis, `count` is its length.
fn derivative(values: &[f64], ns: usize, nx: usize, h_s: f64, h_x: f64, along_s: bool, out: &mut [f64]) {
    let (count, stride, h) = if along_s { (ns, nx, h_s) } else { (nx, 1, h_x) };
    for i in 0..ns {
        for j in 0..nx {
            let node = i * nx + j;
            let pos = if along_s { i } else { j };
            out[node] = if count == 1 {
                0.0
            } else if pos == 0 {
                (values[node + stride] - values[node]) / h
            } else if pos == count - 1 {
                (values[node] - values[node - stride]) / h
            } else {
                (values[node + stride] - values[node - stride]) / (2.0 * h)
            };
        }
    }
}

struct Engine<'a> {
    config: &'a ScenarioConfig,
    problem: Problem,
    s: Vec<f64>,
    x: Vec<f64>,
    n_t: usize,
}

impl<'a> Engine<'a> {
    fn new(config: &'a ScenarioConfig, problem: Problem, refine: usize) -> Self {
        let g = &config.pde_grid;
        let s = match problem {
            Problem::HedgeValue | Problem::MartingalePrice => linspace(0.0, g.s_max, g.n_s * refine),
            Problem::Survival => vec![config.s0],
        };
        let x = match problem {
            Problem::HedgeValue | Problem::Survival => linspace(g.x_min, g.x_max, g.n_x * refine),
            Problem::MartingalePrice => vec![config.x0],
        };
        Engine { config, problem, s, x, n_t: config.pde_time_steps() * refine }
    }

    fn terminal(&self) -> Vec<f64> {
        let nx = self.x.len();
        let payoff = self.config.contract.survival_payoff;
        let mut v = Vec::with_capacity(self.s.len() * nx);
        for &s in &self.s {
            for _ in 0..nx {
                v.push(match self.problem {
                    Problem::Survival => 1.0,
                    _ => payoff.eval(s),
                });
            }
        }
        v
    }

    /// Assembles `M = I - dt A` for the slice at time `t`, plus the explicit
    /// part of the right-hand side given the later slice `next`.
    fn assemble(&self, t: f64, dt: f64, next: &[f64], d_s_next: &[f64], matrix: &mut Banded, rhs: &mut [f64]) -> Result<(), PdeError> {
        let (ns, nx) = (self.s.len(), self.x.len());
        let h_s = if ns > 1 { self.s[1] - self.s[0] } else { 1.0 };
        let h_x = if nx > 1 { self.x[1] - self.x[0] } else { 1.0 };
        matrix.data.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..ns {
            for j in 0..nx {
                let row = i * nx + j;
                let c = node_coeffs(self.config, self.problem, t, self.s[i], self.x[j])?;
                let mut explicit = c.source;
                // A entries accumulate here, then M = I - dt A
                let mut diag = -c.reaction;
                if ns > 1 && i > 0 && i < ns - 1 && c.diff_s != 0.0 {
                    let w = c.diff_s / (h_s * h_s);
                    matrix.add(row, row - nx, -dt * w);
                    matrix.add(row, row + nx, -dt * w);
                    diag -= 2.0 * w;
                }
                if nx > 1 {
                    let beta = c.drift_x;
                    if j > 0 && j < nx - 1 {
                        let d = c.diff_x / (h_x * h_x);
                        let (lower, upper, centre) = if beta.abs() * h_x <= 2.0 * c.diff_x {
                            (d - beta / (2.0 * h_x), d + beta / (2.0 * h_x), -2.0 * d)
                        } else if beta > 0.0 {
                            (d, d + beta / h_x, -2.0 * d - beta / h_x)
                        } else {
                            (d - beta / h_x, d, -2.0 * d + beta / h_x)
                        };
                        matrix.add(row, row - 1, -dt * lower);
                        matrix.add(row, row + 1, -dt * upper);
                        diag += centre;
                    } else if j == 0 {
                        if beta >= 0.0 {
                            matrix.add(row, row + 1, -dt * beta / h_x);
                            diag -= beta / h_x;
                        } else {
                            explicit += beta * (next[row + 1] - next[row]) / h_x;
                        }
                    } else if beta <= 0.0 {
                        matrix.add(row, row - 1, dt * beta / h_x);
                        diag += beta / h_x;
                    } else {
                        explicit += beta * (next[row] - next[row - 1]) / h_x;
                    }
                    if c.mixed != 0.0 {
                        let d_sx = if j == 0 {
                            (d_s_next[row + 1] - d_s_next[row]) / h_x
                        } else if j == nx - 1 {
                            (d_s_next[row] - d_s_next[row - 1]) / h_x
                        } else {
                            (d_s_next[row + 1] - d_s_next[row - 1]) / (2.0 * h_x)
                        };
                        explicit += c.mixed * d_sx;
                    }
                }
                matrix.add(row, row, 1.0 - dt * diag);
                rhs[row] = next[row] + dt * explicit;
            }
        }
        Ok(())
    }

    fn run(self) -> Result<PdeSolution, PdeError> {
        let (ns, nx) = (self.s.len(), self.x.len());
        let n = ns * nx;
        let n_t = self.n_t;
        let t_max = self.config.maturity();
        let t_grid = linspace(0.0, t_max, n_t);
        let dt = t_max / n_t as f64;
        let h_s = if ns > 1 { self.s[1] - self.s[0] } else { 1.0 };
        let h_x = if nx > 1 { self.x[1] - self.x[0] } else { 1.0 };
        let band = if ns > 1 { nx } else { 1 };

        // slices are produced backwards and stored forwards
        let mut values = vec![0.0; (n_t + 1) * n];
        let mut d_s = vec![0.0; (n_t + 1) * n];
        let mut d_x = vec![0.0; (n_t + 1) * n];
        let terminal = self.terminal();
        values[n_t * n..].copy_from_slice(&terminal);
        derivative(&terminal, ns, nx, h_s, h_x, true, &mut d_s[n_t * n..]);
        derivative(&terminal, ns, nx, h_s, h_x, false, &mut d_x[n_t * n..]);

        let mut assembled = Banded::new(n, band);
        let mut factored: Option<(Banded, Banded)> = None;
        let mut rhs = vec![0.0; n];
        for k in (0..n_t).rev() {
            let (later, earlier) = values.split_at_mut((k + 1) * n);
            let next = &earlier[..n];
            let d_s_next = &d_s[(k + 1) * n..(k + 2) * n];
            self.assemble(t_grid[k], dt, next, d_s_next, &mut assembled, &mut rhs)?;
            let reuse = matches!(&factored, Some((raw, _)) if raw.data == assembled.data);
            if !reuse {
                let mut lu = assembled.clone();
                lu.factor()?;
                factored = Some((assembled.clone(), lu));
            }
            if let Some((_, lu)) = &factored {
                lu.solve(&mut rhs);
            }
            if rhs.iter().any(|v| !v.is_finite()) {
                return Err(PdeError::NonFinite(k));
            }
            let slice = &mut later[k * n..];
            slice.copy_from_slice(&rhs);
            let (ds_k, dx_k) = (&mut d_s[k * n..(k + 1) * n], &mut d_x[k * n..(k + 1) * n]);
            derivative(slice, ns, nx, h_s, h_x, true, ds_k);
            derivative(slice, ns, nx, h_s, h_x, false, dx_k);
        }
        Ok(PdeSolution { problem: self.problem, t: t_grid, s: self.s, x: self.x, values, d_s, d_x })
    }
}

/// Solves for `g(t, s, x)` on the configured grid.
pub fn solve_g(config: &ScenarioConfig) -> Result<PdeSolution, PdeError> {
    Engine::new(config, Problem::HedgeValue, 1).run()
}

/// Solves the one-dimensional martingale pricing problem for `g~(t, s)`.
pub fn solve_gtilde(config: &ScenarioConfig) -> Result<PdeSolution, PdeError> {
    Engine::new(config, Problem::MartingalePrice, 1).run()
}

/// Solves for the survival factor `Phi(t, x)`.
pub fn solve_phi(config: &ScenarioConfig) -> Result<PdeSolution, PdeError> {
    Engine::new(config, Problem::Survival, 1).run()
}

/// Solves `problem` with every grid dimension multiplied by `factor`.
pub fn solve_refined(config: &ScenarioConfig, problem: Problem, factor: usize) -> Result<PdeSolution, PdeError> {
    Engine::new(config, problem, factor.max(1)).run()
}

/// Default relative tolerance of [`refinement_check`].
pub const REFINEMENT_TOLERANCE: f64 = 2e-3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RefinementReport {
    pub coarse: f64,
    pub fine: f64,
    pub rel_change: f64,
}

/// Compares `g(0, s0, x0)` on the configured grid and on the grid with every
/// dimension doubled; fails when the relative change exceeds `tol`.
pub fn refinement_check(config: &ScenarioConfig, problem: Problem, tol: f64) -> Result<RefinementReport, PdeError> {
    let coarse = solve_refined(config, problem, 1)?.value(0.0, config.s0, config.x0)?;
    let fine = solve_refined(config, problem, 2)?.value(0.0, config.s0, config.x0)?;
    let rel = (fine - coarse).abs() / fine.abs().max(1e-300);
    if rel > tol {
        return Err(PdeError::RefinementDisagreement { rel, tol });
    }
    Ok(RefinementReport { coarse, fine, rel_change: rel })
}

/// Outcome of one Feynman-Kac probe.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeReport {
    pub t: f64,
    pub s: f64,
    pub x: f64,
    pub pde: f64,
    pub monte_carlo: Estimate,
    pub z: f64,
}

/// Compares a solution of the full value problem with the Monte Carlo value
/// of `E_hat[exp(-int gamma) G(S_T) + int exp(-int gamma) U gamma dr]`
/// started at each probe point, using `n_paths` `P_hat` paths per probe.
pub fn feynman_kac_check(
    config: &ScenarioConfig,
    solution: &PdeSolution,
    probes: &[(f64, f64, f64)],
    n_paths: usize,
) -> Result<Vec<ProbeReport>, PdeError> {
    let payoff = config.contract.survival_payoff;
    probes
        .iter()
        .enumerate()
        .map(|(p, &(t, s, x))| {
            let pde = solution.value(t, s, x)?;
            let mut samples = Vec::with_capacity(n_paths);
            for i in 0..n_paths {
                let mut rng = rng::stream(config.seed, Purpose::FeynmanKac, ((p as u64) << 32) | i as u64);
                let sample = simulate::simulate_probe(config, t, s, x, &mut rng)?;
                samples.push(sample.survival * payoff.eval(sample.s_terminal) + sample.death_benefit);
            }
            let monte_carlo = stats::mean_se(&samples);
            Ok(ProbeReport { t, s, x, pde, monte_carlo, z: monte_carlo.z_against_value(pde) })
        })
        .collect()
}
