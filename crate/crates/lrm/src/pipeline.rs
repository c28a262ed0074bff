//! Subcommand pipelines: each runs the per-path work on the worker pool,
//! reduces in path order, and writes its tables into the output directory.

use std::path::{Path, PathBuf};
use std::time::Instant;

use lrm_core::filtering;
use lrm_core::hedging::{self, ClosedForm, HedgeReport, ObservedHistory, PathOutcome};
use lrm_core::pde::{self, PdeSolution, Problem};
use lrm_core::rng::{self, Purpose};
use lrm_core::simulate::{self, Measure};
use lrm_core::{Error, Recovery, ScenarioConfig};
use rayon::prelude::*;

use crate::config::{config_hash, ConfigError, Diagnostic};
use crate::io::{self, FileEntry, IoError, Table};
use crate::manifest::RunManifest;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("numerical failure in module `{module}`: {source}", module = .0.module(), source = .0)]
    Numerical(Error),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("verification failed: {0}")]
    VerifyFailed(String),
}

impl RunError {
    /// 2 for config problems, 3 for numerical failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Numerical(_) => 3,
            RunError::Io(_) | RunError::VerifyFailed(_) => 1,
        }
    }
}

/// Converts any core error into a numerical failure.
pub fn num<E: Into<Error>>(e: E) -> RunError {
    RunError::Numerical(e.into())
}

/// Worker pool. Results are always collected in path order, so outputs do
/// not depend on the number of workers.
pub struct Runner {
    pool: rayon::ThreadPool,
}

impl Runner {
    /// `None` uses one worker per available core.
    pub fn new(workers: Option<usize>) -> Self {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(w) = workers {
            b = b.num_threads(w.max(1));
        }
        Runner { pool: b.build().expect("thread pool") }
    }

    pub fn workers(&self) -> usize {
        self.pool.current_num_threads()
    }

    /// Maps `f` over `0..n`; on failure returns the error of the lowest index.
    pub fn map<T, E, F>(&self, n: usize, f: F) -> Result<Vec<T>, E>
    where
        T: Send,
        E: Send,
        F: Fn(u64) -> Result<T, E> + Sync + Send,
    {
        let results: Vec<Result<T, E>> = self.pool.install(|| (0..n as u64).into_par_iter().map(&f).collect());
        results.into_iter().collect()
    }

    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        self.pool.install(f)
    }
}

/// Everything a subcommand needs.
pub struct Context<'a> {
    pub config: ScenarioConfig,
    pub hash: String,
    pub out_dir: PathBuf,
    pub runner: &'a Runner,
    pub quiet: bool,
}

impl<'a> Context<'a> {
    pub fn new(config: ScenarioConfig, out_dir: &Path, runner: &'a Runner, quiet: bool) -> Result<Self, RunError> {
        std::fs::create_dir_all(out_dir).map_err(|source| IoError::Io { path: out_dir.to_path_buf(), source })?;
        Ok(Context { hash: config_hash(&config), config, out_dir: out_dir.to_path_buf(), runner, quiet })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn say(&self, msg: &str) {
        if !self.quiet {
            eprintln!("{msg}");
        }
    }
}

/// Inventory and timings of one command.
#[derive(Default)]
pub struct Outputs {
    pub files: Vec<FileEntry>,
    pub timings: Vec<(String, f64)>,
}

impl Outputs {
    fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let t0 = Instant::now();
        let out = f();
        self.timings.push((stage.to_string(), t0.elapsed().as_secs_f64()));
        out
    }

    fn write(&mut self, ctx: &Context, name: &str, table: &Table) -> Result<(), RunError> {
        self.files.push(io::write_table(&ctx.path(name), table)?);
        Ok(())
    }

    /// Writes `manifest.json` and `timings.json`.
    pub fn finish(self, ctx: &Context, command: &str) -> Result<Self, RunError> {
        RunManifest::new(command, &ctx.config, &ctx.hash, self.files.clone()).write(&ctx.out_dir, &self.timings)?;
        Ok(self)
    }
}

fn grid_columns(t_grid: &[f64]) -> Vec<String> {
    std::iter::once("path".to_string()).chain(t_grid.iter().map(|t| t.to_string())).collect()
}

fn wide_table(ctx: &Context, units: &str, t_grid: &[f64]) -> Table {
    let cols = grid_columns(t_grid);
    let refs: Vec<&str> = cols.iter().map(String::as_str).collect();
    Table::new(&ctx.hash, units, &refs)
}

pub fn simulate(ctx: &Context, measure: Measure) -> Result<Outputs, RunError> {
    let c = &ctx.config;
    let mut out = Outputs::default();
    let bundles = out.time("simulate", || ctx.runner.map(c.n_paths, |i| simulate::simulate_path(c, measure, i)).map_err(num))?;
    let tag = match measure {
        Measure::P => "p",
        Measure::PHat => "p_hat",
    };
    let t_grid = c.time_grid();
    let series: [(&str, &str, fn(&simulate::PathBundle) -> Vec<f64>); 6] = [
        ("s", "s:currency", |b| b.s.clone()),
        ("x", "x:factor", |b| b.x.clone()),
        ("y", "y:probability", |b| b.y.clone()),
        ("h", "h:indicator", |b| b.death.h.iter().map(|&v| f64::from(v)).collect()),
        ("w", "w:sqrt_years", |b| b.w.clone()),
        ("w_hat", "w_hat:sqrt_years", |b| b.w_hat.clone()),
    ];
    for (name, units, get) in series {
        let mut t = wide_table(ctx, &format!("path:index,columns:t_years,{units}"), &t_grid);
        for b in &bundles {
            let mut row = vec![b.index as f64];
            row.extend(get(b));
            t.push(row);
        }
        out.write(ctx, &format!("simulate_{tag}_{name}.csv"), &t)?;
    }
    let mut deaths = Table::new(&ctx.hash, "path:index,tau:years,death_index:grid_index", &["path", "tau", "death_index"]);
    for b in &bundles {
        deaths.push(vec![b.index as f64, b.death.tau, b.death.index.map_or(-1.0, |d| d as f64)]);
    }
    out.write(ctx, &format!("simulate_{tag}_death.csv"), &deaths)?;
    ctx.say(&format!("simulated {} {tag} worlds", bundles.len()));
    out.finish(ctx, "simulate")
}

/// Time slices of the `g` surface written by `solve`.
fn surface_slices(solution: &PdeSolution) -> Vec<usize> {
    let n = solution.t.len() - 1;
    hedging::checkpoints(n)
}

pub fn solve(ctx: &Context) -> Result<Outputs, RunError> {
    let c = &ctx.config;
    let mut out = Outputs::default();
    let g = out.time("solve_g", || pde::solve_g(c)).map_err(num)?;
    let gt = out.time("solve_gtilde", || pde::solve_gtilde(c)).map_err(num)?;
    let phi = out.time("solve_phi", || pde::solve_phi(c)).map_err(num)?;

    let mut t = Table::new(&ctx.hash, "t:years,s:currency,x:factor,g:currency,g_s:shares,g_x:currency_per_factor", &["t", "s", "x", "g", "g_s", "g_x"]);
    for k in surface_slices(&g) {
        let (v, ds, dx) = (g.slice(k), g.d_s_slice(k), g.d_x_slice(k));
        let nx = g.x.len();
        for (i, &s) in g.s.iter().enumerate() {
            for (j, &x) in g.x.iter().enumerate() {
                let n = i * nx + j;
                t.push(vec![g.t[k], s, x, v[n], ds[n], dx[n]]);
            }
        }
    }
    out.write(ctx, "pde_g.csv", &t)?;
    let mut t = Table::new(&ctx.hash, "t:years,s:currency,value:currency,d_s:shares", &["t", "s", "value", "d_s"]);
    for k in 0..gt.t.len() {
        for (i, &s) in gt.s.iter().enumerate() {
            t.push(vec![gt.t[k], s, gt.slice(k)[i], gt.d_s_slice(k)[i]]);
        }
    }
    out.write(ctx, "pde_gtilde.csv", &t)?;
    let mut t = Table::new(&ctx.hash, "t:years,x:factor,value:probability,d_x:per_factor", &["t", "x", "value", "d_x"]);
    for k in 0..phi.t.len() {
        for (j, &x) in phi.x.iter().enumerate() {
            t.push(vec![phi.t[k], x, phi.slice(k)[j], phi.d_x_slice(k)[j]]);
        }
    }
    out.write(ctx, "pde_phi.csv", &t)?;

    let probes = probe_points(c);
    let reports = out.time("feynman_kac", || {
        ctx.runner
            .map(probes.len(), |p| pde::feynman_kac_check(c, &g, &probes[p as usize..p as usize + 1], c.n_paths).map(|mut r| r.remove(0)))
            .map_err(num)
    })?;
    let mut t = Table::new(&ctx.hash, "t:years,s:currency,x:factor,pde:currency,mc:currency,se:currency,z:1", &["t", "s", "x", "pde", "mc", "se", "z"]);
    for r in &reports {
        t.push(vec![r.t, r.s, r.x, r.pde, r.monte_carlo.mean, r.monte_carlo.se, r.z]);
    }
    out.write(ctx, "pde_probes.csv", &t)?;

    let refinement = out.time("refinement", || pde::refinement_check(c, Problem::HedgeValue, f64::INFINITY)).map_err(num)?;
    let mut t = Table::new(&ctx.hash, "coarse:currency,fine:currency,rel_change:1,tolerance:1", &["coarse", "fine", "rel_change", "tolerance"]);
    t.push(vec![refinement.coarse, refinement.fine, refinement.rel_change, pde::REFINEMENT_TOLERANCE]);
    out.write(ctx, "pde_refinement.csv", &t)?;
    if refinement.rel_change > pde::REFINEMENT_TOLERANCE {
        return Err(num(pde::PdeError::RefinementDisagreement { rel: refinement.rel_change, tol: pde::REFINEMENT_TOLERANCE }));
    }
    ctx.say(&format!("g(0, s0, x0) = {} (refined {})", refinement.coarse, refinement.fine));
    out.finish(ctx, "solve")
}

/// Probe points for the Feynman-Kac cross-check: the initial state and a
/// few interior grid times and states.
pub fn probe_points(c: &ScenarioConfig) -> Vec<(f64, f64, f64)> {
    let t_max = c.maturity();
    let n = c.n_steps;
    let on_grid = |frac: f64| ((frac * n as f64).round() / n as f64) * t_max;
    let span = c.pde_grid.x_max - c.pde_grid.x_min;
    let x_near = |u: f64| (c.x0 + u * span).clamp(c.pde_grid.x_min, c.pde_grid.x_max);
    vec![
        (0.0, c.s0, c.x0),
        (on_grid(0.5), 1.2 * c.s0, x_near(0.05)),
        (on_grid(0.5), 0.8 * c.s0, c.x0),
        (on_grid(0.8), c.s0, x_near(0.1)),
    ]
}

pub fn filter(ctx: &Context) -> Result<Outputs, RunError> {
    let c = &ctx.config;
    let mut out = Outputs::default();
    let series = out.time("filter", || {
        ctx.runner
            .map(c.n_paths, |i| -> Result<_, Error> {
                let b = simulate::simulate_path(c, Measure::P, i)?;
                let s = filtering::run_projections(c, &b.s, rng::stream(c.seed, Purpose::Particles, i))?;
                Ok((b, s))
            })
            .map_err(num)
    })?;
    let mut t = Table::new(
        &ctx.hash,
        "path:index,k:grid_index,t:years,s:currency,h:indicator,p_mu:per_year,gamma_s:per_year,pi_y:probability",
        &["path", "k", "t", "s", "h", "p_mu", "p_mu_se", "gamma_s", "gamma_s_se", "pi_y", "pi_y_se"],
    );
    for (b, s) in &series {
        for k in 0..=c.n_steps {
            let (pm, gs) = if k < c.n_steps { (s.p_mu[k], s.gamma_s[k]) } else { (s.p_mu[k - 1], s.gamma_s[k - 1]) };
            let (pm, gs) = if k < c.n_steps { (pm, gs) } else { (nan_estimate(), nan_estimate()) };
            t.push(vec![
                b.index as f64,
                k as f64,
                s.t[k],
                b.s[k],
                f64::from(b.death.h[k]),
                pm.mean,
                pm.se,
                gs.mean,
                gs.se,
                s.pi_y[k].mean,
                s.pi_y[k].se,
            ]);
        }
    }
    out.write(ctx, "filter.csv", &t)?;
    ctx.say(&format!("filtered {} paths with {} particles", series.len(), c.n_particles));
    out.finish(ctx, "filter")
}

fn nan_estimate() -> lrm_core::stats::Estimate {
    lrm_core::stats::Estimate { mean: f64::NAN, se: f64::NAN }
}

/// Backtest over `config.n_paths` worlds on the worker pool.
pub fn run_backtest(config: &ScenarioConfig, runner: &Runner) -> Result<(PdeSolution, HedgeReport, Vec<PathOutcome>), Error> {
    if config.n_paths < hedging::MIN_BACKTEST_PATHS {
        return Err(hedging::HedgeError::InsufficientPaths { got: config.n_paths, need: hedging::MIN_BACKTEST_PATHS }.into());
    }
    let g = pde::solve_g(config)?;
    let outcomes = runner.map(config.n_paths, |i| hedging::backtest_path(config, &g, i))?;
    let report = hedging::aggregate(config, &g, &outcomes)?;
    Ok((g, report, outcomes))
}

pub const HEDGE_COLUMNS: [&str; 14] =
    ["path", "k", "t", "s", "h", "theta_star", "v_hat", "v", "eta", "c", "n", "theta_full", "v_full", "c_full"];

pub fn hedge(ctx: &Context) -> Result<(Outputs, HedgeReport), RunError> {
    let c = &ctx.config;
    let mut out = Outputs::default();
    let (_, report, outcomes) = out.time("backtest", || run_backtest(c, ctx.runner)).map_err(RunError::Numerical)?;
    let mut t = Table::new(
        &ctx.hash,
        "path:index,k:grid_index,t:years,s:currency,h:indicator,theta:shares,v:currency,eta:currency,c:currency,n:currency",
        &HEDGE_COLUMNS,
    );
    let mut hist = Table::new(&ctx.hash, "path:index,k:grid_index,t:years,s:currency,h:indicator", &["path", "k", "t", "s", "h"]);
    for o in &outcomes {
        let (p, f) = (&o.partial, &o.full);
        for k in 0..=c.n_steps {
            let th = |v: &[f64]| if k < c.n_steps { v[k] } else { 0.0 };
            let (tk, sk, hk) = (o.history.t_grid[k], o.history.s[k], f64::from(o.history.h[k]));
            t.push(vec![
                o.index as f64,
                k as f64,
                tk,
                sk,
                hk,
                th(&p.theta),
                p.v_hat[k],
                p.value[k],
                p.eta[k],
                p.cost[k],
                p.payments[k],
                th(&f.theta),
                f.value[k],
                f.cost[k],
            ]);
            hist.push(vec![o.index as f64, k as f64, tk, sk, hk]);
        }
    }
    out.write(ctx, "hedge_paths.csv", &t)?;
    out.write(ctx, "hedge_history.csv", &hist)?;
    let body = summary_csv(&report);
    out.files.push(io::write_text(&ctx.path("hedge_summary.csv"), &ctx.hash, "statistic:name,estimate:currency,se:currency,z:1,pass:bool", &body)?);
    let json = serde_json::to_string_pretty(&serde_json::json!({ "config_hash": ctx.hash, "report": report })).expect("report serializes");
    let path = ctx.path("hedge_report.json");
    io::write_bytes(&path, json.as_bytes())?;
    out.files.push(FileEntry { file: "hedge_report.json".into(), rows: 1, sha256: crate::manifest::sha256_file(&path)? });
    ctx.say(&format!(
        "backtest over {} paths: zeta0 = {:.6} (MC {:.6} ± {:.6}); statistical tests {}",
        report.n_paths,
        report.zeta0_pde,
        report.zeta0_mc.mean,
        report.zeta0_mc.se,
        if report.passed() { "pass" } else { "FAIL" }
    ));
    Ok((out.finish(ctx, "hedge")?, report))
}

/// Summary rows: `statistic,estimate,se,z,pass`.
pub fn summary_csv(r: &HedgeReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["statistic", "estimate", "se", "z", "pass"]).unwrap();
    let mut row = |name: String, e: f64, se: f64, z: f64, pass: Option<bool>| {
        let pass = pass.map_or(String::from("reported"), |p| String::from(if p { "pass" } else { "fail" }));
        w.write_record([name, e.to_string(), se.to_string(), z.to_string(), pass]).unwrap();
    };
    for (j, t) in r.cost_increments.iter().enumerate() {
        row(format!("cost_increment_{}_{}", r.checkpoints[j], r.checkpoints[j + 1]), t.estimate, t.se, t.z, Some(t.pass));
    }
    row("orthogonality_dC_dS".into(), r.orthogonality.estimate, r.orthogonality.se, r.orthogonality.z, Some(r.orthogonality.pass));
    for (j, t) in r.covariance_s.iter().enumerate() {
        row(format!("cov_dC_dS_block_{j}"), t.estimate, t.se, t.z, None);
    }
    for (j, t) in r.covariance_m.iter().enumerate() {
        row(format!("cov_dC_dM_block_{j}"), t.estimate, t.se, t.z, None);
    }
    row("price_identity".into(), r.price_identity.estimate, r.price_identity.se, r.price_identity.z, Some(r.price_identity.pass));
    row("zeta0_pde".into(), r.zeta0_pde, 0.0, f64::NAN, None);
    row("zeta0_mc".into(), r.zeta0_mc.mean, r.zeta0_mc.se, f64::NAN, None);
    row("max_terminal_value".into(), r.max_terminal_value, r.discretization_bound, f64::NAN, Some(r.terminal_value_pass));
    row("cost_variance_partial".into(), r.cost_variance_partial, 0.0, f64::NAN, None);
    row("cost_variance_full".into(), r.cost_variance_full, 0.0, f64::NAN, None);
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

/// Rejects configs the closed-form pipeline cannot handle.
pub fn closed_form_precondition(config: &ScenarioConfig, source: &Path) -> Result<(), ConfigError> {
    let mut diagnostics = Vec::new();
    if config.model.rho != 0.0 {
        diagnostics.push(Diagnostic { line: None, column: None, message: format!("closed-form requires rho = 0, got {}", config.model.rho) });
    }
    if matches!(config.contract.death_recovery, Recovery::Constant { .. }) {
        diagnostics.push(Diagnostic { line: None, column: None, message: "closed-form requires a death benefit of the form delta*s".into() });
    }
    if diagnostics.is_empty() {
        Ok(())
    } else {
        Err(ConfigError::Invalid { path: source.to_path_buf(), diagnostics })
    }
}

/// `rho = 0` pipeline: `theta*` and `theta^F` from `g~`, `Phi` and the
/// survival curve, along the same `P` worlds as `hedge`.
pub fn closed_form(ctx: &Context, source: &Path) -> Result<Outputs, RunError> {
    let c = &ctx.config;
    closed_form_precondition(c, source)?;
    let mut out = Outputs::default();
    let gt = out.time("solve_gtilde", || pde::solve_gtilde(c)).map_err(num)?;
    let phi = out.time("solve_phi", || pde::solve_phi(c)).map_err(num)?;
    let surv = hedging::survival_curve(c, &phi).map_err(num)?;
    let cf = ClosedForm::new(c, &gt, &phi, surv.clone()).map_err(num)?;
    let rows = out.time("closed_form", || {
        ctx.runner
            .map(c.n_paths, |i| -> Result<_, Error> {
                let b = simulate::simulate_path(c, Measure::P, i)?;
                let h = ObservedHistory::from_bundle(&b);
                let star = cf.theta_partial_path(&h)?;
                let stop = h.stop_index();
                let full = (0..c.n_steps)
                    .map(|k| if k < stop { cf.theta_full(b.t_grid[k], b.s[k], b.x[k]) } else { Ok(0.0) })
                    .collect::<Result<Vec<_>, _>>()?;
                Ok((h, star, full))
            })
            .map_err(num)
    })?;
    let mut t = Table::new(
        &ctx.hash,
        "path:index,k:grid_index,t:years,s:currency,h:indicator,theta:shares",
        &["path", "k", "t", "s", "h", "theta_star", "theta_full"],
    );
    for (h, star, full) in &rows {
        for k in 0..=c.n_steps {
            let th = |v: &[f64]| if k < c.n_steps { v[k] } else { 0.0 };
            t.push(vec![h.index as f64, k as f64, h.t_grid[k], h.s[k], f64::from(h.h[k]), th(star), th(full)]);
        }
    }
    out.write(ctx, "closed_form.csv", &t)?;
    let mut s = Table::new(&ctx.hash, "t:years,survival:probability", &["t", "survival"]);
    for (t_k, v) in c.time_grid().iter().zip(&surv) {
        s.push(vec![*t_k, *v]);
    }
    out.write(ctx, "closed_form_survival.csv", &s)?;
    ctx.say(&format!("closed-form strategies along {} paths", rows.len()));
    out.finish(ctx, "closed-form")
}

#[cfg(test)]
mod tests {
    use super::*;
    use lrm_core::pde::PdeError;

    #[test]
    fn exit_codes() {
        let cfg = RunError::Config(ConfigError::Invalid { path: "c.toml".into(), diagnostics: vec![] });
        assert_eq!(cfg.exit_code(), 2);
        let e = RunError::Numerical(Error::Hedging(hedging::HedgeError::Pde(PdeError::SingularSystem(4))));
        assert_eq!(e.exit_code(), 3);
        assert!(e.to_string().contains("module `pde`"));
        assert_eq!(RunError::VerifyFailed("C1".into()).exit_code(), 1);
    }

    #[test]
    fn runner_results_are_index_ordered() {
        let r = Runner::new(Some(3));
        let v: Vec<u64> = r.map::<_, (), _>(1000, |i| Ok(i * i)).unwrap();
        assert!(v.iter().enumerate().all(|(i, &x)| x == (i * i) as u64));
        let e = r.map(100, |i| if i % 7 == 3 { Err(i) } else { Ok(i) }).unwrap_err();
        assert_eq!(e, 3);
    }
}
