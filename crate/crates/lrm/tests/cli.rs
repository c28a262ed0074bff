//! End-to-end checks of the `lrm` binary: exit codes, diagnostics, output
//! headers, readers, measurability and reproducibility.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lrm::config;
use lrm::io;
use lrm::manifest::RunManifest;
use lrm_core::hedging::{self, ObservedHistory};
use lrm_core::pde;

fn smoke() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/smoke.toml")
}

fn lrm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lrm")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_variant(dir: &Path, name: &str, edit: impl Fn(String) -> String) -> PathBuf {
    let text = edit(std::fs::read_to_string(smoke()).unwrap());
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn zero_paths_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = lrm(&["hedge", s(&smoke()), "--paths", "0", "--quiet", "--out-dir", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("n_paths must be ≥ 1"), "{}", stderr(&o));
}

#[test]
fn parse_error_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_variant(dir.path(), "bad.toml", |t| t.replace("n_steps = 24", "n_steps = \"many\""));
    let line = std::fs::read_to_string(&cfg).unwrap().lines().position(|l| l.starts_with("n_steps")).unwrap() + 1;
    let o = lrm(&["simulate", s(&cfg), "--out-dir", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains(&format!("bad.toml:{line}:")), "{}", stderr(&o));
}

#[test]
fn invalid_value_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_variant(dir.path(), "neg.toml", |t| t.replace("sigma = 0.2", "sigma = -0.2"));
    let line = std::fs::read_to_string(&cfg).unwrap().lines().position(|l| l.starts_with("sigma")).unwrap() + 1;
    let o = lrm(&["solve", s(&cfg), "--out-dir", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains(&format!("neg.toml:{line}: sigma must be strictly positive")), "{err}");
}

#[test]
fn closed_form_requires_uncorrelated_model() {
    let dir = tempfile::tempdir().unwrap();
    let o = lrm(&["closed-form", s(&smoke()), "--out-dir", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("rho = 0"), "{}", stderr(&o));
}

#[test]
fn numerical_failure_names_module() {
    let dir = tempfile::tempdir().unwrap();
    // too coarse for the refinement check
    let cfg = write_variant(dir.path(), "coarse.toml", |t| {
        t.replace("n_s = 160", "n_s = 16").replace("n_x = 48", "n_x = 6").replace("n_t = 240", "n_t = 4")
    });
    let o = lrm(&["solve", s(&cfg), "--paths", "50", "--quiet", "--out-dir", s(dir.path())]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("module `pde`"), "{}", stderr(&o));
}

/// Every file carries the config hash, reads back, and matches the inventory.
fn check_outputs(dir: &Path) -> RunManifest {
    let m = RunManifest::read(dir).unwrap();
    let (c, _) = config::read(&smoke()).unwrap();
    assert_eq!(m.seed, c.seed);
    assert!(!m.outputs.is_empty());
    for f in &m.outputs {
        let path = dir.join(&f.file);
        assert_eq!(lrm::manifest::sha256_file(&path).unwrap(), f.sha256, "{}", f.file);
        if f.file.ends_with(".json") {
            let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
            assert_eq!(v["config_hash"], m.config_hash);
            continue;
        }
        let (hash, units) = io::read_header(&path).unwrap();
        assert_eq!(hash, m.config_hash, "{}", f.file);
        assert!(!units.is_empty());
        if f.file == "hedge_summary.csv" {
            let r = io::read_records(&path).unwrap();
            assert_eq!(r.config_hash, m.config_hash);
            assert_eq!(r.columns, ["statistic", "estimate", "se", "z", "pass"]);
            assert_eq!(r.rows.len() + 1, f.rows);
        } else {
            let t = io::read_table(&path).unwrap();
            assert_eq!(t.rows.len(), f.rows, "{}", f.file);
            // the reader and writer agree byte for byte
            let again = dir.join(format!("{}.again", f.file));
            io::write_table(&again, &t).unwrap();
            assert_eq!(std::fs::read(&again).unwrap(), std::fs::read(&path).unwrap(), "{}", f.file);
        }
    }
    m
}

#[test]
fn outputs_carry_hash_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in ["simulate", "filter", "hedge"] {
        let out = dir.path().join(cmd);
        let o = lrm(&[cmd, s(&smoke()), "--paths", "40", "--particles", "30", "--quiet", "--out-dir", s(&out)]);
        assert_eq!(o.status.code(), Some(0), "{cmd}: {}", stderr(&o));
        let m = check_outputs(&out);
        assert_eq!(m.command, cmd);
        assert_eq!(m.n_paths, 40);
        assert_eq!(m.modules.len(), 7);
    }
}

#[test]
fn solve_writes_surfaces_and_probes() {
    let dir = tempfile::tempdir().unwrap();
    let o = lrm(&["solve", s(&smoke()), "--paths", "400", "--quiet", "--out-dir", s(dir.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    check_outputs(dir.path());
    let probes = io::read_table(&dir.path().join("pde_probes.csv")).unwrap();
    let z = probes.column("z").unwrap();
    assert!(probes.rows.iter().all(|r| r[z].abs() < 4.0), "{:?}", probes.rows);
}

#[test]
fn strategy_uses_only_observed_history() {
    let dir = tempfile::tempdir().unwrap();
    let o = lrm(&["hedge", s(&smoke()), "--paths", "30", "--particles", "40", "--quiet", "--out-dir", s(dir.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let mut c = config::load(&smoke(), Default::default()).unwrap();
    c.n_paths = 30;
    c.n_particles = 40;
    let hist = io::read_table(&dir.path().join("hedge_history.csv")).unwrap();
    let paths = io::read_table(&dir.path().join("hedge_paths.csv")).unwrap();
    assert_eq!(hist.columns, ["path", "k", "t", "s", "h"]);
    let g = pde::solve_g(&c).unwrap();
    let n = c.n_steps + 1;
    let theta_col = paths.column("theta_star").unwrap();
    for (p, rows) in hist.rows.chunks(n).enumerate() {
        // rebuild the strategy from prices and the death indicator alone
        let h = ObservedHistory {
            index: p as u64,
            t_grid: rows.iter().map(|r| r[2]).collect(),
            s: rows.iter().map(|r| r[3]).collect(),
            h: rows.iter().map(|r| r[4] as u8).collect(),
        };
        let theta = hedging::theta_partial(&c, &h, &g).unwrap();
        for k in 0..c.n_steps {
            assert_eq!(theta[k], paths.rows[p * n + k][theta_col], "path {p} step {k}");
        }
    }
}

#[test]
fn closed_form_matches_generic_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_variant(dir.path(), "rho0.toml", |t| t.replace("rho = 0.5", "rho = 0.0"));
    let args = |cmd: &'static str, out: &Path| {
        vec![cmd.to_string(), s(&cfg).to_string(), "--paths".into(), "30".into(), "--particles".into(), "5000".into(), "--quiet".into(), "--out-dir".into(), s(out).to_string()]
    };
    let (a, b) = (dir.path().join("cf"), dir.path().join("hedge"));
    for (cmd, out) in [("closed-form", &a), ("hedge", &b)] {
        let argv = args(cmd, out);
        let o = lrm(&argv.iter().map(String::as_str).collect::<Vec<_>>());
        assert_eq!(o.status.code(), Some(0), "{cmd}: {}", stderr(&o));
    }
    let cf = io::read_table(&a.join("closed_form.csv")).unwrap();
    let hp = io::read_table(&b.join("hedge_paths.csv")).unwrap();
    assert_eq!(cf.rows.len(), hp.rows.len());
    let (i, j) = (cf.column("theta_star").unwrap(), hp.column("theta_star").unwrap());
    let h = hp.column("h").unwrap();
    let mut worst = 0.0f64;
    for (r, q) in cf.rows.iter().zip(&hp.rows) {
        assert_eq!(r[3], q[3], "same observed prices");
        if q[h] == 0.0 && q[j] != 0.0 {
            worst = worst.max((r[i] / q[j] - 1.0).abs());
        }
    }
    assert!(worst <= 0.02, "max rel gap {worst}");
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.file_name() != "timings.json")
        .map(|e| (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn reruns_are_byte_identical_for_any_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let mut runs = Vec::new();
    for (name, workers) in [("a", "1"), ("b", "1"), ("c", "4")] {
        let out = dir.path().join(name);
        let o = lrm(&["hedge", s(&smoke()), "--paths", "60", "--particles", "30", "--workers", workers, "--quiet", "--out-dir", s(&out)]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        runs.push(files(&out));
    }
    assert_eq!(runs[0], runs[1]);
    assert_eq!(runs[0], runs[2]);
    let o = lrm(&["hedge", s(&smoke()), "--paths", "60", "--particles", "30", "--seed", "99", "--quiet", "--out-dir", s(&dir.path().join("d"))]);
    assert_eq!(o.status.code(), Some(0));
    assert_ne!(files(&dir.path().join("d")), runs[0]);
}
