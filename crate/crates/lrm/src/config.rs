//! TOML scenario files: loading, command-line overrides, validation with
//! line numbers, and the canonical hash stamped on every output.

use std::fmt;
use std::path::{Path, PathBuf};

use lrm_core::model;
use lrm_core::ScenarioConfig;
use sha2::{Digest, Sha256};

/// One problem found in a config file, with its 1-based position when known.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub message: String,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: cannot read config: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}", render(.path, .diagnostics))]
    Parse { path: PathBuf, diagnostics: Vec<Diagnostic> },
    #[error("{}", render(.path, .diagnostics))]
    Invalid { path: PathBuf, diagnostics: Vec<Diagnostic> },
}

impl ConfigError {
    pub fn diagnostics(&self) -> &[Diagnostic] {
        match self {
            ConfigError::Io { .. } => &[],
            ConfigError::Parse { diagnostics, .. } | ConfigError::Invalid { diagnostics, .. } => diagnostics,
        }
    }
}

fn render(path: &Path, diagnostics: &[Diagnostic]) -> String {
    let mut out = String::new();
    for (i, d) in diagnostics.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&format!("{}", path.display()));
        if let Some(line) = d.line {
            out.push_str(&format!(":{line}"));
            if let Some(col) = d.column {
                out.push_str(&format!(":{col}"));
            }
        }
        out.push_str(": ");
        out.push_str(&d.message);
    }
    out
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.line, self.column) {
            (Some(l), Some(c)) => write!(f, "{l}:{c}: {}", self.message),
            (Some(l), None) => write!(f, "{l}: {}", self.message),
            _ => f.write_str(&self.message),
        }
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rfind('\n').map_or(before.len(), |p| before.len() - p - 1) + 1;
    (line, col)
}

/// Keys a validation message may refer to, longest first so `n_particles`
/// wins over shorter prefixes.
const KEYS: &[&str] = &[
    "n_particles", "maturity", "c_bound", "n_steps", "n_paths", "strike", "gamma0", "gamma1", "kappa", "theta",
    "delta", "sigma", "x_min", "x_max", "s_max", "rho", "n_s", "n_x", "n_t", "s0", "x0", "m0", "m1", "a", "k",
];

/// Line of the first `key = ...` assignment for the first key the message
/// names.
fn locate_key(text: &str, message: &str) -> Option<usize> {
    let words: Vec<&str> = message.split(|c: char| !(c.is_alphanumeric() || c == '_')).collect();
    let key = KEYS.iter().find(|k| words.contains(k))?;
    text.lines().position(|l| {
        let l = l.trim_start();
        l.strip_prefix(key).is_some_and(|rest| rest.trim_start().starts_with('='))
    })
    .map(|i| i + 1)
}

/// Parses TOML text; `path` only labels diagnostics.
pub fn parse_str(text: &str, path: &Path) -> Result<ScenarioConfig, ConfigError> {
    toml::from_str::<ScenarioConfig>(text).map_err(|e| {
        let (line, column) = match e.span() {
            Some(span) => {
                let (l, c) = line_col(text, span.start);
                (Some(l), Some(c))
            }
            None => (None, None),
        };
        ConfigError::Parse {
            path: path.to_path_buf(),
            diagnostics: vec![Diagnostic { line, column, message: e.message().to_string() }],
        }
    })
}

/// Reads and parses a config file without validating it.
pub fn read(path: &Path) -> Result<(ScenarioConfig, String), ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    Ok((parse_str(&text, path)?, text))
}

/// Command-line overrides applied after parsing and before validation.
#[derive(Clone, Copy, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub particles: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, config: &mut ScenarioConfig) {
        if let Some(s) = self.seed {
            config.seed = s;
        }
        if let Some(p) = self.paths {
            config.n_paths = p;
        }
        if let Some(p) = self.particles {
            config.n_particles = p;
        }
    }
}

/// Validates a config; diagnostics point at the offending line of `text`
/// when the value came from the file.
pub fn validate(config: &ScenarioConfig, text: Option<&str>, path: &Path) -> Result<(), ConfigError> {
    let report = model::validate(config);
    if report.passed() {
        return Ok(());
    }
    let diagnostics = report
        .violations
        .into_iter()
        .map(|message| Diagnostic { line: text.and_then(|t| locate_key(t, &message)), column: None, message })
        .collect();
    Err(ConfigError::Invalid { path: path.to_path_buf(), diagnostics })
}

/// Reads, overrides and validates.
pub fn load(path: &Path, overrides: Overrides) -> Result<ScenarioConfig, ConfigError> {
    let (mut config, text) = read(path)?;
    let before = config.clone();
    overrides.apply(&mut config);
    // diagnostics only point into the file for values that came from it
    let from_file = before == config;
    validate(&config, from_file.then_some(text.as_str()), path)?;
    Ok(config)
}

/// SHA-256 of the canonical JSON form of the config, hex encoded.
pub fn config_hash(config: &ScenarioConfig) -> String {
    let bytes = serde_json::to_vec(config).expect("config serializes");
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"
s0 = 1.0
x0 = 0.05
n_steps = 20
n_paths = 50
n_particles = 20
seed = 3
c_bound = 5.0

[model]
rho = 0.5
[model.price]
sigma = 0.2
m0 = 0.02
m1 = 1.0
[model.factor]
kind = "cir"
kappa = 1.0
theta = 0.05
a = 0.2
[model.hazard]
kind = "linear"

[contract]
maturity = 1.0
survival_payoff = { kind = "call", strike = 1.0 }
death_recovery = { kind = "linear", delta = 0.5 }

[pde_grid]
n_s = 40
n_x = 16
s_max = 4.0
x_min = -0.05
x_max = 0.6
"#;

    #[test]
    fn parses_and_validates() {
        let c = parse_str(GOOD, Path::new("good.toml")).unwrap();
        validate(&c, Some(GOOD), Path::new("good.toml")).unwrap();
        assert_eq!(c.n_steps, 20);
        assert_eq!(config_hash(&c).len(), 64);
    }

    #[test]
    fn parse_error_has_line() {
        let bad = GOOD.replace("n_steps = 20", "n_steps = \"twenty\"");
        let e = parse_str(&bad, Path::new("bad.toml")).unwrap_err();
        let d = &e.diagnostics()[0];
        assert_eq!(d.line, Some(4));
        assert!(e.to_string().starts_with("bad.toml:4:"));
    }

    #[test]
    fn unknown_key_rejected() {
        let bad = GOOD.replace("seed = 3", "seed = 3\nsede = 4");
        assert!(matches!(parse_str(&bad, Path::new("x.toml")), Err(ConfigError::Parse { .. })));
    }

    #[test]
    fn validation_points_at_line() {
        let bad = GOOD.replace("sigma = 0.2", "sigma = 0.0");
        let c = parse_str(&bad, Path::new("v.toml")).unwrap();
        let e = validate(&c, Some(&bad), Path::new("v.toml")).unwrap_err();
        let d = e.diagnostics().iter().find(|d| d.message.contains("sigma must be strictly positive")).unwrap();
        assert_eq!(d.line, Some(13));
    }

    #[test]
    fn zero_paths_message() {
        let mut c = parse_str(GOOD, Path::new("g.toml")).unwrap();
        Overrides { paths: Some(0), ..Default::default() }.apply(&mut c);
        let e = validate(&c, None, Path::new("g.toml")).unwrap_err();
        assert!(e.to_string().contains("n_paths must be ≥ 1"));
    }

    #[test]
    fn hash_tracks_content() {
        let a = parse_str(GOOD, Path::new("g.toml")).unwrap();
        let mut b = a.clone();
        assert_eq!(config_hash(&a), config_hash(&b));
        b.seed += 1;
        assert_ne!(config_hash(&a), config_hash(&b));
    }
}
