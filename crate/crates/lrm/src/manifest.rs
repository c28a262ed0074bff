//! `manifest.json` describes a run. Wall-clock timings go to a separate
//! `timings.json` so the manifest itself is reproducible byte for byte.

use std::collections::BTreeMap;
use std::path::Path;

use lrm_core::ScenarioConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::io::{self, FileEntry, IoError};

/// Scheme versions of each numerical module. Bumped whenever a change
/// alters the numbers a module produces for a fixed config and seed.
pub const MODULE_VERSIONS: [(&str, &str); 7] = [
    ("model_core", "1"),
    ("simulate", "1:log-euler,trapezoid-hazard,chacha8-streams"),
    ("measure", "1:trapezoid-compensator"),
    ("filtering", "1:conditional-sampling,inverse-density-weights"),
    ("pde", "1:backward-euler,lagged-cross-term,hybrid-upwind"),
    ("hedging", "1:predictable-holdings"),
    ("cli_harness", "1"),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub package_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub n_paths: usize,
    pub n_particles: usize,
    pub n_steps: usize,
    pub modules: BTreeMap<String, String>,
    pub outputs: Vec<FileEntry>,
    pub timings_file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub config_hash: String,
    pub stages: Vec<(String, f64)>,
}

impl RunManifest {
    pub fn new(command: &str, config: &ScenarioConfig, hash: &str, outputs: Vec<FileEntry>) -> Self {
        RunManifest {
            command: command.to_string(),
            package_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: hash.to_string(),
            seed: config.seed,
            n_paths: config.n_paths,
            n_particles: config.n_particles,
            n_steps: config.n_steps,
            modules: MODULE_VERSIONS.iter().map(|(m, v)| (m.to_string(), v.to_string())).collect(),
            outputs,
            timings_file: "timings.json".into(),
        }
    }

    pub fn write(&self, dir: &Path, stages: &[(String, f64)]) -> Result<(), IoError> {
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        io::write_bytes(&dir.join("manifest.json"), json.as_bytes())?;
        let t = Timings { config_hash: self.config_hash.clone(), stages: stages.to_vec() };
        let json = serde_json::to_string_pretty(&t).expect("timings serialize");
        io::write_bytes(&dir.join(&self.timings_file), json.as_bytes())
    }

    pub fn read(dir: &Path) -> Result<Self, IoError> {
        let path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&path).map_err(|source| IoError::Io { path: path.clone(), source })?;
        serde_json::from_str(&text).map_err(|e| IoError::Header { path, line: e.to_string() })
    }
}

pub fn sha256_file(path: &Path) -> Result<String, IoError> {
    let bytes = std::fs::read(path).map_err(|source| IoError::Io { path: path.to_path_buf(), source })?;
    Ok(hex::encode(Sha256::digest(bytes)))
}
