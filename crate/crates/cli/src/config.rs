//! Run configuration: every flag has a config-file key of the same name
//! (underscores instead of hyphens). Precedence is flag, then the file's
//! `[command]` table, then the file's top-level keys, then the default.
//!
//! ```toml
//! seed = 7
//! out = "runs/a"
//!
//! [estimate]
//! k = 30
//! strategy = "semi_adaptive"
//! ```

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use overica::deflation::{DeflationConfig, OverIcaConfig, Step1, Strategy};
use overica::solver::{GMode, SolverConfig};

use crate::error::CliError;

/// Keys whose string values are enum names; `semi-adaptive` and
/// `semi_adaptive` are both accepted.
const ENUM_KEYS: &[&str] = &["step1", "strategy", "g_mode", "mode", "gray", "sweep", "format"];

pub fn load_file(path: Option<&Path>) -> Result<Option<toml::Table>, CliError> {
    let Some(path) = path else { return Ok(None) };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("config {}: {e}", path.display())))?;
    let table = text
        .parse::<toml::Table>()
        .map_err(|e| CliError::Input(format!("config {}: {e}", path.display())))?;
    Ok(Some(table))
}

fn object(v: Value) -> Map<String, Value> {
    match v {
        Value::Object(m) => m,
        _ => Map::new(),
    }
}

/// Merges flags over the config file over `T::default()`.
pub fn resolve<T>(command: &str, file: Option<&toml::Table>, flags: &impl Serialize) -> Result<T, CliError>
where
    T: Default + Serialize + DeserializeOwned,
{
    let defaults = object(serde_json::to_value(T::default()).map_err(anyhow::Error::from)?);
    let known: BTreeSet<String> = defaults.keys().cloned().collect();
    let mut merged = defaults;
    if let Some(file) = file {
        // Top-level keys may be shared by several commands; ignore the ones
        // this command does not have.
        for (key, v) in file {
            if !v.is_table() && known.contains(key) {
                merged.insert(key.clone(), serde_json::to_value(v).map_err(anyhow::Error::from)?);
            }
        }
        if let Some(section) = file.get(command) {
            let section = section
                .as_table()
                .ok_or_else(|| CliError::Input(format!("config: [{command}] must be a table")))?;
            for (key, v) in section {
                if !known.contains(key) {
                    return Err(CliError::Input(format!("config: unknown key {key:?} in [{command}]")));
                }
                merged.insert(key.clone(), serde_json::to_value(v).map_err(anyhow::Error::from)?);
            }
        }
    }
    for (key, v) in object(serde_json::to_value(flags).map_err(anyhow::Error::from)?) {
        if !v.is_null() {
            merged.insert(key, v);
        }
    }
    for key in ENUM_KEYS {
        if let Some(Value::String(s)) = merged.get_mut(*key) {
            *s = s.replace('-', "_").to_ascii_lowercase();
        }
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::Input(format!("{command} config: {e}")))
}

/// SHA-256 of the canonical JSON form of a resolved config. The output
/// directory does not affect results and is left out.
pub fn config_hash(resolved: &impl Serialize) -> Result<String, CliError> {
    // serde_json maps are ordered, so the encoding is canonical.
    let mut v = serde_json::to_value(resolved).map_err(anyhow::Error::from)?;
    if let Value::Object(m) = &mut v {
        m.remove("out");
    }
    let bytes = serde_json::to_vec(&v).map_err(anyhow::Error::from)?;
    Ok(hex(&Sha256::digest(&bytes)))
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Estimator flags shared by `estimate`, `bench` and `cifar-estimate`.
#[derive(Debug, Clone, Default, clap::Args, Serialize)]
pub struct EstimatorArgs {
    /// Step I estimator: gencov or cum4
    #[arg(long)]
    pub step1: Option<String>,
    /// Number of generalized-covariance probes (default 10k)
    #[arg(long)]
    pub probes: Option<usize>,
    /// Probe standard deviation (default 1/(√p·mean row std))
    #[arg(long)]
    pub probe_scale: Option<f64>,
    /// Solver penalty weight (default 1000·‖G‖_F)
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub mm_rounds: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    /// clustering, adaptive or semi_adaptive
    #[arg(long)]
    pub strategy: Option<String>,
    #[arg(long)]
    pub oversample_factor: Option<usize>,
    #[arg(long)]
    pub cluster_var_threshold: Option<f64>,
    /// random or deterministic
    #[arg(long)]
    pub g_mode: Option<String>,
    #[arg(long)]
    pub refine: Option<bool>,
    #[arg(long)]
    pub max_retries: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub step1: Step1,
    pub probes: Option<usize>,
    pub probe_scale: Option<f64>,
    pub mu: Option<f64>,
    pub max_iter: usize,
    pub mm_rounds: usize,
    pub tol: f64,
    pub strategy: Strategy,
    pub oversample_factor: usize,
    pub cluster_var_threshold: f64,
    pub g_mode: GMode,
    pub refine: bool,
    pub max_retries: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        let o = OverIcaConfig::default();
        EstimatorConfig {
            step1: o.step1,
            probes: o.probes,
            probe_scale: o.probe_scale,
            mu: o.solver.mu,
            max_iter: o.solver.max_iter,
            mm_rounds: o.solver.mm_rounds,
            tol: o.solver.tol,
            strategy: o.deflation.strategy,
            oversample_factor: o.deflation.oversample_factor,
            cluster_var_threshold: o.deflation.cluster_var_threshold,
            g_mode: o.deflation.g_mode,
            refine: o.deflation.refine,
            max_retries: o.deflation.max_retries,
        }
    }
}

impl EstimatorConfig {
    pub fn overica(&self, seed: u64) -> Result<OverIcaConfig, CliError> {
        let solver = SolverConfig {
            mu: self.mu,
            max_iter: self.max_iter,
            mm_rounds: self.mm_rounds,
            tol: self.tol,
            seed,
        };
        let deflation = DeflationConfig {
            strategy: self.strategy,
            oversample_factor: self.oversample_factor,
            cluster_var_threshold: self.cluster_var_threshold,
            g_mode: self.g_mode,
            refine: self.refine,
            max_retries: self.max_retries,
            seed,
        };
        solver.validate()?;
        deflation.validate()?;
        if self.probes == Some(0) {
            return Err(CliError::Input("probes must be at least 1".into()));
        }
        if let Some(s) = self.probe_scale {
            if !(s.is_finite() && s > 0.0) {
                return Err(CliError::Input(format!("probe_scale must be positive, got {s}")));
            }
        }
        Ok(OverIcaConfig {
            step1: self.step1,
            probes: self.probes,
            probe_scale: self.probe_scale,
            solver,
            deflation,
            seed,
        })
    }
}

pub fn default_out() -> PathBuf {
    PathBuf::from("oica-out")
}
