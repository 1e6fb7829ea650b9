//! Experiment configuration: one TOML file per run, overridable from the command line.
//!
//! ```toml
//! experiment = "simulate"
//! seed = 7
//! model_file = "model.toml"   # or an inline [model] table
//!
//! [simulate]
//! x0 = [1.0, 2.0]
//! t = 1.0
//! n_paths = 10000
//! ```

use std::path::{Path, PathBuf};

use jcir::model::ModelParams;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::CliError;

pub const EXPERIMENTS: [&str; 11] = [
    "simulate",
    "riccati-check",
    "density1d",
    "invariant1d",
    "condition-a",
    "rates",
    "boundary",
    "lyapunov",
    "ergodicity",
    "besov",
    "dobrushin",
];

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "JCIR_OUT";

/// Overrides taken from global flags.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    /// `key=value` pairs for the experiment table; values are parsed as TOML.
    pub set: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub experiment: String,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub model: ModelParams,
    /// The experiment table before defaults are applied.
    pub section: toml::Table,
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// Reads a TOML config, a stored `manifest.json`, or an artifact directory
/// containing `resolved_config.toml`.
fn read_table(path: &Path) -> Result<toml::Table, CliError> {
    let path = if path.is_dir() {
        path.join("resolved_config.toml")
    } else {
        path.to_path_buf()
    };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
    if path.extension().is_some_and(|e| e == "json") {
        let manifest: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let config = manifest
            .get("config")
            .cloned()
            .ok_or_else(|| config_err(format!("{} has no `config` entry", path.display())))?;
        return serde_json::from_value(config)
            .map_err(|e| config_err(format!("{}: {e}", path.display())));
    }
    toml::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))
}

fn parse_set(table: &mut toml::Table, kv: &str) -> Result<(), CliError> {
    let (key, value) = kv
        .split_once('=')
        .ok_or_else(|| config_err(format!("--set expects key=value, got `{kv}`")))?;
    let parsed: toml::Table = toml::from_str(&format!("v = {value}"))
        .or_else(|_| toml::from_str(&format!("v = {}", toml::Value::String(value.to_string()))))
        .map_err(|e| config_err(format!("--set {kv}: {e}")))?;
    table.insert(key.trim().to_string(), parsed["v"].clone());
    Ok(())
}

/// Resolves the experiment name, seed, model and experiment table.
///
/// `experiment` comes from the subcommand; `None` means it must be named in the file.
pub fn load(
    path: Option<&Path>,
    experiment: Option<&str>,
    ov: &Overrides,
) -> Result<LoadedConfig, CliError> {
    let mut table = match path {
        Some(p) => read_table(p)?,
        None => toml::Table::new(),
    };
    let base_dir = path
        .and_then(|p| if p.is_dir() { Some(p) } else { p.parent() })
        .map(Path::to_path_buf)
        .unwrap_or_default();

    let file_experiment = match table.remove("experiment") {
        Some(toml::Value::String(s)) => Some(s),
        Some(other) => {
            return Err(config_err(format!(
                "`experiment` must be a string, got {other}"
            )))
        }
        None => None,
    };
    let experiment = match (experiment, file_experiment) {
        (Some(cmd), Some(file)) if cmd != file => {
            return Err(config_err(format!("config is for `{file}`, not `{cmd}`")));
        }
        (Some(cmd), _) => cmd.to_string(),
        (None, Some(file)) => file,
        (None, None) => {
            return Err(config_err(
                "no experiment named on the command line or in the config",
            ))
        }
    };
    if !EXPERIMENTS.contains(&experiment.as_str()) {
        return Err(config_err(format!(
            "unknown experiment `{experiment}` (expected one of {})",
            EXPERIMENTS.join(", ")
        )));
    }

    let seed = match table.remove("seed") {
        Some(toml::Value::Integer(s)) if s >= 0 => s as u64,
        Some(other) => {
            return Err(config_err(format!(
                "`seed` must be a nonnegative integer, got {other}"
            )))
        }
        None => 0,
    };
    let seed = ov.seed.unwrap_or(seed);
    let out = match table.remove("out") {
        Some(toml::Value::String(s)) => Some(base_dir.join(s)),
        Some(other) => return Err(config_err(format!("`out` must be a path, got {other}"))),
        None => None,
    };
    let out = ov.out.clone().or(out);

    let model_value = match (table.remove("model"), table.remove("model_file")) {
        (Some(_), Some(_)) => {
            return Err(config_err("give either [model] or model_file, not both"))
        }
        (Some(v), None) => v,
        (None, Some(toml::Value::String(f))) => {
            let file = base_dir.join(&f);
            let text = std::fs::read_to_string(&file).map_err(|e| {
                config_err(format!("cannot read model file {}: {e}", file.display()))
            })?;
            let mut t: toml::Table = toml::from_str(&text)
                .map_err(|e| config_err(format!("{}: {e}", file.display())))?;
            // a model file may hold the fields at top level or under [model]
            match t.remove("model") {
                Some(inner) => inner,
                None => toml::Value::Table(t),
            }
        }
        (None, Some(other)) => {
            return Err(config_err(format!(
                "`model_file` must be a path, got {other}"
            )))
        }
        (None, None) => return Err(config_err("no model: add a [model] table or model_file")),
    };
    let model: ModelParams = model_value
        .try_into()
        .map_err(|e: toml::de::Error| config_err(format!("model: {}", e.message())))?;

    let mut section = match table.remove(&experiment) {
        Some(toml::Value::Table(t)) => t,
        Some(other) => {
            return Err(config_err(format!(
                "[{experiment}] must be a table, got {other}"
            )))
        }
        None => toml::Table::new(),
    };
    if let Some(key) = table.keys().next() {
        return Err(config_err(format!("unknown config key `{key}`")));
    }
    for kv in &ov.set {
        parse_set(&mut section, kv)?;
    }
    Ok(LoadedConfig {
        experiment,
        seed,
        out,
        model,
        section,
    })
}

/// Applies defaults to an experiment table and returns the knobs together
/// with their fully resolved TOML form.
pub fn knobs<T: DeserializeOwned + Serialize>(
    name: &str,
    section: &toml::Table,
) -> Result<(T, toml::Table), CliError> {
    let k: T = toml::Value::Table(section.clone())
        .try_into()
        .map_err(|e: toml::de::Error| config_err(format!("[{name}]: {}", e.message())))?;
    let resolved = to_table(&k).map_err(|e| config_err(format!("[{name}]: {e}")))?;
    Ok((k, resolved))
}

fn to_table<T: Serialize>(v: &T) -> Result<toml::Table, String> {
    match toml::Value::try_from(v).map_err(|e| e.to_string())? {
        toml::Value::Table(t) => Ok(t),
        other => Err(format!("expected a table, got {other}")),
    }
}

/// The resolved config as written next to the artifacts.
pub fn resolved_table(cfg: &LoadedConfig, knobs: toml::Table) -> Result<toml::Table, CliError> {
    let mut t = toml::Table::new();
    t.insert("experiment".into(), cfg.experiment.clone().into());
    t.insert("seed".into(), toml::Value::Integer(cfg.seed as i64));
    let model = to_table(&cfg.model).map_err(|e| config_err(format!("model: {e}")))?;
    t.insert("model".into(), model.into());
    t.insert(cfg.experiment.clone(), knobs.into());
    Ok(t)
}

pub mod knob {
    use serde::{Deserialize, Serialize};

    fn quantiles() -> Vec<f64> {
        vec![0.05, 0.25, 0.5, 0.75, 0.95]
    }
    fn ten() -> usize {
        10
    }
    fn n_times() -> usize {
        101
    }
    fn rtol() -> f64 {
        1e-10
    }
    fn atol() -> f64 {
        1e-12
    }
    fn trunc_tol() -> f64 {
        1e-12
    }
    fn y_count() -> usize {
        4001
    }
    fn rate_eps() -> Vec<f64> {
        vec![0.2, 0.1, 0.05, 0.025]
    }
    fn half() -> f64 {
        0.5
    }
    fn substeps() -> usize {
        8
    }
    fn boundary_eps() -> Vec<f64> {
        vec![0.02, 0.05, 0.1, 0.2]
    }
    fn one() -> f64 {
        1.0
    }
    fn r_max() -> f64 {
        1e3
    }
    fn quad_tol() -> f64 {
        1e-9
    }
    fn bins() -> usize {
        20
    }
    fn bootstrap() -> usize {
        200
    }
    fn scalings() -> Vec<f64> {
        vec![0.0, 1.0, 2.0, 4.0]
    }
    fn besov_times() -> Vec<f64> {
        vec![0.1, 0.2, 0.4, 0.8]
    }
    fn lambda_factors() -> Vec<f64> {
        vec![0.5]
    }
    fn besov_y_min() -> f64 {
        -0.5
    }
    fn besov_y_max() -> f64 {
        20.0
    }
    fn besov_step() -> f64 {
        0.02
    }
    fn n_pairs() -> usize {
        8
    }
    fn n_paths_small() -> usize {
        10_000
    }

    #[derive(Debug, Deserialize, Serialize)]
    #[serde(deny_unknown_fields)]
    pub struct Simulate {
        pub x0: Vec<f64>,
        pub t: f64,
        pub n_paths: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pub dt: Option<f64>,
        /// Number of equally spaced summary times (the last one is `t`).
        #[serde(default = "ten")]
        pub snapshots: usize,
        #[serde(default = "quantiles")]
        pub quantiles: Vec<f64>,
        /// Probe points `y` for `E e^{i⟨y, X_t⟩}` against the Riccati value.
        #[serde(default)]
        pub char_probes: Vec<Vec<f64>>,
        #[serde(default)]
        pub dump_terminal: bool,
    }

    #[derive(Debug, Deserialize, Serialize)]
    #[serde(deny_unknown_fields)]
    pub struct RiccatiCheck {
        /// Real initial value `u0 ≤ 0`.
        pub u0: Vec<f64>,
        /// Optional imaginary part of `u0`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pub u0_im: Option<Vec<f64>>,
        pub t_max: f64,
        #[serde(default = "n_times")]
        pub n_times: usize,
        #[serde(default = "rtol")]
        pub rtol: f64,
        #[serde(default = "atol")]
        pub atol: f64,
    }

    #[derive(Debug, Deserialize, Serialize)]
    #[serde(deny_unknown_fields)]
    pub struct Density1d {
        pub x: f64,
        pub t: f64,
        pub y_min: f64,
        pub y_max: f64,
        #[serde(default = "y_count")]
        pub y_count: usize,
        /// Derivative orders `(n, k)` of `∂_x^n ∂_y^k p_t`.
        #[serde(default)]
        pub n: u32,
        #[serde(default)]
        pub k: u32,
        #[serde(default = "trunc_tol")]
        pub trunc_tol: f64,
    }

    #[derive(Debug, Deserialize, Serialize)]
    #[serde(deny_unknown_fields)]
    pub struct Invariant1d {
        pub y_min: f64,
        pub y_max: f64,
        #[serde(default = "y_count")]
        pub y_count: usize,
        #[serde(default = "trunc_tol")]
        pub trunc_tol: f64,
    }

    #[derive(Debug, Default, Deserialize, Serialize)]
    #[serde(deny_unknown_fields)]
    pub struct ConditionA {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pub k: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pub xi_grid: Option<Vec<f64>>,
    }

    #[derive(Debug, Deserialize, Serialize)]
    #[serde(deny_unknown_fields)]
    pub struct Rates {
        pub x0: Vec<f64>,
        pub t: f64,
        pub n_paths: usize,
        #[serde(default = "rate_eps")]
        pub eps: Vec<f64>,
        #[serde(default = "half")]
        pub eta: f64,
        #[serde(default = "substeps")]
        pub substeps: usize,
    }

    #[derive(Debug, Deserialize, Serialize)]
    #[serde(deny_unknown_fields)]
    pub struct Boundary {
        pub x0: Vec<f64>,
        pub n_paths: usize,
        #[serde(default = "one")]
        pub t: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pub dt: Option<f64>,
        #[serde(default = "boundary_eps")]
        pub eps: Vec<f64>,
    }

    #[derive(Debug, Deserialize, Serialize)]
    #[serde(deny_unknown_fields)]
    pub struct Lyapunov {
        #[serde(default = "r_max")]
        pub r_max: f64,
        #[serde(default = "quad_tol")]
        pub quad_tol: f64,
    }

    #[derive(Debug, Deserialize, Serialize)]
    #[serde(deny_unknown_fields)]
    pub struct Ergodicity {
        pub x: Vec<f64>,
        pub y: Vec<f64>,
        pub t_grid: Vec<f64>,
        pub n_paths: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pub dt: Option<f64>,
        #[serde(default = "bins")]
        pub bins_per_axis: usize,
        #[serde(default = "bootstrap")]
        pub bootstrap: usize,
    }

    #[derive(Debug, Deserialize, Serialize)]
    #[serde(deny_unknown_fields)]
    pub struct Besov {
        pub x_bar: Vec<f64>,
        pub n_paths: usize,
        #[serde(default = "scalings")]
        pub x_scalings: Vec<f64>,
        #[serde(default = "one")]
        pub t_fixed: f64,
        #[serde(default = "besov_times")]
        pub times: Vec<f64>,
        #[serde(default = "half")]
        pub delta: f64,
        /// Smoothness orders as multiples of `min_i a_i`; the first drives the summary.
        #[serde(default = "lambda_factors")]
        pub lambda_factors: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pub dt: Option<f64>,
        #[serde(default = "besov_y_min")]
        pub y_min: f64,
        #[serde(default = "besov_y_max")]
        pub y_max: f64,
        #[serde(default = "besov_step")]
        pub y_step: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pub h_min: Option<f64>,
    }

    #[derive(Debug, Deserialize, Serialize)]
    #[serde(deny_unknown_fields)]
    pub struct Dobrushin {
        pub level: f64,
        pub horizon: f64,
        #[serde(default = "n_pairs")]
        pub n_pairs: usize,
        #[serde(default = "n_paths_small")]
        pub n_paths: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pub dt: Option<f64>,
        #[serde(default = "bins")]
        pub bins_per_axis: usize,
    }
}
