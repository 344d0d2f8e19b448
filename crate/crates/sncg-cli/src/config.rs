//! Experiment configuration: a single TOML file with CLI `key=value`
//! overrides, precedence CLI > environment > file > defaults, echoed back in
//! resolved form next to the outputs.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Environment variable overriding the output directory.
pub const OUT_DIR_ENV: &str = "SNCG_OUT_DIR";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parsing {path}: {source}")]
    Parse {
        path: String,
        source: Box<toml::de::Error>,
    },
    #[error("override '{0}' is not of the form key=value")]
    BadOverride(String),
    #[error("override path '{0}' does not address a table")]
    BadOverridePath(String),
    #[error("config field {field}: {detail}")]
    Invalid { field: String, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Sncg1,
    Sncg2,
    Sgd,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Algorithm::Sncg1 => "sncg1",
            Algorithm::Sncg2 => "sncg2",
            Algorithm::Sgd => "sgd",
        };
        f.write_str(s)
    }
}

impl FromStr for Algorithm {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sncg1" => Ok(Algorithm::Sncg1),
            "sncg2" => Ok(Algorithm::Sncg2),
            "sgd" => Ok(Algorithm::Sgd),
            other => Err(format!("unknown algorithm '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    SaddleQuadratic,
    SeparableQuartic,
    PcaFiniteSum,
    MatrixFile,
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ProblemKind::SaddleQuadratic => "saddle_quadratic",
            ProblemKind::SeparableQuartic => "separable_quartic",
            ProblemKind::PcaFiniteSum => "pca_finite_sum",
            ProblemKind::MatrixFile => "matrix_file",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub kind: ProblemKind,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default)]
    pub data_seed: u64,
    /// Finite population size; 0 selects the generator-based infinite
    /// population (saddle_quadratic only).
    #[serde(default = "default_population")]
    pub population: usize,
    /// Gradient-noise ball radius (saddle_quadratic).
    #[serde(default = "default_noise_radius")]
    pub noise_radius: f64,
    /// Per-sample weight spread (separable_quartic); 0 is noiseless.
    #[serde(default)]
    pub weight_spread: f64,
    /// Containment box half-width (separable_quartic).
    #[serde(default = "default_box_radius")]
    pub box_radius: f64,
    /// Population matrix path (matrix_file).
    #[serde(default)]
    pub path: Option<String>,
}

fn default_dim() -> usize {
    10
}
fn default_population() -> usize {
    256
}
fn default_noise_radius() -> f64 {
    0.04
}
fn default_box_radius() -> f64 {
    1.3
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartKind {
    /// The problem's documented default start.
    Default,
    Origin,
    /// Explicit coordinates from `value`.
    Fixed,
    /// Default start plus a per-run uniform perturbation in
    /// `[-halfwidth, halfwidth]^d`.
    Uniform,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartConfig {
    #[serde(default = "default_start_kind")]
    pub kind: StartKind,
    #[serde(default)]
    pub value: Option<Vec<f64>>,
    #[serde(default = "default_halfwidth")]
    pub halfwidth: f64,
}

fn default_start_kind() -> StartKind {
    StartKind::Default
}
fn default_halfwidth() -> f64 {
    0.2
}

impl Default for StartConfig {
    fn default() -> Self {
        StartConfig {
            kind: StartKind::Default,
            value: None,
            halfwidth: default_halfwidth(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeConfig {
    Theoretical,
    Practical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingConfig {
    WithReplacement,
    WithoutReplacement,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub algorithms: Vec<Algorithm>,
    pub seeds: Vec<u64>,
    pub eps1: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Optional explicit second-order target; the default is `eps1^alpha`.
    #[serde(default)]
    pub eps2: Option<f64>,
    #[serde(default = "default_mode")]
    pub mode: ModeConfig,
    #[serde(default = "default_cap")]
    pub grad_cap: usize,
    #[serde(default = "default_cap")]
    pub hess_cap: usize,
    #[serde(default)]
    pub max_iters: Option<usize>,
    #[serde(default = "default_verify")]
    pub verify: bool,
    #[serde(default = "default_budget_factor")]
    pub solver_budget_factor: f64,
    #[serde(default = "default_dense_cap")]
    pub dense_cap: usize,
    #[serde(default = "default_sampling")]
    pub sampling: SamplingConfig,
}

fn default_alpha() -> f64 {
    0.5
}
fn default_delta() -> f64 {
    0.2
}
fn default_mode() -> ModeConfig {
    ModeConfig::Theoretical
}
fn default_cap() -> usize {
    256
}
fn default_verify() -> bool {
    true
}
fn default_budget_factor() -> f64 {
    8.0
}
fn default_dense_cap() -> usize {
    2000
}
fn default_sampling() -> SamplingConfig {
    SamplingConfig::WithReplacement
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    #[serde(default)]
    pub workers: Option<usize>,
    pub problem: ProblemConfig,
    #[serde(default)]
    pub start: StartConfig,
    pub run: RunConfig,
}

fn default_schema_version() -> u32 {
    CONFIG_SCHEMA_VERSION
}
fn default_output_dir() -> String {
    "sncg-runs".to_string()
}

impl ExperimentConfig {
    /// Loads a config file, applies `key=value` overrides (dotted paths into
    /// the TOML tree), then the environment, then validates.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let display = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: display.clone(),
            source,
        })?;
        let mut value: toml::Value = toml::from_str(&text).map_err(|source| ConfigError::Parse {
            path: display.clone(),
            source: Box::new(source),
        })?;
        for entry in overrides {
            apply_override(&mut value, entry)?;
        }
        let mut cfg: ExperimentConfig =
            value.try_into().map_err(|source| ConfigError::Parse {
                path: display,
                source: Box::new(source),
            })?;
        // CLI overrides were already applied to the tree; the environment
        // slots in below them for the output directory only.
        if !overrides.iter().any(|o| o.starts_with("output_dir=")) {
            if let Ok(dir) = std::env::var(OUT_DIR_ENV) {
                if !dir.is_empty() {
                    cfg.output_dir = dir;
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |field: &str, detail: String| {
            Err(ConfigError::Invalid {
                field: field.to_string(),
                detail,
            })
        };
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return fail(
                "schema_version",
                format!("unsupported version {}", self.schema_version),
            );
        }
        if self.run.algorithms.is_empty() {
            return fail("run.algorithms", "must list at least one algorithm".into());
        }
        if self.run.seeds.is_empty() {
            return fail("run.seeds", "must list at least one seed".into());
        }
        if !(self.run.eps1 > 0.0 && self.run.eps1 < 1.0) {
            return fail("run.eps1", format!("must lie in (0,1), got {}", self.run.eps1));
        }
        if !(self.run.alpha > 0.0 && self.run.alpha <= 1.0) {
            return fail(
                "run.alpha",
                format!("must lie in (0,1], got {}", self.run.alpha),
            );
        }
        if !(self.run.delta > 0.0 && self.run.delta < 1.0) {
            return fail(
                "run.delta",
                format!("must lie in (0,1), got {}", self.run.delta),
            );
        }
        if let Some(eps2) = self.run.eps2 {
            if !(eps2 > 0.0 && eps2 < 1.0) {
                return fail("run.eps2", format!("must lie in (0,1), got {eps2}"));
            }
        }
        if self.run.mode == ModeConfig::Practical
            && (self.run.grad_cap == 0 || self.run.hess_cap == 0)
        {
            return fail(
                "run.grad_cap/hess_cap",
                "practical mode requires positive batch caps".into(),
            );
        }
        if self.run.solver_budget_factor <= 0.0 || self.run.solver_budget_factor.is_nan() {
            return fail(
                "run.solver_budget_factor",
                format!("must be positive, got {}", self.run.solver_budget_factor),
            );
        }
        if self.problem.dim == 0 {
            return fail("problem.dim", "must be at least 1".into());
        }
        match self.problem.kind {
            ProblemKind::MatrixFile => {
                if self.problem.path.is_none() {
                    return fail("problem.path", "matrix_file requires a path".into());
                }
            }
            ProblemKind::SeparableQuartic => {
                if !(0.0..1.0).contains(&self.problem.weight_spread) {
                    return fail(
                        "problem.weight_spread",
                        format!("must lie in [0,1), got {}", self.problem.weight_spread),
                    );
                }
                if self.problem.box_radius < 1.0 {
                    return fail(
                        "problem.box_radius",
                        format!("must be at least 1, got {}", self.problem.box_radius),
                    );
                }
                if self.problem.population == 0 {
                    return fail(
                        "problem.population",
                        "quartic requires a finite population".into(),
                    );
                }
            }
            ProblemKind::PcaFiniteSum => {
                if self.problem.population == 0 {
                    return fail(
                        "problem.population",
                        "pca_finite_sum requires a finite population".into(),
                    );
                }
            }
            ProblemKind::SaddleQuadratic => {
                if self.problem.noise_radius < 0.0 {
                    return fail(
                        "problem.noise_radius",
                        format!("must be non-negative, got {}", self.problem.noise_radius),
                    );
                }
            }
        }
        match self.start.kind {
            StartKind::Fixed => {
                let v = self.start.value.as_ref();
                if v.is_none() {
                    return fail("start.value", "fixed start requires coordinates".into());
                }
            }
            StartKind::Uniform
                if self.start.halfwidth <= 0.0 || self.start.halfwidth.is_nan() =>
            {
                return fail(
                    "start.halfwidth",
                    format!("must be positive, got {}", self.start.halfwidth),
                );
            }
            _ => {}
        }
        Ok(())
    }

    /// Resolved second-order target.
    pub fn eps2(&self) -> f64 {
        self.run.eps2.unwrap_or_else(|| self.run.eps1.powf(self.run.alpha))
    }

    pub fn to_resolved_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// Applies one `key=value` override to the parsed TOML tree. The key is a
/// dotted path; the value is parsed as TOML when possible and falls back to
/// a string.
fn apply_override(root: &mut toml::Value, entry: &str) -> Result<(), ConfigError> {
    let (key, raw) = entry
        .split_once('=')
        .ok_or_else(|| ConfigError::BadOverride(entry.to_string()))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(ConfigError::BadOverride(entry.to_string()));
    }
    let parsed: toml::Value = match toml::from_str::<toml::Value>(&format!("v = {raw}")) {
        Ok(toml::Value::Table(t)) => t
            .get("v")
            .cloned()
            .unwrap_or_else(|| toml::Value::String(raw.to_string())),
        _ => toml::Value::String(raw.to_string()),
    };
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| ConfigError::BadOverridePath(key.to_string()))?;
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| ConfigError::BadOverridePath(key.to_string()))?;
    table.insert(parts[parts.len() - 1].to_string(), parsed);
    Ok(())
}
