//! Reading JSON inputs with field-level diagnostics.

use std::path::Path;

use kgci_core::monte_carlo::Procedure;
use kgci_core::optimizer::OptimizationConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// Malformed input; reported with exit code 2.
#[derive(Debug)]
pub struct ParseError(pub String);

impl std::fmt::Display for ParseError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ParseError {}

pub fn read_text(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path).map_err(|e| ParseError(format!("{}: {e}", path.display())).into())
}

/// Parses `text`, naming the offending field and position on failure.
pub fn parse_json<T: DeserializeOwned>(path: &Path, text: &str) -> anyhow::Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        let msg = if field.is_empty() || field == "." {
            format!("{}: {inner}", path.display())
        } else {
            format!("{}: field `{field}`: {inner}", path.display())
        };
        ParseError(msg).into()
    })
}

pub fn load<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    parse_json(path, &read_text(path)?)
}

/// A single configuration or a list of them.
pub fn load_optimize(path: &Path) -> anyhow::Result<Vec<OptimizationConfig>> {
    let text = read_text(path)?;
    let configs = if text.trim_start().starts_with('[') {
        parse_json::<Vec<OptimizationConfig>>(path, &text)?
    } else {
        vec![parse_json::<OptimizationConfig>(path, &text)?]
    };
    if configs.is_empty() {
        return Err(ParseError(format!("{}: no configurations", path.display())).into());
    }
    for (i, c) in configs.iter().enumerate() {
        c.validate()
            .map_err(|e| ParseError(format!("{}: configuration {i}: {e}", path.display())))?;
    }
    Ok(configs)
}

/// Fields of a problem file besides the regression itself.
#[derive(Debug, Default, Deserialize)]
pub struct ProblemExtras {
    #[serde(default)]
    pub alpha: Option<f64>,
}

/// Monte Carlo sweep over a list of γ values.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateFile {
    pub procedure: Procedure,
    pub gammas: Vec<f64>,
    pub rho: f64,
    pub m: u32,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub reps: u64,
    #[serde(default)]
    pub seed: u64,
}

fn default_alpha() -> f64 {
    0.05
}
