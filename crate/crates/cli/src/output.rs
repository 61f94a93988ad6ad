//! CSV tables and run manifests.

use std::io::Write;
use std::path::Path;
use std::time::SystemTime;

use anyhow::{Context, Result};
use kgci_core::monte_carlo::SimulationReport;
use kgci_core::performance::PerformanceCurve;
use kgci_core::spline::{IntervalFamily, IntervalShape};
use kgci_core::theory_bounds::BoundResult;
use serde::Serialize;

/// Floats are written in shortest round-trip form, so a table read back
/// reproduces every value exactly.
fn write_rows<W: Write, R: Serialize>(out: W, rows: impl IntoIterator<Item = R>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct CurveRow {
    gamma: f64,
    coverage: f64,
    sel: f64,
    sel_squared: f64,
}

pub fn write_curves<W: Write>(out: W, c: &PerformanceCurve) -> Result<()> {
    write_rows(
        out,
        (0..c.gamma_grid.len()).map(|i| CurveRow {
            gamma: c.gamma_grid[i],
            coverage: c.coverage[i],
            sel: c.sel[i],
            sel_squared: c.sel_squared[i],
        }),
    )
}

#[derive(Serialize)]
struct FunctionRow {
    x: f64,
    b: f64,
    s: f64,
}

/// `b` and `s` on `points` evenly spaced values of `[0, x_max]`.
pub fn function_table(family: &IntervalFamily, x_max: f64, points: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let xs: Vec<f64> = (0..points).map(|i| x_max * i as f64 / (points - 1) as f64).collect();
    let b = xs.iter().map(|&x| family.b(x)).collect();
    let s = xs.iter().map(|&x| family.s(x)).collect();
    (xs, b, s)
}

pub fn write_functions<W: Write>(out: W, x: &[f64], b: &[f64], s: &[f64]) -> Result<()> {
    write_rows(out, (0..x.len()).map(|i| FunctionRow { x: x[i], b: b[i], s: s[i] }))
}

pub fn write_bounds<W: Write>(out: W, rows: &[BoundResult]) -> Result<()> {
    #[derive(Serialize)]
    struct Row {
        m: u32,
        lambda_m: f64,
        nu_m: f64,
        eta_m: f64,
        lower_bound: f64,
    }
    write_rows(
        out,
        rows.iter().map(|r| Row {
            m: r.m,
            lambda_m: r.lambda_m,
            nu_m: r.nu_m,
            eta_m: r.eta_m,
            lower_bound: r.lower_bound,
        }),
    )
}

pub fn write_simulation<W: Write>(out: W, rows: &[SimulationReport]) -> Result<()> {
    #[derive(Serialize)]
    struct Row {
        gamma: f64,
        reps: u64,
        coverage_hat: f64,
        se_coverage: f64,
        lower_miss_rate: f64,
        se_lower: f64,
        upper_miss_rate: f64,
        se_upper: f64,
        mean_length_ratio_hat: f64,
        se_length_ratio: f64,
    }
    write_rows(
        out,
        rows.iter().map(|r| Row {
            gamma: r.gamma,
            reps: r.reps,
            coverage_hat: r.coverage_hat,
            se_coverage: r.se_coverage,
            lower_miss_rate: r.lower_miss_rate,
            se_lower: r.se_lower,
            upper_miss_rate: r.upper_miss_rate,
            se_upper: r.se_upper,
            mean_length_ratio_hat: r.mean_length_ratio_hat,
            se_length_ratio: r.se_length_ratio,
        }),
    )
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: String,
    pub output_dir: String,
    pub tool_version: String,
    pub timestamp: String,
    pub master_seed: Option<u64>,
}

impl RunManifest {
    pub fn new(command: &str, config: &Path, output_dir: &Path, master_seed: Option<u64>) -> Self {
        Self {
            command: command.into(),
            config_path: config.display().to_string(),
            output_dir: output_dir.display().to_string(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            timestamp: humantime::format_rfc3339_seconds(SystemTime::now()).to_string(),
            master_seed,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join("manifest.json"), self)
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    let f = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(std::io::BufWriter::new(f))
}
