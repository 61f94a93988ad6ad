//! `kgci`: fit, optimize, evaluate and simulate confidence intervals that
//! use uncertain prior information about a linear contrast.

mod config;
mod output;
mod plot;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use kgci_core::monte_carlo::{sweep, SimulationSpec};
use kgci_core::optimizer::{optimize, OptimizationConfig, OptimizationReport};
use kgci_core::performance::{curves, uniform_gamma_grid, PerformanceCurve, QuadSettings};
use kgci_core::regression::{
    design_constants, fit, kg_interval, naive_interval, standard_interval, RegressionProblem,
};
use kgci_core::spline::{IntervalFamily, IntervalShape};
use kgci_core::theory_bounds::bound_sweep;

use config::{load, load_optimize, parse_json, read_text, ParseError, ProblemExtras, SimulateFile};
use output::{create, function_table, write_curves, write_functions, write_json, RunManifest};
use plot::{LinePlot, Series};

const EXIT_PARSE: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;

#[derive(Parser)]
#[command(name = "kgci", version, about = "Confidence intervals utilizing uncertain prior information")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print v11, v22, v12, rho and m for a regression problem.
    DesignInfo { problem: PathBuf },
    /// Compute an interval family and write it with its performance curves.
    Optimize {
        config: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Write the performance curves of an existing family.
    Evaluate {
        family: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        rho: f64,
        #[arg(short, long)]
        output: PathBuf,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Print a realized interval for data `y`.
    Interval {
        problem: PathBuf,
        data: PathBuf,
        #[command(flatten)]
        method: MethodArgs,
        /// Defaults to the problem file's `alpha`, then 0.05.
        #[arg(long)]
        alpha: Option<f64>,
        /// Level of the preliminary test of the naive interval (default alpha).
        #[arg(long)]
        test_size: Option<f64>,
    },
    /// Tabulate the lower bound on the achievable e(0) when rho = 0.
    Bound {
        #[arg(long, value_delimiter = ',', required = true)]
        m_list: Vec<u32>,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long)]
        d: f64,
        /// CSV destination (default stdout).
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Monte Carlo coverage and length over a list of gamma values.
    Simulate {
        spec: PathBuf,
        /// CSV destination (default stdout).
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args)]
struct GridArgs {
    /// End of the gamma grid (default d + 10).
    #[arg(long)]
    gamma_max: Option<f64>,
    #[arg(long, default_value_t = 0.1)]
    gamma_step: f64,
}

#[derive(Args)]
#[group(required = false, multiple = false)]
struct MethodArgs {
    /// Family file written by `optimize`.
    #[arg(long)]
    family: Option<PathBuf>,
    #[arg(long)]
    standard: bool,
    #[arg(long)]
    naive: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(EXIT_PARSE);
    }
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ParseError>().is_some() {
                ExitCode::from(EXIT_PARSE)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

/// `KGCI_THREADS` caps the worker pool.
fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("KGCI_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| ParseError(format!("KGCI_THREADS = {v:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::DesignInfo { problem } => {
            let p: RegressionProblem = load(&problem)?;
            let k = design_constants(&p)?;
            println!("v11={}", k.v11);
            println!("v22={}", k.v22);
            println!("v12={}", k.v12);
            println!("rho={}", k.rho);
            println!("m={}", k.m);
        }
        Command::Optimize { config, output, grid } => return run_optimize(&config, &output, &grid),
        Command::Evaluate { family, rho, output, grid } => {
            let fam: IntervalFamily = load(&family)?;
            std::fs::create_dir_all(&output)?;
            RunManifest::new("evaluate", &family, &output, None).write(&output)?;
            write_json(&output.join("family.json"), &fam)?;
            let c = family_curves(&fam, rho, &grid)?;
            write_family_outputs(&output, &fam, rho, &c)?;
        }
        Command::Interval { problem, data, method, alpha, test_size } => {
            let text = read_text(&problem)?;
            let p: RegressionProblem = parse_json(&problem, &text)?;
            let extras: ProblemExtras = parse_json(&problem, &text)?;
            let alpha = alpha.or(extras.alpha).unwrap_or(0.05);
            let y = read_response(&data)?;
            let k = design_constants(&p)?;
            let f = fit(&p, &y)?;
            let (name, ci) = if let Some(path) = method.family {
                let fam: IntervalFamily = load(&path)?;
                ("kg", kg_interval(&f, &k, &fam)?)
            } else if method.naive {
                ("naive", naive_interval(&f, &k, alpha, test_size.unwrap_or(alpha))?)
            } else {
                ("standard", standard_interval(&f, &k, alpha))
            };
            println!("method={name}");
            println!("theta_hat={}", f.theta_hat);
            println!("tau_hat={}", f.tau_hat);
            println!("sigma_hat={}", f.sigma_hat);
            println!("lower={}", ci.lower);
            println!("upper={}", ci.upper);
        }
        Command::Bound { m_list, alpha, d, output } => {
            let rows = bound_sweep(&m_list, alpha, d, &QuadSettings::default())?;
            match output {
                Some(path) => output::write_bounds(create(&path)?, &rows)?,
                None => output::write_bounds(std::io::stdout().lock(), &rows)?,
            }
        }
        Command::Simulate { spec, output } => {
            let s: SimulateFile = load(&spec)?;
            let base = SimulationSpec {
                procedure: s.procedure,
                gamma: 0.0,
                rho: s.rho,
                m: s.m,
                alpha: s.alpha,
                reps: s.reps,
                seed: s.seed,
            };
            let rows = sweep(&base, &s.gammas)?;
            match output {
                Some(path) => output::write_simulation(create(&path)?, &rows)?,
                None => output::write_simulation(std::io::stdout().lock(), &rows)?,
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn run_optimize(config_path: &Path, out: &Path, grid: &GridArgs) -> Result<ExitCode> {
    let configs = load_optimize(config_path)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    RunManifest::new("optimize", config_path, out, Some(configs[0].seed)).write(out)?;
    std::fs::copy(config_path, out.join("config.json"))?;

    let single = configs.len() == 1;
    let mut all_ok = true;
    let mut runs: Vec<(String, PerformanceCurve, IntervalFamily)> = Vec::new();
    for (i, cfg) in configs.iter().enumerate() {
        let label = run_label(cfg, &configs);
        let dir = if single { out.to_path_buf() } else { out.join(format!("run-{i}")) };
        std::fs::create_dir_all(&dir)?;
        if !single {
            RunManifest::new("optimize", config_path, &dir, Some(cfg.seed)).write(&dir)?;
            write_json(&dir.join("config.json"), cfg)?;
        }
        eprintln!("optimizing {label} ({} starts)", cfg.multistart_count);
        let report = optimize(cfg)?;
        eprintln!("{}", summary(&report));
        all_ok &= report.feasible && report.converged;
        write_json(&dir.join("report.json"), &report)?;
        write_json(&dir.join("family.json"), &report.family)?;
        let c = family_curves(&report.family, cfg.rho, grid)?;
        write_family_outputs(&dir, &report.family, cfg.rho, &c)?;
        runs.push((label, c, report.family));
    }
    if !single {
        write_overlays(out, &runs)?;
    }
    if all_ok {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("warning: at least one run is infeasible or did not converge");
        Ok(ExitCode::from(EXIT_INFEASIBLE))
    }
}

/// Names a run by the settings that vary across the list.
fn run_label(cfg: &OptimizationConfig, all: &[OptimizationConfig]) -> String {
    let mut parts = Vec::new();
    if all.iter().any(|c| c.m != cfg.m) {
        parts.push(format!("m = {}", cfg.m));
    }
    if all.iter().any(|c| c.rho != cfg.rho) {
        parts.push(format!("rho = {}", cfg.rho));
    }
    if parts.is_empty() {
        format!("m = {}, rho = {}", cfg.m, cfg.rho)
    } else {
        parts.join(", ")
    }
}

fn summary(r: &OptimizationReport) -> String {
    format!(
        "objective {:.6}  e^2(0) {:.4}  max e^2 {:.4}  min coverage {:.6} at gamma {:.3}  feasible {}  converged {}",
        r.criterion_value,
        r.sel0 * r.sel0,
        r.max_sel * r.max_sel,
        r.min_coverage_achieved,
        r.min_coverage_gamma,
        r.feasible,
        r.converged
    )
}

fn family_curves(fam: &IntervalFamily, rho: f64, grid: &GridArgs) -> Result<PerformanceCurve> {
    let end = grid.gamma_max.unwrap_or(fam.cutoff() + 10.0);
    if !(end > 0.0 && grid.gamma_step > 0.0) {
        bail!(ParseError("gamma-max and gamma-step must be positive".into()));
    }
    let gammas = uniform_gamma_grid(end, grid.gamma_step);
    Ok(curves(fam, rho, &gammas, &QuadSettings::default())?)
}

fn write_family_outputs(dir: &Path, fam: &IntervalFamily, rho: f64, c: &PerformanceCurve) -> Result<()> {
    write_curves(create(&dir.join("curves.csv"))?, c)?;
    let (x, b, s) = function_table(fam, 1.1 * fam.cutoff(), 561);
    write_functions(create(&dir.join("functions.csv"))?, &x, &b, &s)?;
    let alpha = fam.alpha();
    let sub = format!("m = {}, rho = {rho}", fam.m());
    let plots = [
        ("b.svg", format!("b(x), {sub}"), "x", "b(x)", &x, &b, Some(0.0)),
        ("s.svg", format!("s(x), {sub}"), "x", "s(x)", &x, &s, Some(fam.t_m())),
        (
            "coverage.svg",
            format!("coverage probability, {sub}"),
            "gamma",
            "c(gamma)",
            &c.gamma_grid,
            &c.coverage,
            Some(1.0 - alpha),
        ),
        (
            "sel_squared.svg",
            format!("squared scaled expected length, {sub}"),
            "gamma",
            "e^2(gamma)",
            &c.gamma_grid,
            &c.sel_squared,
            Some(1.0),
        ),
    ];
    for (file, title, xl, yl, xs, ys, reference) in plots {
        let p = LinePlot {
            title,
            x_label: xl.into(),
            y_label: yl.into(),
            series: vec![Series { label: String::new(), x: xs, y: ys }],
            reference,
        };
        std::fs::write(dir.join(file), p.render())?;
    }
    Ok(())
}

fn write_overlays(dir: &Path, runs: &[(String, PerformanceCurve, IntervalFamily)]) -> Result<()> {
    let tables: Vec<_> = runs
        .iter()
        .map(|(_, _, f)| function_table(f, 1.1 * f.cutoff(), 561))
        .collect();
    let series = |which: usize| -> Vec<(String, &[f64], &[f64])> {
        runs.iter()
            .zip(&tables)
            .map(|((label, c, _), t)| {
                let (x, y): (&[f64], &[f64]) = match which {
                    0 => (&c.gamma_grid, &c.sel_squared),
                    1 => (&c.gamma_grid, &c.coverage),
                    2 => (&t.0, &t.1),
                    _ => (&t.0, &t.2),
                };
                (label.clone(), x, y)
            })
            .collect()
    };
    let alpha = runs[0].2.alpha();
    let plots = [
        (
            "sel_squared.svg",
            "squared scaled expected length",
            "gamma",
            "e^2(gamma)",
            Some(1.0),
            series(0),
        ),
        (
            "coverage.svg",
            "coverage probability",
            "gamma",
            "c(gamma)",
            Some(1.0 - alpha),
            series(1),
        ),
        ("b.svg", "b(x)", "x", "b(x)", Some(0.0), series(2)),
        ("s.svg", "s(x)", "x", "s(x)", None, series(3)),
    ];
    for (file, title, xl, yl, reference, data) in &plots {
        let p = LinePlot {
            title: (*title).into(),
            x_label: (*xl).into(),
            y_label: (*yl).into(),
            series: data.iter().map(|(l, x, y)| Series { label: l.clone(), x, y }).collect(),
            reference: *reference,
        };
        std::fs::write(dir.join(file), p.render())?;
    }
    Ok(())
}

/// Responses, one per line; a non-numeric first line is taken as a header.
fn read_response(path: &Path) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| ParseError(format!("{}: {e}", path.display())))?;
    let mut y = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| ParseError(format!("{}: {e}", path.display())))?;
        let Some(field) = rec.get(0).filter(|f| !f.is_empty()) else {
            continue;
        };
        match field.parse::<f64>() {
            Ok(v) => y.push(v),
            Err(_) if i == 0 => {}
            Err(_) => {
                return Err(ParseError(format!("{}: line {}: `{field}` is not a number", path.display(), i + 1)).into())
            }
        }
    }
    Ok(y)
}
