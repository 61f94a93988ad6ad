//! Computation of the interval family: minimize the length criterion over
//! the free spline values of `b` and `s`, subject to minimum coverage
//! `1 − α` and unimodality of `s` (and of `b` when `ρ ≠ 0`).
//!
//! The search is sequential linear programming with a box trust region.
//! Each step linearizes the coverage at every point of a γ grid, keeps the
//! shape restrictions as exact linear inequalities on a grid of `x` values
//! (monotone up to a chosen mode, monotone down after it), and measures
//! progress with an exact-penalty merit whose weight escalates while the
//! linearized coverage constraints cannot be met.

use microlp::{ComparisonOp, OptimizationDirection, Problem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{KgError, Result};
use crate::performance::{
    criterion_a, criterion_a_gradient, default_gamma_grid, max_sel, min_coverage, sel, uniform_gamma_grid,
    CoverageGrid, QuadSettings, SelOperator,
};
use crate::spline::{FamilySpec, IntervalFamily, IntervalShape, NaturalSpline, ShapeReport, SHAPE_GRID_POINTS};

/// Optional sign restriction on `b` over `(0, d)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BSign {
    #[default]
    None,
    Nonnegative,
    Nonpositive,
}

/// Exact-penalty weight schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PenaltySchedule {
    pub initial: f64,
    pub growth: f64,
    pub max: f64,
}

impl Default for PenaltySchedule {
    fn default() -> Self {
        Self {
            initial: 100.0,
            growth: 10.0,
            max: 1e7,
        }
    }
}

fn default_tolerance() -> f64 {
    1e-4
}
fn default_max_iterations() -> usize {
    300
}
fn default_multistart() -> usize {
    8
}
fn default_gamma_step() -> f64 {
    0.25
}
fn default_gamma_margin() -> f64 {
    10.0
}
fn default_search_quad() -> QuadSettings {
    QuadSettings::fast()
}
fn default_shape_points() -> usize {
    160
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizationConfig {
    pub alpha: f64,
    /// Weight of the integrated length term (criterion A).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi: Option<f64>,
    /// Bound on `max_γ e(γ; s)`; selects the mode that minimizes `e(0; s)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ell: Option<f64>,
    pub d: f64,
    pub knots_b: Vec<f64>,
    pub knots_s: Vec<f64>,
    pub m: u32,
    pub rho: f64,
    #[serde(default = "default_tolerance")]
    pub coverage_tolerance: f64,
    /// Iteration cap per start.
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_multistart")]
    pub multistart_count: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub penalty: PenaltySchedule,
    #[serde(default)]
    pub b_sign: BSign,
    /// Step of the γ grid carrying the coverage constraints.
    #[serde(default = "default_gamma_step")]
    pub gamma_step: f64,
    /// The γ grid runs over `[0, d + gamma_margin]`.
    #[serde(default = "default_gamma_margin")]
    pub gamma_margin: f64,
    #[serde(default = "default_search_quad")]
    pub search_quad: QuadSettings,
    #[serde(default)]
    pub certify_quad: QuadSettings,
    /// Grid size for the linear shape restrictions.
    #[serde(default = "default_shape_points")]
    pub shape_points: usize,
    /// Impose unimodality of `s` (and of `b` when `ρ ≠ 0`).
    #[serde(default = "default_true")]
    pub unimodal: bool,
    /// Starting family for the first start (default: the standard interval).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<FamilySpec>,
}

/// What is minimized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    /// `ξ ∫(e − 1) dγ + (e(0) − 1)`.
    Criterion { xi: f64 },
    /// `e(0; s)` subject to `max_γ e(γ; s) ≤ ℓ`.
    SelAtZero { ell: f64 },
}

impl OptimizationConfig {
    /// Criterion-A configuration with default numerical settings.
    pub fn criterion(alpha: f64, xi: f64, d: f64, knots_b: &[f64], knots_s: &[f64], m: u32, rho: f64) -> Self {
        Self {
            alpha,
            xi: Some(xi),
            ell: None,
            d,
            knots_b: knots_b.to_vec(),
            knots_s: knots_s.to_vec(),
            m,
            rho,
            coverage_tolerance: default_tolerance(),
            max_iterations: default_max_iterations(),
            multistart_count: default_multistart(),
            seed: 0,
            penalty: PenaltySchedule::default(),
            b_sign: BSign::None,
            gamma_step: default_gamma_step(),
            gamma_margin: default_gamma_margin(),
            search_quad: default_search_quad(),
            certify_quad: QuadSettings::default(),
            shape_points: default_shape_points(),
            unimodal: true,
            initial: None,
        }
    }

    /// Length-bounded configuration: minimize `e(0; s)` with `max e ≤ ell`.
    pub fn bounded_length(alpha: f64, ell: f64, d: f64, knots_b: &[f64], knots_s: &[f64], m: u32, rho: f64) -> Self {
        Self {
            xi: None,
            ell: Some(ell),
            ..Self::criterion(alpha, 0.0, d, knots_b, knots_s, m, rho)
        }
    }

    pub fn objective(&self) -> Result<Objective> {
        match (self.xi, self.ell) {
            (Some(xi), None) if xi >= 0.0 && xi.is_finite() => Ok(Objective::Criterion { xi }),
            (None, Some(ell)) if ell > 1.0 && ell.is_finite() => Ok(Objective::SelAtZero { ell }),
            (Some(_), Some(_)) | (None, None) => {
                Err(KgError::InvalidArgument("exactly one of xi and ell must be set".into()))
            }
            (Some(xi), None) => Err(KgError::InvalidArgument(format!("xi = {xi} must be nonnegative"))),
            (None, Some(ell)) => Err(KgError::InvalidArgument(format!("ell = {ell} must exceed 1"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.objective()?;
        if !(self.rho.abs() < 1.0) {
            return Err(KgError::InvalidArgument(format!("rho = {} must lie in (-1, 1)", self.rho)));
        }
        if !(self.coverage_tolerance >= 0.0) || !(self.gamma_step > 0.0) || !(self.gamma_margin > 0.0) {
            return Err(KgError::InvalidArgument("tolerance, gamma_step and gamma_margin must be positive".into()));
        }
        if self.multistart_count == 0 {
            return Err(KgError::InvalidArgument("multistart_count must be at least 1".into()));
        }
        if self.shape_points < 8 {
            return Err(KgError::InvalidArgument("shape_points must be at least 8".into()));
        }
        let p = self.penalty;
        if !(p.initial > 0.0 && p.growth > 1.0 && p.max >= p.initial) {
            return Err(KgError::InvalidArgument(format!("bad penalty schedule {p:?}")));
        }
        IntervalFamily::reverted(self.d, self.m, self.alpha, &self.knots_b, &self.knots_s).map(|_| ())
    }

    fn gamma_grid(&self) -> Vec<f64> {
        if self.gamma_step == default_gamma_step() && self.gamma_margin == default_gamma_margin() {
            default_gamma_grid(self.d)
        } else {
            uniform_gamma_grid(self.d + self.gamma_margin, self.gamma_step)
        }
    }
}

/// Outcome of one start of the multistart search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartSummary {
    pub start_index: usize,
    pub criterion_value: f64,
    pub min_coverage: f64,
    pub iterations: usize,
    pub converged: bool,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationReport {
    pub family: IntervalFamily,
    /// Criterion A for the criterion objective, `e(0; s) − 1` otherwise.
    pub criterion_value: f64,
    pub min_coverage_achieved: f64,
    pub min_coverage_gamma: f64,
    pub max_sel: f64,
    pub max_sel_gamma: f64,
    pub sel0: f64,
    pub iterations: usize,
    pub converged: bool,
    pub feasible: bool,
    pub start_index: usize,
    pub shape: ShapeReport,
    pub starts: Vec<StartSummary>,
}

/// Computes the family for `config`.
pub fn optimize(config: &OptimizationConfig) -> Result<OptimizationReport> {
    run(config, false)
}

/// As [`optimize`] with `b ≡ 0`; requires `rho = 0`.
pub fn optimize_b_zero(config: &OptimizationConfig) -> Result<OptimizationReport> {
    if config.rho != 0.0 {
        return Err(KgError::InvalidArgument(format!(
            "b can only be frozen at zero when rho = 0 (got {})",
            config.rho
        )));
    }
    run(config, true)
}

/// Values of a spline on a grid as an affine map of its free knot values.
#[derive(Debug, Clone)]
struct GridMap {
    rows: Vec<Vec<f64>>,
    offset: Vec<f64>,
    knot_index: Vec<usize>,
}

impl GridMap {
    /// `free` lists the knot indices whose values vary; the others take
    /// `fixed` values.
    fn new(knots: &[f64], free: &[usize], fixed: &[(usize, f64)], xs: &[f64]) -> Self {
        let n = knots.len();
        let basis: Vec<NaturalSpline> = (0..n)
            .map(|k| {
                let mut e = vec![0.0; n];
                e[k] = 1.0;
                NaturalSpline::new(knots.to_vec(), e).expect("knots already validated")
            })
            .collect();
        let rows = xs.iter().map(|&x| free.iter().map(|&k| basis[k].eval(x)).collect()).collect();
        let offset = xs.iter().map(|&x| fixed.iter().map(|&(k, v)| v * basis[k].eval(x)).sum()).collect();
        let knot_index = knots
            .iter()
            .map(|&k| {
                let i = xs.partition_point(|&x| x < k).min(xs.len() - 1);
                if i > 0 && (xs[i] - k).abs() > (k - xs[i - 1]).abs() {
                    i - 1
                } else {
                    i
                }
            })
            .collect();
        Self {
            rows,
            offset,
            knot_index,
        }
    }

    fn eval(&self, p: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .zip(&self.offset)
            .map(|(r, o)| o + r.iter().zip(p).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    }
}

/// Monotone pattern imposed on a grid: rising on `[0, mode]` and falling
/// after it when `up`, the mirror image otherwise.
#[derive(Debug, Clone, Copy, PartialEq)]
struct ModeChoice {
    mode: usize,
    up: bool,
}

fn arg_extreme(v: &[f64], up: bool) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if (up && x > v[best]) || (!up && x < v[best]) {
            best = i;
        }
    }
    best
}

/// Candidate modes: the current extremum and the knot positions around it,
/// or every knot position when the function is flat.
fn mode_candidates(values: &[f64], knot_index: &[usize], directions: &[bool], scale: f64) -> Vec<ModeChoice> {
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, &v| (a.0.min(v), a.1.max(v)));
    let flat = hi - lo <= 1e-9 * scale;
    let mut out = Vec::new();
    for &up in directions {
        if flat {
            for &k in knot_index {
                out.push(ModeChoice { mode: k, up });
            }
        } else {
            let q = arg_extreme(values, up);
            out.push(ModeChoice { mode: q, up });
            if let Some(&k) = knot_index.iter().rev().find(|&&k| k < q) {
                out.push(ModeChoice { mode: k, up });
            }
            if let Some(&k) = knot_index.iter().find(|&&k| k > q) {
                out.push(ModeChoice { mode: k, up });
            }
        }
    }
    out.dedup();
    out
}

/// Monotonicity violation of `v` under `choice`, in value units.
fn mode_violation(v: &[f64], choice: ModeChoice) -> f64 {
    let sign = if choice.up { 1.0 } else { -1.0 };
    v.windows(2)
        .enumerate()
        .map(|(i, w)| {
            let step = sign * (w[1] - w[0]);
            if i < choice.mode {
                (-step).max(0.0)
            } else {
                step.max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

struct Search<'a> {
    config: &'a OptimizationConfig,
    objective: Objective,
    template: IntervalFamily,
    t: f64,
    target: f64,
    nb: usize,
    ns: usize,
    b_frozen: bool,
    constrain_b_shape: bool,
    grid: CoverageGrid,
    sel_op: Option<SelOperator>,
    /// Objective = Σ obj_grad_k (y_k − t).
    obj_grad: Vec<f64>,
    map_b: GridMap,
    map_s: GridMap,
}

struct StartOutcome {
    params: Vec<f64>,
    iterations: usize,
    converged: bool,
}

struct LpStep {
    delta: Vec<f64>,
    z: f64,
    model: f64,
}

impl<'a> Search<'a> {
    fn new(config: &'a OptimizationConfig, b_frozen: bool, gammas: &[f64]) -> Result<Self> {
        let objective = config.objective()?;
        let template = IntervalFamily::reverted(config.d, config.m, config.alpha, &config.knots_b, &config.knots_s)?;
        let t = template.t_m();
        let kb = template.knots_b().len();
        let ks = template.knots_s().len();
        let grid = CoverageGrid::new(&template, config.rho, gammas, &config.search_quad)?;
        let sel_op = match objective {
            Objective::SelAtZero { .. } => Some(SelOperator::new(&template, gammas, &config.search_quad)?),
            Objective::Criterion { .. } => None,
        };
        let xi = match objective {
            Objective::Criterion { xi } => xi,
            Objective::SelAtZero { .. } => 0.0,
        };
        let xs: Vec<f64> = (0..config.shape_points)
            .map(|i| config.d * i as f64 / (config.shape_points - 1) as f64)
            .collect();
        let free_b: Vec<usize> = (1..kb - 1).collect();
        let free_s: Vec<usize> = (0..ks - 1).collect();
        Ok(Self {
            config,
            objective,
            t,
            target: 1.0 - config.alpha,
            nb: if b_frozen { 0 } else { kb - 2 },
            ns: ks - 1,
            b_frozen,
            constrain_b_shape: config.unimodal && config.rho != 0.0 && !b_frozen,
            grid,
            sel_op,
            obj_grad: criterion_a_gradient(&template, xi),
            map_b: GridMap::new(template.knots_b(), &free_b, &[], &xs),
            map_s: GridMap::new(template.knots_s(), &free_s, &[(ks - 1, t)], &xs),
            template,
        })
    }

    fn split<'p>(&self, p: &'p [f64]) -> (Vec<f64>, &'p [f64]) {
        if self.b_frozen {
            (vec![0.0; self.template.knots_b().len() - 2], p)
        } else {
            (p[..self.nb].to_vec(), &p[self.nb..])
        }
    }

    fn family(&self, p: &[f64]) -> Result<IntervalFamily> {
        let (vb, vs) = self.split(p);
        self.template.with_values(&vb, vs)
    }

    fn start_point(&self) -> Vec<f64> {
        let mut p = vec![0.0; self.nb];
        p.extend(std::iter::repeat(self.t).take(self.ns));
        p
    }

    fn initial_point(&self, init: &FamilySpec) -> Result<Vec<f64>> {
        if init.knots_b != self.config.knots_b || init.knots_s != self.config.knots_s || init.m != self.config.m {
            return Err(KgError::DimensionMismatch("initial family does not match the configured knots and m".into()));
        }
        let mut p: Vec<f64> = if self.b_frozen { Vec::new() } else { init.values_b.clone() };
        p.extend_from_slice(&init.values_s);
        if !self.shape_ok(&p) {
            return Err(KgError::InvalidArgument("initial family violates the shape restrictions".into()));
        }
        Ok(p)
    }

    fn objective_value(&self, p: &[f64]) -> f64 {
        let (_, vs) = self.split(p);
        self.obj_grad.iter().zip(vs).map(|(g, y)| g * (y - self.t)).sum()
    }

    fn violation(&self, cov: &[f64]) -> f64 {
        cov.iter().map(|c| self.target - c).fold(0.0, f64::max)
    }

    /// Merit and coverage at `p`; `None` if `p` does not define a family.
    fn merit(&self, p: &[f64], mu: f64) -> Option<(f64, Vec<f64>)> {
        let fam = self.family(p).ok()?;
        let cov = self.grid.coverage(&fam);
        Some((self.objective_value(p) + mu * self.violation(&cov), cov))
    }

    /// Bounded-length mode: `e ≤ ℓ` on the grid.
    fn sel_ok(&self, p: &[f64]) -> bool {
        match (&self.sel_op, self.objective) {
            (Some(op), Objective::SelAtZero { ell }) => op.sel(self.split(p).1).iter().all(|&e| e <= ell),
            _ => true,
        }
    }

    fn shape_ok(&self, p: &[f64]) -> bool {
        let (vb, vs) = self.split(p);
        let s = self.map_s.eval(vs);
        if s[0] <= 0.0 {
            return false;
        }
        let tol = 1e-9 * self.t;
        let s_ok = !self.config.unimodal
            || mode_violation(&s, ModeChoice { mode: arg_extreme(&s, true), up: true }) <= tol;
        let b = self.map_b.eval(&vb);
        let b_ok = !self.constrain_b_shape
            || mode_violation(&b, ModeChoice { mode: arg_extreme(&b, true), up: true }) <= tol
            || mode_violation(&b, ModeChoice { mode: arg_extreme(&b, false), up: false }) <= tol;
        let sign_ok = match self.config.b_sign {
            BSign::None => true,
            BSign::Nonnegative => b.iter().all(|&v| v >= -tol),
            BSign::Nonpositive => b.iter().all(|&v| v <= tol),
        };
        s_ok && b_ok && sign_ok
    }

    #[allow(clippy::too_many_arguments)]
    fn solve_lp(
        &self,
        p: &[f64],
        cov: &[f64],
        grad: &[Vec<f64>],
        radius: f64,
        mu: f64,
        s_mode: Option<ModeChoice>,
        b_mode: Option<ModeChoice>,
    ) -> Option<LpStep> {
        let n = p.len();
        let mut lp = Problem::new(OptimizationDirection::Minimize);
        let mut obj = vec![0.0; n];
        obj[self.nb..].copy_from_slice(&self.obj_grad);
        let vars: Vec<_> = (0..n).map(|i| lp.add_var(obj[i], (-radius, radius))).collect();
        let z = lp.add_var(mu, (0.0, f64::INFINITY));
        let slack = 1e-12 * self.t;

        for (c, g) in cov.iter().zip(grad) {
            let gb = if self.b_frozen { &g[..0] } else { &g[..self.nb] };
            let gs = &g[g.len() - self.ns..];
            let mut row: Vec<_> = gb.iter().chain(gs).enumerate().map(|(i, &a)| (vars[i], a)).collect();
            row.push((z, 1.0));
            lp.add_constraint(row.as_slice(), ComparisonOp::Ge, self.target - c);
        }

        let (vb, vs) = self.split(p);
        if let (Some(op), Objective::SelAtZero { ell }) = (&self.sel_op, self.objective) {
            for (j, e) in op.sel(vs).iter().enumerate() {
                let row: Vec<_> = op.row(j).iter().enumerate().map(|(k, &a)| (vars[self.nb + k], a)).collect();
                lp.add_constraint(row.as_slice(), ComparisonOp::Le, ell - e + slack);
            }
        }

        let s_now = self.map_s.eval(vs);
        if let Some(choice) = s_mode {
            add_mode_rows(&mut lp, &self.map_s, &s_now, &vars[self.nb..], choice, slack);
        }
        let s0: Vec<_> = self.map_s.rows[0].iter().enumerate().map(|(k, &a)| (vars[self.nb + k], a)).collect();
        lp.add_constraint(s0.as_slice(), ComparisonOp::Ge, 1e-3 * self.t - s_now[0]);

        if !self.b_frozen {
            let b_now = self.map_b.eval(&vb);
            if let Some(choice) = b_mode {
                add_mode_rows(&mut lp, &self.map_b, &b_now, &vars[..self.nb], choice, slack);
            }
            if self.config.b_sign != BSign::None {
                let op = if self.config.b_sign == BSign::Nonnegative { ComparisonOp::Ge } else { ComparisonOp::Le };
                for (row, &b) in self.map_b.rows.iter().zip(&b_now) {
                    let r: Vec<_> = row.iter().enumerate().map(|(k, &a)| (vars[k], a)).collect();
                    let rhs = if op_is_ge(op) { -b - slack } else { -b + slack };
                    lp.add_constraint(r.as_slice(), op, rhs);
                }
            }
        }

        let sol = lp.solve().ok()?.into_solution().ok()?;
        let delta = vars.iter().map(|&v| sol.var_value(v)).collect();
        Some(LpStep {
            delta,
            z: sol.var_value(z),
            model: sol.objective(),
        })
    }

    fn b_mode_candidates(&self, p: &[f64]) -> Vec<Option<ModeChoice>> {
        if !self.constrain_b_shape {
            return vec![None];
        }
        let (vb, _) = self.split(p);
        let b = self.map_b.eval(&vb);
        let interior = &self.map_b.knot_index[1..self.map_b.knot_index.len() - 1];
        let dirs: &[bool] = match self.config.b_sign {
            BSign::Nonnegative => &[true],
            BSign::Nonpositive => &[false],
            BSign::None => {
                let big = b.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
                if big <= 1e-9 * self.t {
                    &[true, false]
                } else if b.iter().fold(0.0f64, |a, &v| a.max(v)) >= big {
                    &[true]
                } else {
                    &[false]
                }
            }
        };
        mode_candidates(&b, interior, dirs, self.t).into_iter().map(Some).collect()
    }

    fn s_mode_candidates(&self, p: &[f64]) -> Vec<Option<ModeChoice>> {
        if !self.config.unimodal {
            return vec![None];
        }
        let (_, vs) = self.split(p);
        let s = self.map_s.eval(vs);
        mode_candidates(&s, &self.map_s.knot_index, &[true], self.t).into_iter().map(Some).collect()
    }

    /// Trust-region SLP from `p0`.
    fn run_start(&self, p0: Vec<f64>) -> StartOutcome {
        let cfg = self.config;
        let mut mu = cfg.penalty.initial;
        let mut p = p0;
        let r_max = 0.5 * self.t;
        let r_min = 1e-7 * self.t;
        let mut radius = 0.1 * self.t;
        let Some((mut merit, mut cov)) = self.merit(&p, mu) else {
            return StartOutcome {
                params: p,
                iterations: 0,
                converged: false,
            };
        };
        let mut fam = self.family(&p).expect("merit succeeded");
        let (_, mut grad) = self.grid.coverage_with_gradient(&fam);
        let mut iterations = 0;
        let mut converged = false;
        while iterations < cfg.max_iterations {
            iterations += 1;
            let viol = self.violation(&cov);
            let mut step = None;
            for _ in 0..6 {
                step = self.best_lp(&p, &cov, &grad, radius, mu);
                match &step {
                    Some(s) if viol > 0.0 && s.z > 0.9 * viol && mu < cfg.penalty.max => {
                        mu = (mu * cfg.penalty.growth).min(cfg.penalty.max);
                        merit = self.objective_value(&p) + mu * viol;
                    }
                    _ => break,
                }
            }
            let Some(step) = step else {
                radius *= 0.5;
                if radius < r_min {
                    break;
                }
                continue;
            };
            let predicted = merit - (self.objective_value(&p) + step.model);
            if predicted <= 1e-13 * (1.0 + merit.abs()) {
                if viol > 1e-9 && mu < cfg.penalty.max {
                    // stationary for the merit but infeasible: raise the weight
                    mu = (mu * cfg.penalty.growth).min(cfg.penalty.max);
                    merit = self.objective_value(&p) + mu * viol;
                    continue;
                }
                converged = viol <= 1e-9;
                break;
            }
            let trial: Vec<f64> = p.iter().zip(&step.delta).map(|(a, b)| a + b).collect();
            let accepted = self.shape_ok(&trial).then(|| self.merit(&trial, mu)).flatten();
            let ratio = accepted.as_ref().map_or(f64::NEG_INFINITY, |(m, _)| (merit - m) / predicted);
            let step_norm = step.delta.iter().fold(0.0f64, |a, d| a.max(d.abs()));
            if ratio >= 0.1 {
                let (m_new, c_new) = accepted.expect("ratio finite");
                p = trial;
                merit = m_new;
                cov = c_new;
                fam = self.family(&p).expect("trial evaluated");
                grad = self.grid.coverage_with_gradient(&fam).1;
                if ratio > 0.75 && step_norm > 0.9 * radius {
                    radius = (2.0 * radius).min(r_max);
                }
            } else {
                radius = 0.5 * step_norm.min(radius);
            }
            if radius < r_min {
                converged = true;
                break;
            }
        }
        StartOutcome {
            params: p,
            iterations,
            converged,
        }
    }

    fn best_lp(&self, p: &[f64], cov: &[f64], grad: &[Vec<f64>], radius: f64, mu: f64) -> Option<LpStep> {
        let mut best: Option<LpStep> = None;
        for s_mode in self.s_mode_candidates(p) {
            for b_mode in self.b_mode_candidates(p) {
                if let Some(step) = self.solve_lp(p, cov, grad, radius, mu, s_mode, b_mode) {
                    if best.as_ref().is_none_or(|b| step.model < b.model - 1e-15) {
                        best = Some(step);
                    }
                }
            }
        }
        best
    }

    /// Deterministic random start. `b` is a hump `A r e^{1−r}`, `r = x/q`,
    /// whose initial slope `A e / q` is a random fraction of `ρ` (the slope
    /// of the constrained least-squares shift); `s` is `t(m)` plus a smaller
    /// hump. Draws failing the shape restrictions, or the length bound in
    /// bounded-length mode, are redrawn.
    fn perturbed_start(&self, index: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(index as u64);
        let d = self.config.d;
        let hump = |x: f64, q: f64| (x / q) * (1.0 - x / q).exp() * (1.0 - x / d);
        let kb = self.template.knots_b();
        let ks = self.template.knots_s();
        for _ in 0..64 {
            let q_s = rng.random_range(0.1..0.6) * d;
            let a_s = rng.random_range(0.0..0.3) * self.t;
            let q_b = rng.random_range(0.15..0.6) * d;
            let mut slope = rng.random_range(0.2..1.2) * self.config.rho;
            match self.config.b_sign {
                BSign::Nonnegative => slope = slope.max(0.0),
                BSign::Nonpositive => slope = slope.min(0.0),
                BSign::None => {}
            }
            let a_b = slope * q_b / std::f64::consts::E;
            let mut p: Vec<f64> = (1..kb.len() - 1).take(self.nb).map(|i| a_b * hump(kb[i], q_b)).collect();
            p.extend((0..ks.len() - 1).map(|i| self.t + a_s * hump(ks[i], q_s)));
            if self.shape_ok(&p) && self.sel_ok(&p) {
                return p;
            }
        }
        self.start_point()
    }
}

fn op_is_ge(op: ComparisonOp) -> bool {
    matches!(op, ComparisonOp::Ge)
}

fn add_mode_rows(
    lp: &mut Problem,
    map: &GridMap,
    now: &[f64],
    vars: &[microlp::Variable],
    choice: ModeChoice,
    slack: f64,
) {
    let sign = if choice.up { 1.0 } else { -1.0 };
    for i in 0..map.rows.len() - 1 {
        // rising before the mode: sign·(v[i+1] − v[i]) ≥ 0, falling after
        let dir = if i < choice.mode { sign } else { -sign };
        let row: Vec<_> = map.rows[i + 1]
            .iter()
            .zip(&map.rows[i])
            .enumerate()
            .map(|(k, (a, b))| (vars[k], dir * (a - b)))
            .collect();
        lp.add_constraint(row.as_slice(), ComparisonOp::Ge, -dir * (now[i + 1] - now[i]) - slack);
    }
}

fn run(config: &OptimizationConfig, b_frozen: bool) -> Result<OptimizationReport> {
    config.validate()?;
    let objective = config.objective()?;
    let mut gammas = config.gamma_grid();
    let fine = uniform_gamma_grid(*gammas.last().unwrap(), config.gamma_step / 4.0);
    let gamma_max = *gammas.last().unwrap();
    let floor = 1.0 - config.alpha - config.coverage_tolerance;

    let mut starts = Vec::new();
    let mut best: Option<(f64, usize, IntervalFamily, usize, bool, f64, f64)> = None;
    for start in 0..config.multistart_count {
        let mut search = Search::new(config, b_frozen, &gammas)?;
        let mut p = match (&config.initial, start) {
            (Some(init), 0) => search.initial_point(init)?,
            (None, 0) => search.start_point(),
            _ => search.perturbed_start(start),
        };
        let mut iterations = 0;
        let mut converged = false;
        let mut certified = None;
        // certification rounds: add the worst fine-grid γ when the search
        // grid missed a dip
        for _round in 0..4 {
            let out = search.run_start(p);
            iterations += out.iterations;
            converged = out.converged;
            p = out.params;
            let fam = search.family(&p)?;
            let mc = min_coverage(&fam, config.rho, &config.certify_quad, &fine)?;
            certified = Some((fam, mc));
            if mc.value >= floor {
                break;
            }
            if gammas.iter().any(|&g| (g - mc.gamma).abs() < 1e-9) {
                // already constrained there; tighten the target instead
                search.target += floor - mc.value + 0.25 * config.coverage_tolerance;
                continue;
            }
            gammas.push(mc.gamma);
            gammas.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let target = search.target;
            search = Search::new(config, b_frozen, &gammas)?;
            search.target = target;
        }
        let (fam, mc) = certified.expect("at least one round");
        let value = match objective {
            Objective::Criterion { xi } => criterion_a(&fam, xi)?,
            Objective::SelAtZero { .. } => criterion_a(&fam, 0.0)?,
        };
        let mut feasible = mc.value >= floor;
        if let Objective::SelAtZero { ell } = objective {
            let (_, e_max) = max_sel(&fam, &config.certify_quad, gamma_max)?;
            feasible &= e_max <= ell + 1e-3 * (ell - 1.0);
        }
        starts.push(StartSummary {
            start_index: start,
            criterion_value: value,
            min_coverage: mc.value,
            iterations,
            converged,
            feasible,
        });
        if feasible && best.as_ref().is_none_or(|b| value < b.0) {
            best = Some((value, start, fam, iterations, converged, mc.value, mc.gamma));
        }
    }

    let (value, start_index, family, iterations, converged, min_cov, min_gamma) = match best {
        Some(b) => b,
        None => {
            let fam = IntervalFamily::reverted(config.d, config.m, config.alpha, &config.knots_b, &config.knots_s)?;
            let mc = min_coverage(&fam, config.rho, &config.certify_quad, &fine)?;
            if mc.value < floor {
                return Err(KgError::Infeasible(format!(
                    "standard interval certified at {} < {floor}",
                    mc.value
                )));
            }
            (0.0, 0, fam, 0, false, mc.value, mc.gamma)
        }
    };
    let (max_gamma, max_value) = max_sel(&family, &config.certify_quad, gamma_max)?;
    Ok(OptimizationReport {
        criterion_value: value,
        min_coverage_achieved: min_cov,
        min_coverage_gamma: min_gamma,
        max_sel: max_value,
        max_sel_gamma: max_gamma,
        sel0: sel(0.0, &family, &config.certify_quad)?,
        iterations,
        converged,
        feasible: min_cov >= floor,
        start_index,
        shape: family.shape_report(SHAPE_GRID_POINTS),
        starts,
        family,
    })
}
