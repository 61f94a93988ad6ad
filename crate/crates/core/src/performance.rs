//! Coverage probability `c(γ; b, s, ρ)` and scaled expected length
//! `e(γ; s)` by nested Gauss–Legendre quadrature, plus the length
//! criteria the optimizer minimizes.
//!
//! With `G = (Θ̂ − θ)/(σ√v11)`, `H = τ̂/(σ√v22)` and `W = σ̂/σ`, the
//! interval covers `θ` iff `W b(H/W) − W s(|H|/W) ≤ G ≤ W b(H/W) + W s(|H|/W)`.
//! `H ~ N(γ, 1)`, `G | H = h ~ N(ρ(h − γ), 1 − ρ²)` and `W` is independent
//! of both. Outside `|H/W| < d` the interval is the standard one, whose
//! conditional coverage integrates to exactly `1 − α`, so only the strip
//! `|h| < d w` is integrated, as a correction to `1 − α`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{KgError, Result};
use crate::roots::golden_min;
use crate::special::{
    e_w, lemma1, normal_pdf, normal_prob_between, w_quadrature_with, ChiScaleDistribution, GaussLegendre,
    GAUSS_TRUNCATION,
};
use crate::spline::{IntervalFamily, IntervalShape};

/// Node counts for the `(w, h)` quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadSettings {
    pub w_panels: usize,
    pub w_order: usize,
    /// Panels spanning the `γ ± 8.5` window of the inner `h` integral.
    pub h_panels: usize,
    pub h_order: usize,
    /// Tail mass of `W` dropped by truncating its support.
    pub eps: f64,
    /// Cap on `h` panels per `w` node.
    pub max_h_panels: usize,
}

impl Default for QuadSettings {
    fn default() -> Self {
        Self {
            w_panels: 24,
            w_order: 16,
            h_panels: 32,
            h_order: 16,
            eps: 1e-10,
            max_h_panels: 4096,
        }
    }
}

impl QuadSettings {
    /// Coarser rule used inside the optimizer's search loop.
    pub fn fast() -> Self {
        Self {
            w_panels: 12,
            w_order: 10,
            h_panels: 12,
            h_order: 8,
            eps: 1e-10,
            max_h_panels: 4096,
        }
    }

    fn h_max_panel(&self) -> f64 {
        2.0 * GAUSS_TRUNCATION / self.h_panels as f64
    }

    fn validate(&self) -> Result<()> {
        if self.w_panels == 0 || self.h_panels == 0 || self.w_order < 2 || self.h_order < 2 {
            return Err(KgError::InvalidArgument(format!("degenerate quadrature settings {self:?}")));
        }
        if !(self.eps > 0.0 && self.eps <= 1e-6) {
            return Err(KgError::InvalidArgument(format!("eps = {} outside (0, 1e-6]", self.eps)));
        }
        Ok(())
    }
}

/// `w` nodes with `f_W(w)` folded into the weights.
#[derive(Debug, Clone)]
pub(crate) struct WNodes {
    pub w: Vec<f64>,
    pub weight: Vec<f64>,
}

impl WNodes {
    pub fn new(m: u32, quad: &QuadSettings) -> Self {
        let rule = w_quadrature_with(m, quad.eps, quad.w_panels, quad.w_order);
        let dist = ChiScaleDistribution::new(m);
        let weight = rule.nodes.iter().zip(&rule.weights).map(|(&w, &q)| q * dist.pdf(w)).collect();
        Self { w: rule.nodes, weight }
    }
}

/// Splits `[lo, hi]` at the scaled breakpoints `±k·w` and subdivides so no
/// panel is longer than `max_len`.
pub(crate) fn h_panels(
    lo: f64,
    hi: f64,
    w: f64,
    breakpoints: &[f64],
    max_len: f64,
    max_panels: usize,
    cuts: &mut Vec<f64>,
    out: &mut Vec<(f64, f64)>,
) -> Result<()> {
    out.clear();
    cuts.clear();
    if hi <= lo {
        return Ok(());
    }
    cuts.push(lo);
    cuts.push(hi);
    for &k in breakpoints {
        for h in [k * w, -k * w] {
            if h > lo && h < hi {
                cuts.push(h);
            }
        }
    }
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for pair in cuts.windows(2) {
        let len = pair[1] - pair[0];
        if len <= 1e-14 * (1.0 + pair[1].abs()) {
            continue;
        }
        let n = (len / max_len).ceil().max(1.0) as usize;
        for i in 0..n {
            let a = pair[0] + len * i as f64 / n as f64;
            let b = if i + 1 == n { pair[1] } else { pair[0] + len * (i + 1) as f64 / n as f64 };
            out.push((a, b));
        }
    }
    if out.len() > max_panels {
        return Err(KgError::QuadratureBudgetExceeded(format!(
            "{} h-panels needed at w = {w:.4}, budget {max_panels}",
            out.len()
        )));
    }
    Ok(())
}

fn check_rho(rho: f64) -> Result<()> {
    if rho.is_finite() && rho.abs() < 1.0 {
        Ok(())
    } else {
        Err(KgError::InvalidArgument(format!("rho = {rho} must lie in (-1, 1)")))
    }
}

/// Conditional coverage of `[w(b − s), w(b + s)]` for `G ~ N(μ, 1 − ρ²)`.
#[inline]
fn cond_cover(w: f64, b: f64, s: f64, mu: f64, r: f64) -> f64 {
    normal_prob_between((w * (b - s) - mu) / r, (w * (b + s) - mu) / r)
}

/// Coverage probability `c(γ; b, s, ρ)`.
pub fn coverage<S: IntervalShape + ?Sized>(gamma: f64, shape: &S, rho: f64, quad: &QuadSettings) -> Result<f64> {
    check_rho(rho)?;
    quad.validate()?;
    let wn = WNodes::new(shape.m(), quad);
    coverage_with(gamma, shape, rho, quad, &wn)
}

fn coverage_with<S: IntervalShape + ?Sized>(
    gamma: f64,
    shape: &S,
    rho: f64,
    quad: &QuadSettings,
    wn: &WNodes,
) -> Result<f64> {
    let r = (1.0 - rho * rho).sqrt();
    let d = shape.cutoff();
    let t = shape.t_m();
    let bps = shape.breakpoints();
    let gl = GaussLegendre::new(quad.h_order);
    let (mut cuts, mut panels) = (Vec::new(), Vec::new());
    let mut total = 0.0;
    for (&w, &ww) in wn.w.iter().zip(&wn.weight) {
        let lo = (-d * w).max(gamma - GAUSS_TRUNCATION);
        let hi = (d * w).min(gamma + GAUSS_TRUNCATION);
        h_panels(lo, hi, w, &bps, quad.h_max_panel(), quad.max_h_panels, &mut cuts, &mut panels)?;
        let mut inner = 0.0;
        for &(a, b) in &panels {
            gl.for_each_on(a, b, |h, q| {
                let x = h / w;
                let mu = rho * (h - gamma);
                let diff = cond_cover(w, shape.b(x), shape.s(x.abs()), mu, r) - cond_cover(w, 0.0, t, mu, r);
                inner += q * normal_pdf(h - gamma) * diff;
            });
        }
        total += ww * inner;
    }
    Ok(1.0 - shape.alpha() + total)
}

/// Coverage from the full representation, without subtracting the
/// standard interval's contribution. Slower; kept as a validation path.
pub fn coverage_unreduced<S: IntervalShape + ?Sized>(
    gamma: f64,
    shape: &S,
    rho: f64,
    quad: &QuadSettings,
) -> Result<f64> {
    check_rho(rho)?;
    quad.validate()?;
    let r = (1.0 - rho * rho).sqrt();
    let d = shape.cutoff();
    let mut bps = shape.breakpoints();
    bps.push(d);
    let wn = WNodes::new(shape.m(), quad);
    let gl = GaussLegendre::new(quad.h_order);
    let (mut cuts, mut panels) = (Vec::new(), Vec::new());
    let mut total = 0.0;
    for (&w, &ww) in wn.w.iter().zip(&wn.weight) {
        let lo = gamma - GAUSS_TRUNCATION;
        let hi = gamma + GAUSS_TRUNCATION;
        h_panels(lo, hi, w, &bps, quad.h_max_panel(), quad.max_h_panels, &mut cuts, &mut panels)?;
        let mut inner = 0.0;
        for &(a, b) in &panels {
            gl.for_each_on(a, b, |h, q| {
                let x = h / w;
                let cover = cond_cover(w, shape.b(x), shape.s(x.abs()), rho * (h - gamma), r);
                inner += q * normal_pdf(h - gamma) * cover;
            });
        }
        total += ww * inner;
    }
    Ok(total)
}

/// Scaled expected length `e(γ; s)`.
pub fn sel<S: IntervalShape + ?Sized>(gamma: f64, shape: &S, quad: &QuadSettings) -> Result<f64> {
    quad.validate()?;
    let wn = WNodes::new(shape.m(), quad);
    sel_with(gamma, shape, quad, &wn)
}

fn sel_with<S: IntervalShape + ?Sized>(gamma: f64, shape: &S, quad: &QuadSettings, wn: &WNodes) -> Result<f64> {
    let d = shape.cutoff();
    let t = shape.t_m();
    let g = gamma.abs();
    let bps = shape.breakpoints();
    let gl = GaussLegendre::new(quad.h_order);
    let (mut cuts, mut panels) = (Vec::new(), Vec::new());
    let mut total = 0.0;
    for (&w, &ww) in wn.w.iter().zip(&wn.weight) {
        let lo = (g - GAUSS_TRUNCATION).max(0.0);
        let hi = (d * w).min(g + GAUSS_TRUNCATION);
        h_panels(lo, hi, w, &bps, quad.h_max_panel(), quad.max_h_panels, &mut cuts, &mut panels)?;
        let mut inner = 0.0;
        for &(a, b) in &panels {
            gl.for_each_on(a, b, |h, q| {
                inner += q * (shape.s(h / w) - t) * (normal_pdf(h - g) + normal_pdf(h + g));
            });
        }
        total += ww * w * inner;
    }
    Ok(1.0 + total / (t * e_w(shape.m())))
}

/// Composite rule on `[0, d]` aligned with the breakpoints, for the
/// one-dimensional criterion integrals.
fn x_rule(breakpoints: &[f64], d: f64) -> (Vec<f64>, Vec<f64>) {
    let gl = GaussLegendre::new(16);
    let mut bp: Vec<f64> = breakpoints.iter().copied().filter(|&k| k >= 0.0 && k <= d).collect();
    bp.push(0.0);
    bp.push(d);
    bp.sort_by(|a, b| a.partial_cmp(b).unwrap());
    bp.dedup();
    let (mut xs, mut ws) = (Vec::new(), Vec::new());
    for pair in bp.windows(2) {
        let n = (pair[1] - pair[0]).ceil().max(1.0) as usize;
        let step = (pair[1] - pair[0]) / n as f64;
        for i in 0..n {
            gl.for_each_on(pair[0] + step * i as f64, pair[0] + step * (i + 1) as f64, |x, q| {
                xs.push(x);
                ws.push(q);
            });
        }
    }
    (xs, ws)
}

/// `ξ ∫(e(γ;s) − 1) dγ + (e(0;s) − 1)` through the closed form
/// `(2/(t(m) E W)) ∫₀^d (s(x) − t(m)) (ξ + (m/(x²+m))^{m/2+1}/√(2π)) dx`.
pub fn criterion_a<S: IntervalShape + ?Sized>(shape: &S, xi: f64) -> Result<f64> {
    if !(xi >= 0.0) {
        return Err(KgError::InvalidArgument(format!("xi = {xi} must be nonnegative")));
    }
    let m = shape.m();
    let t = shape.t_m();
    let (xs, ws) = x_rule(&shape.breakpoints(), shape.cutoff());
    let integral: f64 = xs.iter().zip(&ws).map(|(&x, &q)| q * (shape.s(x) - t) * (xi + lemma1(x, m))).sum();
    Ok(2.0 * integral / (t * e_w(m)))
}

/// `ξ ∫(e(γ;s) − 1) dγ + ∫(e(γ;s) − 1) φ(γ; v) dγ` with `φ(·; v)` the
/// `N(0, v²)` density. The Gaussian average has the closed form
/// `(2/(t E W)) ∫ (s − t) lemma1(x/√(1+v²), m)/√(1+v²) dx`, since a normal
/// kernel convolved with `φ(wx ∓ γ)` is again normal.
pub fn criterion_b<S: IntervalShape + ?Sized>(shape: &S, xi: f64, v: f64) -> Result<f64> {
    if !(v > 0.0) {
        return Err(KgError::InvalidArgument(format!("v = {v} must be positive")));
    }
    if !(xi >= 0.0) {
        return Err(KgError::InvalidArgument(format!("xi = {xi} must be nonnegative")));
    }
    let m = shape.m();
    let t = shape.t_m();
    let scale = (1.0 + v * v).sqrt();
    let (xs, ws) = x_rule(&shape.breakpoints(), shape.cutoff());
    let integral: f64 = xs
        .iter()
        .zip(&ws)
        .map(|(&x, &q)| q * (shape.s(x) - t) * (xi + lemma1(x / scale, m) / scale))
        .sum();
    Ok(2.0 * integral / (t * e_w(m)))
}

/// Maximum of `e(γ; s)` over `[0, gamma_max]`: grid scan with step 0.25,
/// then golden-section refinement. Returns `(argmax, max)`.
pub fn max_sel<S: IntervalShape + ?Sized>(shape: &S, quad: &QuadSettings, gamma_max: f64) -> Result<(f64, f64)> {
    if !(gamma_max > shape.cutoff()) {
        return Err(KgError::InvalidArgument(format!(
            "gamma_max = {gamma_max} must exceed d = {}",
            shape.cutoff()
        )));
    }
    quad.validate()?;
    let wn = WNodes::new(shape.m(), quad);
    let grid = uniform_gamma_grid(gamma_max, 0.25);
    let vals = grid.iter().map(|&g| sel_with(g, shape, quad, &wn)).collect::<Result<Vec<_>>>()?;
    let (i, _) = vals
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
    let a = grid[i.saturating_sub(1)];
    let b = grid[(i + 1).min(grid.len() - 1)];
    let mut best = (grid[i], vals[i]);
    if b > a {
        let (g, neg) = golden_min(|g| -sel_with(g, shape, quad, &wn).unwrap_or(f64::NEG_INFINITY), a, b, 1e-6);
        if -neg > best.1 {
            best = (g, -neg);
        }
    }
    Ok(best)
}

/// `0, step, 2·step, …` up to and including `end`.
pub fn uniform_gamma_grid(end: f64, step: f64) -> Vec<f64> {
    let n = (end / step).round() as usize;
    let mut g: Vec<f64> = (0..=n).map(|i| i as f64 * step).collect();
    if let Some(last) = g.last_mut() {
        *last = last.min(end);
    }
    if g.last().map_or(true, |&l| l < end - 1e-12) {
        g.push(end);
    }
    g
}

/// Default coverage grid: step 0.25 over `[0, d + 10]`.
pub fn default_gamma_grid(d: f64) -> Vec<f64> {
    uniform_gamma_grid(d + 10.0, 0.25)
}

/// Minimum coverage over a γ grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinCoverage {
    pub gamma: f64,
    pub value: f64,
    /// Upper bound on `|c(γ) − (1 − α)|` at the end of the grid, valid for
    /// every family with this `d` and `m`.
    pub tail_envelope: f64,
}

/// `(argmin γ, min c)` over `gamma_grid`, refined by golden-section search
/// between the neighbours of the grid minimum.
pub fn min_coverage<S: IntervalShape + ?Sized>(
    shape: &S,
    rho: f64,
    quad: &QuadSettings,
    gamma_grid: &[f64],
) -> Result<MinCoverage> {
    check_rho(rho)?;
    quad.validate()?;
    if gamma_grid.is_empty() {
        return Err(KgError::InvalidArgument("empty gamma grid".into()));
    }
    let wn = WNodes::new(shape.m(), quad);
    let vals = gamma_grid
        .par_iter()
        .map(|&g| coverage_with(g, shape, rho, quad, &wn))
        .collect::<Result<Vec<_>>>()?;
    let (i, _) = vals
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
    let mut best = (gamma_grid[i], vals[i]);
    let a = gamma_grid[i.saturating_sub(1)];
    let b = gamma_grid[(i + 1).min(gamma_grid.len() - 1)];
    if b > a {
        let (g, v) = golden_min(|g| coverage_with(g, shape, rho, quad, &wn).unwrap_or(f64::INFINITY), a, b, 1e-4);
        if v < best.1 {
            best = (g, v);
        }
    }
    let end = *gamma_grid.last().unwrap();
    Ok(MinCoverage {
        gamma: best.0,
        value: best.1,
        tail_envelope: tail_envelope(shape.cutoff(), shape.m(), end, quad),
    })
}

/// `∫₀^∞ ∫_{−dw}^{dw} φ(h − γ) dh f_W(w) dw`, which bounds
/// `|c(γ; b, s, ρ) − (1 − α)|` for every `b ∈ 𝓑`, `s ∈ 𝓢`.
pub fn tail_envelope(d: f64, m: u32, gamma: f64, quad: &QuadSettings) -> f64 {
    let wn = WNodes::new(m, quad);
    wn.w
        .iter()
        .zip(&wn.weight)
        .map(|(&w, &q)| q * normal_prob_between(-d * w - gamma, d * w - gamma))
        .sum()
}

/// Coverage and scaled expected length over a γ grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceCurve {
    pub gamma_grid: Vec<f64>,
    pub coverage: Vec<f64>,
    pub sel: Vec<f64>,
    pub sel_squared: Vec<f64>,
}

/// Coverage and SEL at every grid point. Grid points are evaluated
/// independently, so the result does not depend on the thread count.
pub fn curves<S: IntervalShape + ?Sized>(
    shape: &S,
    rho: f64,
    gamma_grid: &[f64],
    quad: &QuadSettings,
) -> Result<PerformanceCurve> {
    check_rho(rho)?;
    quad.validate()?;
    if gamma_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(KgError::InvalidArgument("gamma grid must be increasing".into()));
    }
    let wn = WNodes::new(shape.m(), quad);
    let pairs = gamma_grid
        .par_iter()
        .map(|&g| Ok((coverage_with(g, shape, rho, quad, &wn)?, sel_with(g, shape, quad, &wn)?)))
        .collect::<Result<Vec<(f64, f64)>>>()?;
    let coverage = pairs.iter().map(|p| p.0).collect();
    let sel: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    Ok(PerformanceCurve {
        gamma_grid: gamma_grid.to_vec(),
        coverage,
        sel_squared: sel.iter().map(|e| e * e).collect(),
        sel,
    })
}

/// Node of the precomputed coverage grid.
#[derive(Debug, Clone, Copy)]
struct GridNode {
    x: f64,
    w_over_r: f64,
    shift: f64,
    weight: f64,
    base: f64,
}

/// Coverage at a fixed set of γ values for many families sharing the same
/// knots, with gradients with respect to the free spline values. The
/// quadrature nodes, kernel weights and the standard-interval terms are
/// computed once.
#[derive(Debug, Clone)]
pub struct CoverageGrid {
    gammas: Vec<f64>,
    alpha: f64,
    d: f64,
    knots_b: Vec<f64>,
    knots_s: Vec<f64>,
    op_b: Vec<f64>,
    op_s: Vec<f64>,
    blocks: Vec<(usize, usize)>,
    nodes: Vec<GridNode>,
}

impl CoverageGrid {
    pub fn new(template: &IntervalFamily, rho: f64, gammas: &[f64], quad: &QuadSettings) -> Result<Self> {
        check_rho(rho)?;
        quad.validate()?;
        let r = (1.0 - rho * rho).sqrt();
        let d = template.d();
        let t = template.t_m();
        let bps = template.breakpoints();
        let wn = WNodes::new(template.m(), quad);
        let gl = GaussLegendre::new(quad.h_order);
        let (mut cuts, mut panels) = (Vec::new(), Vec::new());
        let mut nodes = Vec::new();
        let mut blocks = Vec::with_capacity(gammas.len());
        for &gamma in gammas {
            let start = nodes.len();
            for (&w, &ww) in wn.w.iter().zip(&wn.weight) {
                let lo = (-d * w).max(gamma - GAUSS_TRUNCATION);
                let hi = (d * w).min(gamma + GAUSS_TRUNCATION);
                h_panels(lo, hi, w, &bps, quad.h_max_panel(), quad.max_h_panels, &mut cuts, &mut panels)?;
                for &(a, b) in &panels {
                    gl.for_each_on(a, b, |h, q| {
                        let mu = rho * (h - gamma);
                        nodes.push(GridNode {
                            x: h / w,
                            w_over_r: w / r,
                            shift: mu / r,
                            weight: ww * q * normal_pdf(h - gamma),
                            base: cond_cover(w, 0.0, t, mu, r),
                        });
                    });
                }
            }
            blocks.push((start, nodes.len()));
        }
        let knots_b = template.knots_b().to_vec();
        let knots_s = template.knots_s().to_vec();
        Ok(Self {
            gammas: gammas.to_vec(),
            alpha: template.alpha(),
            d,
            op_b: crate::spline::NaturalSpline::second_derivative_operator(&knots_b),
            op_s: crate::spline::NaturalSpline::second_derivative_operator(&knots_s),
            knots_b,
            knots_s,
            blocks,
            nodes,
        })
    }

    pub fn gammas(&self) -> &[f64] {
        &self.gammas
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    fn check_family(&self, family: &IntervalFamily) {
        debug_assert_eq!(family.knots_b(), &self.knots_b[..]);
        debug_assert_eq!(family.knots_s(), &self.knots_s[..]);
        debug_assert_eq!(family.d(), self.d);
    }

    /// Coverage at every grid γ.
    pub fn coverage(&self, family: &IntervalFamily) -> Vec<f64> {
        self.check_family(family);
        let b_zero = family.b_is_zero();
        self.blocks
            .par_iter()
            .map(|&(start, end)| {
                let mut acc = 0.0;
                for n in &self.nodes[start..end] {
                    let ax = n.x.abs();
                    let s = family.s_spline().eval(ax);
                    let b = if b_zero {
                        0.0
                    } else {
                        let v = family.b_spline().eval(ax);
                        if n.x < 0.0 {
                            -v
                        } else {
                            v
                        }
                    };
                    let hi = n.w_over_r * (b + s) - n.shift;
                    let lo = n.w_over_r * (b - s) - n.shift;
                    acc += n.weight * (normal_prob_between(lo, hi) - n.base);
                }
                1.0 - self.alpha + acc
            })
            .collect()
    }

    /// Coverage at every grid γ and its gradient with respect to
    /// `[values_b…, values_s…]`.
    pub fn coverage_with_gradient(&self, family: &IntervalFamily) -> (Vec<f64>, Vec<Vec<f64>>) {
        self.check_family(family);
        let nb = self.knots_b.len();
        let ns = self.knots_s.len();
        let bs = family.b_spline();
        let ss = family.s_spline();
        let results: Vec<(f64, Vec<f64>)> = self
            .blocks
            .par_iter()
            .map(|&(start, end)| {
                let mut acc = 0.0;
                // direct and second-derivative sensitivities per knot
                let mut db = vec![0.0; nb];
                let mut d2b = vec![0.0; nb];
                let mut ds = vec![0.0; ns];
                let mut d2s = vec![0.0; ns];
                for n in &self.nodes[start..end] {
                    let ax = n.x.abs();
                    let sign = if n.x < 0.0 { -1.0 } else { 1.0 };
                    let st_s = ss.stencil(ax);
                    let st_b = bs.stencil(ax);
                    let s = dot_stencil(&st_s, ss);
                    let b = sign * dot_stencil(&st_b, bs);
                    let hi = n.w_over_r * (b + s) - n.shift;
                    let lo = n.w_over_r * (b - s) - n.shift;
                    acc += n.weight * (normal_prob_between(lo, hi) - n.base);
                    let (p_hi, p_lo) = (normal_pdf(hi), normal_pdf(lo));
                    let gs = n.weight * n.w_over_r * (p_hi + p_lo);
                    let gb = sign * n.weight * n.w_over_r * (p_hi - p_lo);
                    scatter(&st_s, gs, &mut ds, &mut d2s);
                    scatter(&st_b, gb, &mut db, &mut d2b);
                }
                let full_b = fold_second(&db, &d2b, &self.op_b);
                let full_s = fold_second(&ds, &d2s, &self.op_s);
                let mut grad = Vec::with_capacity(nb - 2 + ns - 1);
                grad.extend_from_slice(&full_b[1..nb - 1]);
                grad.extend_from_slice(&full_s[..ns - 1]);
                (1.0 - self.alpha + acc, grad)
            })
            .collect();
        results.into_iter().unzip()
    }
}

#[inline]
fn dot_stencil(st: &crate::spline::Stencil, sp: &crate::spline::NaturalSpline) -> f64 {
    // evaluation through the stencil keeps value and gradient consistent
    let [ca, cb, cc, cd] = st.coeffs;
    let v = sp.values();
    let m2 = sp.second();
    ca * v[st.lo] + cb * v[st.lo + 1] + cc * m2[st.lo] + cd * m2[st.lo + 1]
}

#[inline]
fn scatter(st: &crate::spline::Stencil, g: f64, direct: &mut [f64], second: &mut [f64]) {
    let [ca, cb, cc, cd] = st.coeffs;
    direct[st.lo] += g * ca;
    direct[st.lo + 1] += g * cb;
    second[st.lo] += g * cc;
    second[st.lo + 1] += g * cd;
}

fn fold_second(direct: &[f64], second: &[f64], op: &[f64]) -> Vec<f64> {
    let n = direct.len();
    (0..n)
        .map(|k| direct[k] + (0..n).map(|i| second[i] * op[i * n + k]).sum::<f64>())
        .collect()
}

/// `e(γ_j; s) − 1` as a linear map of the free `s` values, for a fixed
/// knot vector: `e(γ_j) − 1 = Σ_k (y_k − t(m)) L_jk`.
#[derive(Debug, Clone)]
pub struct SelOperator {
    gammas: Vec<f64>,
    t_m: f64,
    rows: Vec<Vec<f64>>,
}

impl SelOperator {
    pub fn new(template: &IntervalFamily, gammas: &[f64], quad: &QuadSettings) -> Result<Self> {
        quad.validate()?;
        let knots = template.knots_s().to_vec();
        let ns = knots.len();
        let spline = template.s_spline();
        let op = crate::spline::NaturalSpline::second_derivative_operator(&knots);
        let d = template.d();
        let t = template.t_m();
        let m = template.m();
        let wn = WNodes::new(m, quad);
        let gl = GaussLegendre::new(quad.h_order);
        let scale = 1.0 / (t * e_w(m));
        let (mut cuts, mut panels) = (Vec::new(), Vec::new());
        let mut rows = Vec::with_capacity(gammas.len());
        for &gamma in gammas {
            let g = gamma.abs();
            let mut direct = vec![0.0; ns];
            let mut second = vec![0.0; ns];
            for (&w, &ww) in wn.w.iter().zip(&wn.weight) {
                let lo = (g - GAUSS_TRUNCATION).max(0.0);
                let hi = (d * w).min(g + GAUSS_TRUNCATION);
                h_panels(lo, hi, w, &knots, quad.h_max_panel(), quad.max_h_panels, &mut cuts, &mut panels)?;
                for &(a, b) in &panels {
                    gl.for_each_on(a, b, |h, q| {
                        let st = spline.stencil(h / w);
                        let k = scale * ww * w * q * (normal_pdf(h - g) + normal_pdf(h + g));
                        scatter(&st, k, &mut direct, &mut second);
                    });
                }
            }
            let full = fold_second(&direct, &second, &op);
            rows.push(full[..ns - 1].to_vec());
        }
        Ok(Self {
            gammas: gammas.to_vec(),
            t_m: t,
            rows,
        })
    }

    pub fn gammas(&self) -> &[f64] {
        &self.gammas
    }

    /// Coefficients of `e(γ_j) − 1` with respect to the free `s` values.
    pub fn row(&self, j: usize) -> &[f64] {
        &self.rows[j]
    }

    pub fn sel(&self, values_s: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| 1.0 + row.iter().zip(values_s).map(|(l, y)| l * (y - self.t_m)).sum::<f64>())
            .collect()
    }
}

/// Gradient of [`criterion_a`] (or of `e(0;s) − 1` when `xi = 0`) with
/// respect to the free `s` values; the criterion is linear in them.
pub fn criterion_a_gradient(family: &IntervalFamily, xi: f64) -> Vec<f64> {
    let knots = family.knots_s();
    let ns = knots.len();
    let m = family.m();
    let t = family.t_m();
    let op = crate::spline::NaturalSpline::second_derivative_operator(knots);
    let (xs, ws) = x_rule(&family.breakpoints(), family.d());
    let mut direct = vec![0.0; ns];
    let mut second = vec![0.0; ns];
    let scale = 2.0 / (t * e_w(m));
    for (&x, &q) in xs.iter().zip(&ws) {
        let st = family.s_spline().stencil(x);
        scatter(&st, scale * q * (xi + lemma1(x, m)), &mut direct, &mut second);
    }
    let full = fold_second(&direct, &second, &op);
    full[..ns - 1].to_vec()
}
