//! The function pair `(b, s)` that defines the interval
//! `[Θ̂ − √v11 σ̂ b(τ̂/(σ̂√v22)) ± √v11 σ̂ s(|τ̂|/(σ̂√v22))]`.
//!
//! Both functions are natural cubic splines on `[0, d]`. `b` is extended
//! as an odd function and vanishes for `|x| ≥ d`; `s` equals `t(m)` for
//! `x ≥ d`. The endpoint values `b(0) = b(d) = 0` and `s(d) = t(m)` are
//! structural, so the free parameters are `b` at the interior knots and
//! `s` at every knot but the last.

use serde::{Deserialize, Serialize};

use crate::error::{KgError, Result};
use crate::special::t_quantile;

/// Grid size used for positivity and shape checks.
pub const SHAPE_GRID_POINTS: usize = 2048;

/// Anything that can play the role of `(b, s)` in the performance
/// integrals: a spline family, or a closed-form `s` with `b ≡ 0`.
pub trait IntervalShape: Sync {
    /// Cut-off `d`; `b = 0` and `s = t(m)` beyond it.
    fn cutoff(&self) -> f64;
    fn m(&self) -> u32;
    fn alpha(&self) -> f64;
    /// The reference quantile `t(m)`.
    fn t_m(&self) -> f64;
    /// Odd function on ℝ.
    fn b(&self, x: f64) -> f64;
    /// Function on `[0, ∞)`; negative arguments are reflected.
    fn s(&self, x: f64) -> f64;
    /// Points in `[0, d]` where `b` or `s` may lose smoothness. Must
    /// contain `0` and `d`.
    fn breakpoints(&self) -> Vec<f64>;
    /// True when `b ≡ 0`.
    fn b_is_zero(&self) -> bool {
        false
    }
}

/// Natural cubic spline through `(knots[i], values[i])`.
#[derive(Debug, Clone, PartialEq)]
pub struct NaturalSpline {
    knots: Vec<f64>,
    values: Vec<f64>,
    second: Vec<f64>,
}

/// Position of `x` inside a spline: interval index and the weights of
/// `(y[lo], y[lo+1], y''[lo], y''[lo+1])`.
#[derive(Debug, Clone, Copy)]
pub struct Stencil {
    pub lo: usize,
    pub coeffs: [f64; 4],
}

impl NaturalSpline {
    pub fn new(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        check_knots(&knots)?;
        if knots.len() != values.len() {
            return Err(KgError::DimensionMismatch(format!(
                "{} knots but {} values",
                knots.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(KgError::InvalidArgument("spline values must be finite".into()));
        }
        let second = natural_second_derivatives(&knots, &values);
        Ok(Self { knots, values, second })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Second derivatives at the knots.
    pub fn second(&self) -> &[f64] {
        &self.second
    }

    /// Stencil for `x`, clamped to the knot range.
    #[inline]
    pub fn stencil(&self, x: f64) -> Stencil {
        let n = self.knots.len();
        let hi = self.knots.partition_point(|&k| k <= x).clamp(1, n - 1);
        let lo = hi - 1;
        let h = self.knots[hi] - self.knots[lo];
        let a = (self.knots[hi] - x) / h;
        let b = (x - self.knots[lo]) / h;
        let h2 = h * h / 6.0;
        Stencil {
            lo,
            coeffs: [a, b, (a * a * a - a) * h2, (b * b * b - b) * h2],
        }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        let st = self.stencil(x);
        let [_, cb, cc, cd] = st.coeffs;
        let lo = st.lo;
        // written as an increment on values[lo] so constant data evaluate exactly
        self.values[lo] + cb * (self.values[lo + 1] - self.values[lo]) + cc * self.second[lo] + cd * self.second[lo + 1]
    }

    /// First derivative.
    pub fn derivative(&self, x: f64) -> f64 {
        let n = self.knots.len();
        let hi = self.knots.partition_point(|&k| k <= x).clamp(1, n - 1);
        let lo = hi - 1;
        let h = self.knots[hi] - self.knots[lo];
        let a = (self.knots[hi] - x) / h;
        let b = (x - self.knots[lo]) / h;
        (self.values[hi] - self.values[lo]) / h - (3.0 * a * a - 1.0) * h * self.second[lo] / 6.0
            + (3.0 * b * b - 1.0) * h * self.second[hi] / 6.0
    }

    /// Matrix `M` (row-major, `n × n`) with `y'' = M y` for the natural
    /// end conditions.
    pub fn second_derivative_operator(knots: &[f64]) -> Vec<f64> {
        let n = knots.len();
        let mut out = vec![0.0; n * n];
        let mut unit = vec![0.0; n];
        for k in 0..n {
            unit.iter_mut().for_each(|u| *u = 0.0);
            unit[k] = 1.0;
            let col = natural_second_derivatives(knots, &unit);
            for i in 0..n {
                out[i * n + k] = col[i];
            }
        }
        out
    }
}

fn check_knots(knots: &[f64]) -> Result<()> {
    if knots.len() < 2 {
        return Err(KgError::KnotOrder("need at least two knots".into()));
    }
    if knots.iter().any(|k| !k.is_finite()) {
        return Err(KgError::KnotOrder("knots must be finite".into()));
    }
    if let Some(i) = knots.windows(2).position(|w| w[1] <= w[0]) {
        return Err(KgError::KnotOrder(format!(
            "knots not strictly increasing at index {} ({} then {})",
            i + 1,
            knots[i],
            knots[i + 1]
        )));
    }
    Ok(())
}

// Tridiagonal solve for interior second derivatives; both ends are zero.
fn natural_second_derivatives(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut m = vec![0.0; n];
    if n < 3 {
        return m;
    }
    let k = n - 2;
    let mut diag = vec![0.0; k];
    let mut upper = vec![0.0; k];
    let mut rhs = vec![0.0; k];
    for i in 1..n - 1 {
        let h0 = x[i] - x[i - 1];
        let h1 = x[i + 1] - x[i];
        diag[i - 1] = (h0 + h1) / 3.0;
        upper[i - 1] = h1 / 6.0;
        rhs[i - 1] = (y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0;
    }
    // forward elimination; the sub-diagonal equals the previous super-diagonal
    for i in 1..k {
        let w = upper[i - 1] / diag[i - 1];
        diag[i] -= w * upper[i - 1];
        rhs[i] -= w * rhs[i - 1];
    }
    m[k] = rhs[k - 1] / diag[k - 1];
    for i in (0..k - 1).rev() {
        m[i + 1] = (rhs[i] - upper[i] * m[i + 2]) / diag[i];
    }
    m
}

/// On-disk form of a family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub d: f64,
    pub m: u32,
    pub alpha: f64,
    pub knots_b: Vec<f64>,
    pub values_b: Vec<f64>,
    pub knots_s: Vec<f64>,
    pub values_s: Vec<f64>,
}

/// The spline pair `(b, s)` together with `d`, `m`, `α` and `t(m)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FamilySpec", into = "FamilySpec")]
pub struct IntervalFamily {
    d: f64,
    m: u32,
    alpha: f64,
    t_m: f64,
    b: NaturalSpline,
    s: NaturalSpline,
}

impl TryFrom<FamilySpec> for IntervalFamily {
    type Error = KgError;

    fn try_from(spec: FamilySpec) -> Result<Self> {
        build_family(
            spec.d,
            spec.m,
            spec.alpha,
            &spec.knots_b,
            &spec.values_b,
            &spec.knots_s,
            &spec.values_s,
        )
    }
}

impl From<IntervalFamily> for FamilySpec {
    fn from(f: IntervalFamily) -> Self {
        f.spec()
    }
}

/// Builds and validates a family. `values_b` holds `b` at the interior
/// knots of `knots_b`; `values_s` holds `s` at every knot of `knots_s`
/// except `d`.
pub fn build_family(
    d: f64,
    m: u32,
    alpha: f64,
    knots_b: &[f64],
    values_b: &[f64],
    knots_s: &[f64],
    values_s: &[f64],
) -> Result<IntervalFamily> {
    if !(d > 0.0 && d.is_finite()) {
        return Err(KgError::InvalidArgument(format!("cut-off d must be positive, got {d}")));
    }
    if m < 1 {
        return Err(KgError::InvalidArgument("m must be at least 1".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(KgError::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let t_m = t_quantile(m, alpha);
    IntervalFamily::with_quantile(d, m, alpha, t_m, knots_b, values_b, knots_s, values_s)
}

impl IntervalFamily {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn with_quantile(
        d: f64,
        m: u32,
        alpha: f64,
        t_m: f64,
        knots_b: &[f64],
        values_b: &[f64],
        knots_s: &[f64],
        values_s: &[f64],
    ) -> Result<Self> {
        for (name, knots) in [("knots_b", knots_b), ("knots_s", knots_s)] {
            check_knots(knots).map_err(|e| KgError::KnotOrder(format!("{name}: {e}")))?;
            let first = knots[0];
            let last = knots[knots.len() - 1];
            if first != 0.0 || (last - d).abs() > 1e-12 * d {
                return Err(KgError::KnotOrder(format!(
                    "{name} must start at 0 and end at d = {d}; got [{first}, {last}]"
                )));
            }
        }
        if values_b.len() + 2 != knots_b.len() {
            return Err(KgError::DimensionMismatch(format!(
                "values_b has {} entries, expected {} (interior knots)",
                values_b.len(),
                knots_b.len() - 2
            )));
        }
        if values_s.len() + 1 != knots_s.len() {
            return Err(KgError::DimensionMismatch(format!(
                "values_s has {} entries, expected {} (all knots but d)",
                values_s.len(),
                knots_s.len() - 1
            )));
        }
        let mut kb = knots_b.to_vec();
        let mut ks = knots_s.to_vec();
        *kb.last_mut().unwrap() = d;
        *ks.last_mut().unwrap() = d;
        let mut vb = Vec::with_capacity(kb.len());
        vb.push(0.0);
        vb.extend_from_slice(values_b);
        vb.push(0.0);
        let mut vs = values_s.to_vec();
        vs.push(t_m);
        let family = Self {
            d,
            m,
            alpha,
            t_m,
            b: NaturalSpline::new(kb, vb)?,
            s: NaturalSpline::new(ks, vs)?,
        };
        let (min_value, at) = family.min_s_on_grid(SHAPE_GRID_POINTS);
        if min_value <= 0.0 {
            return Err(KgError::NonPositiveS { min_value, at });
        }
        Ok(family)
    }

    /// `b ≡ 0`, `s ≡ t(m)`: the interval coincides with the standard one.
    pub fn reverted(d: f64, m: u32, alpha: f64, knots_b: &[f64], knots_s: &[f64]) -> Result<Self> {
        let t_m = t_quantile(m, alpha);
        build_family(
            d,
            m,
            alpha,
            knots_b,
            &vec![0.0; knots_b.len().saturating_sub(2)],
            knots_s,
            &vec![t_m; knots_s.len().saturating_sub(1)],
        )
    }

    /// Same knots, new free values.
    pub fn with_values(&self, values_b: &[f64], values_s: &[f64]) -> Result<Self> {
        Self::with_quantile(
            self.d,
            self.m,
            self.alpha,
            self.t_m,
            self.b.knots(),
            values_b,
            self.s.knots(),
            values_s,
        )
    }

    pub fn spec(&self) -> FamilySpec {
        FamilySpec {
            d: self.d,
            m: self.m,
            alpha: self.alpha,
            knots_b: self.b.knots().to_vec(),
            values_b: self.values_b().to_vec(),
            knots_s: self.s.knots().to_vec(),
            values_s: self.values_s().to_vec(),
        }
    }

    pub fn d(&self) -> f64 {
        self.d
    }

    pub fn knots_b(&self) -> &[f64] {
        self.b.knots()
    }

    pub fn knots_s(&self) -> &[f64] {
        self.s.knots()
    }

    /// Free values of `b` (interior knots).
    pub fn values_b(&self) -> &[f64] {
        let v = self.b.values();
        &v[1..v.len() - 1]
    }

    /// Free values of `s` (all knots but `d`).
    pub fn values_s(&self) -> &[f64] {
        let v = self.s.values();
        &v[..v.len() - 1]
    }

    pub fn b_spline(&self) -> &NaturalSpline {
        &self.b
    }

    pub fn s_spline(&self) -> &NaturalSpline {
        &self.s
    }

    pub fn eval_b(&self, x: f64) -> f64 {
        let ax = x.abs();
        if ax >= self.d {
            return 0.0;
        }
        let v = self.b.eval(ax);
        if x < 0.0 {
            -v
        } else {
            v
        }
    }

    pub fn eval_s(&self, x: f64) -> f64 {
        let ax = x.abs();
        if ax >= self.d {
            self.t_m
        } else {
            self.s.eval(ax)
        }
    }

    fn min_s_on_grid(&self, points: usize) -> (f64, f64) {
        uniform_grid(self.d, points)
            .map(|x| (self.s.eval(x), x))
            .fold((f64::INFINITY, 0.0), |acc, v| if v.0 < acc.0 { v } else { acc })
    }

    /// Positivity and unimodality of `s` and `b` on a uniform grid over
    /// `[0, d]`.
    pub fn shape_report(&self, grid_points: usize) -> ShapeReport {
        let grid_points = grid_points.max(2);
        let s: Vec<f64> = uniform_grid(self.d, grid_points).map(|x| self.s.eval(x)).collect();
        let b: Vec<f64> = uniform_grid(self.d, grid_points).map(|x| self.b.eval(x)).collect();
        let s_min = s.iter().cloned().fold(f64::INFINITY, f64::min);
        let s_violation = unimodal_violation(&s);
        let neg_b: Vec<f64> = b.iter().map(|v| -v).collect();
        let b_violation = unimodal_violation(&b).min(unimodal_violation(&neg_b));
        let tol = SHAPE_TOLERANCE * (1.0 + self.t_m);
        ShapeReport {
            s_unimodal: s_violation <= tol,
            b_unimodal_on_0d: b_violation <= tol,
            s_positive: s_min > 0.0,
            max_violation: s_violation.max(b_violation),
            s_violation,
            b_violation,
            s_min,
        }
    }
}

const SHAPE_TOLERANCE: f64 = 1e-10;

fn uniform_grid(d: f64, points: usize) -> impl Iterator<Item = f64> {
    let n = points.max(2);
    (0..n).map(move |i| if i + 1 == n { d } else { d * i as f64 / (n - 1) as f64 })
}

/// Distance from "non-decreasing then non-increasing": the smallest total
/// size of the wrong-direction steps over all choices of the mode.
/// Constant and monotone sequences score zero.
pub fn unimodal_violation(v: &[f64]) -> f64 {
    if v.len() < 3 {
        return 0.0;
    }
    let n = v.len() - 1;
    // down[i]: total decrease among the first i steps; up_after[i]: total
    // increase among steps i..n
    let mut down = vec![0.0; n + 1];
    for i in 0..n {
        down[i + 1] = down[i] + (v[i] - v[i + 1]).max(0.0);
    }
    let mut up_after = vec![0.0; n + 1];
    for i in (0..n).rev() {
        up_after[i] = up_after[i + 1] + (v[i + 1] - v[i]).max(0.0);
    }
    (0..=n).map(|q| down[q] + up_after[q]).fold(f64::INFINITY, f64::min)
}

/// Result of [`IntervalFamily::shape_report`]. Monotone and constant
/// functions count as unimodal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeReport {
    pub s_unimodal: bool,
    /// `b` has a single interior extremum (of either sign) on `[0, d]`.
    pub b_unimodal_on_0d: bool,
    pub s_positive: bool,
    pub max_violation: f64,
    pub s_violation: f64,
    pub b_violation: f64,
    pub s_min: f64,
}

impl IntervalShape for IntervalFamily {
    fn cutoff(&self) -> f64 {
        self.d
    }

    fn m(&self) -> u32 {
        self.m
    }

    fn alpha(&self) -> f64 {
        self.alpha
    }

    fn t_m(&self) -> f64 {
        self.t_m
    }

    #[inline]
    fn b(&self, x: f64) -> f64 {
        self.eval_b(x)
    }

    #[inline]
    fn s(&self, x: f64) -> f64 {
        self.eval_s(x)
    }

    fn breakpoints(&self) -> Vec<f64> {
        let mut bp: Vec<f64> = self.b.knots().iter().chain(self.s.knots()).copied().collect();
        bp.sort_by(|a, b| a.partial_cmp(b).unwrap());
        bp.dedup();
        bp
    }

    fn b_is_zero(&self) -> bool {
        self.values_b().iter().all(|&v| v == 0.0)
    }
}
