//! Least-squares fitting, design constants and realized intervals.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{KgError, Result};
use crate::special::t_quantile;
use crate::spline::{IntervalFamily, IntervalShape};

/// Relative size of the smallest `|R_ii|` below which `X` is treated as
/// rank deficient.
const RANK_TOL: f64 = 1e-12;

/// `Y = Xβ + ε` with `θ = aᵀβ` and `τ = cᵀβ − t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProblemFile", into = "ProblemFile")]
pub struct RegressionProblem {
    x: DMatrix<f64>,
    a: DVector<f64>,
    c: DVector<f64>,
    t: f64,
}

/// JSON layout: `x` as a list of rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ProblemFile {
    x: Vec<Vec<f64>>,
    a: Vec<f64>,
    c: Vec<f64>,
    #[serde(default)]
    t: f64,
}

impl TryFrom<ProblemFile> for RegressionProblem {
    type Error = KgError;
    fn try_from(f: ProblemFile) -> Result<Self> {
        RegressionProblem::from_rows(&f.x, &f.a, &f.c, f.t)
    }
}

impl From<RegressionProblem> for ProblemFile {
    fn from(p: RegressionProblem) -> Self {
        ProblemFile {
            x: p.x.row_iter().map(|r| r.iter().copied().collect()).collect(),
            a: p.a.iter().copied().collect(),
            c: p.c.iter().copied().collect(),
            t: p.t,
        }
    }
}

impl RegressionProblem {
    pub fn new(x: DMatrix<f64>, a: &[f64], c: &[f64], t: f64) -> Result<Self> {
        let (n, p) = x.shape();
        if a.len() != p || c.len() != p {
            return Err(KgError::DimensionMismatch(format!(
                "X has {p} columns but a has {} and c has {} entries",
                a.len(),
                c.len()
            )));
        }
        if n <= p {
            return Err(KgError::DimensionMismatch(format!("need n > p, got n = {n}, p = {p}")));
        }
        if x.iter().chain(a).chain(c).any(|v| !v.is_finite()) || !t.is_finite() {
            return Err(KgError::InvalidArgument("non-finite entry in X, a, c or t".into()));
        }
        Ok(Self {
            x,
            a: DVector::from_column_slice(a),
            c: DVector::from_column_slice(c),
            t,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], a: &[f64], c: &[f64], t: f64) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if p == 0 || rows.iter().any(|r| r.len() != p) {
            return Err(KgError::DimensionMismatch("design rows must be non-empty and of equal length".into()));
        }
        let x = DMatrix::from_row_iterator(rows.len(), p, rows.iter().flatten().copied());
        Self::new(x, a, c, t)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn a(&self) -> &[f64] {
        self.a.as_slice()
    }

    pub fn c(&self) -> &[f64] {
        self.c.as_slice()
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    /// Same design with a different `τ` contrast.
    pub fn with_tau(&self, c: &[f64], t: f64) -> Result<Self> {
        Self::new(self.x.clone(), self.a.as_slice(), c, t)
    }
}

/// Thin QR factorization of `X` with a rank check.
struct Factor {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

impl Factor {
    fn new(x: &DMatrix<f64>) -> Result<Self> {
        let qr = x.clone().qr();
        let r = qr.r();
        let diag: Vec<f64> = r.diagonal().iter().map(|v| v.abs()).collect();
        let max_diag = diag.iter().copied().fold(0.0, f64::max);
        let min_diag = diag.iter().copied().fold(f64::INFINITY, f64::min);
        if !(min_diag > RANK_TOL * max_diag) {
            return Err(KgError::SingularDesign { min_diag, max_diag });
        }
        Ok(Self { q: qr.q(), r })
    }

    /// `R⁻ᵀ v`, so that `vᵀ(XᵀX)⁻¹u = (R⁻ᵀv)·(R⁻ᵀu)`.
    fn whiten(&self, v: &DVector<f64>) -> DVector<f64> {
        self.r
            .transpose()
            .solve_lower_triangular(v)
            .expect("diagonal checked nonzero")
    }

    fn solve(&self, y: &DVector<f64>) -> DVector<f64> {
        self.r
            .solve_upper_triangular(&(self.q.transpose() * y))
            .expect("diagonal checked nonzero")
    }
}

/// `Var(Θ̂)/σ²`, `Var(τ̂)/σ²`, `Cov(Θ̂, τ̂)/σ²`, their correlation and the
/// residual degrees of freedom.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignConstants {
    pub v11: f64,
    pub v22: f64,
    pub v12: f64,
    pub rho: f64,
    pub m: u32,
}

pub fn design_constants(problem: &RegressionProblem) -> Result<DesignConstants> {
    let f = Factor::new(&problem.x)?;
    let wa = f.whiten(&problem.a);
    let wc = f.whiten(&problem.c);
    let v11 = wa.norm_squared();
    let v22 = wc.norm_squared();
    let v12 = wa.dot(&wc);
    if !(v11 > 0.0) || !(v22 > 0.0) {
        return Err(KgError::DegenerateContrast(format!("v11 = {v11:e}, v22 = {v22:e}")));
    }
    let rho = v12 / (v11 * v22).sqrt();
    if rho.abs() >= 1.0 - 1e-12 {
        return Err(KgError::DegenerateContrast(format!("a and c are linearly dependent (rho = {rho})")));
    }
    Ok(DesignConstants {
        v11,
        v22,
        v12,
        rho,
        m: (problem.n() - problem.p()) as u32,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub beta_hat: Vec<f64>,
    pub sigma_hat: f64,
    pub theta_hat: f64,
    pub tau_hat: f64,
}

pub fn fit(problem: &RegressionProblem, y: &[f64]) -> Result<FitResult> {
    if y.len() != problem.n() {
        return Err(KgError::DimensionMismatch(format!(
            "y has {} entries, X has {} rows",
            y.len(),
            problem.n()
        )));
    }
    let f = Factor::new(&problem.x)?;
    let yv = DVector::from_column_slice(y);
    let beta = f.solve(&yv);
    let resid = &yv - &problem.x * &beta;
    let m = (problem.n() - problem.p()) as f64;
    Ok(FitResult {
        sigma_hat: (resid.norm_squared() / m).sqrt(),
        theta_hat: problem.a.dot(&beta),
        tau_hat: problem.c.dot(&beta) - problem.t,
        beta_hat: beta.iter().copied().collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub lower: f64,
    pub upper: f64,
}

impl ConfidenceInterval {
    fn centred(centre: f64, half_width: f64) -> Self {
        Self {
            lower: centre - half_width,
            upper: centre + half_width,
        }
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, theta: f64) -> bool {
        self.lower <= theta && theta <= self.upper
    }
}

/// `Θ̂ ± t(m) √v11 σ̂`.
pub fn standard_interval(fit: &FitResult, consts: &DesignConstants, alpha: f64) -> ConfidenceInterval {
    let t = t_quantile(consts.m, alpha);
    ConfidenceInterval::centred(fit.theta_hat, t * consts.v11.sqrt() * fit.sigma_hat)
}

/// `Θ̂ − √v11 σ̂ b(x) ± √v11 σ̂ s(|x|)` with `x = τ̂/(σ̂√v22)`.
pub fn kg_interval(fit: &FitResult, consts: &DesignConstants, family: &IntervalFamily) -> Result<ConfidenceInterval> {
    if family.m() != consts.m {
        return Err(KgError::DimensionMismatch(format!(
            "family built for m = {}, design has m = {}",
            family.m(),
            consts.m
        )));
    }
    if fit.sigma_hat == 0.0 {
        return Ok(ConfidenceInterval::centred(fit.theta_hat, 0.0));
    }
    let x = fit.tau_hat / (fit.sigma_hat * consts.v22.sqrt());
    // same operation order as the standard interval, so the reverted family
    // reproduces it exactly
    let half = family.s(x.abs()) * consts.v11.sqrt() * fit.sigma_hat;
    let centre = fit.theta_hat - family.b(x) * consts.v11.sqrt() * fit.sigma_hat;
    Ok(ConfidenceInterval::centred(centre, half))
}

/// Pre-test interval: the standard interval if the t test of `τ = 0` at
/// level `test_size` rejects, otherwise the standard interval from the
/// fit constrained by `cᵀβ = t` (`m + 1` residual degrees of freedom).
pub fn naive_interval(
    fit: &FitResult,
    consts: &DesignConstants,
    alpha: f64,
    test_size: f64,
) -> Result<ConfidenceInterval> {
    if !(test_size > 0.0 && test_size < 1.0) {
        return Err(KgError::InvalidArgument(format!("test_size = {test_size} outside (0, 1)")));
    }
    let m = consts.m;
    let stat = if fit.sigma_hat > 0.0 {
        fit.tau_hat.abs() / (fit.sigma_hat * consts.v22.sqrt())
    } else if fit.tau_hat == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    if stat > t_quantile(m, test_size) {
        return Ok(standard_interval(fit, consts, alpha));
    }
    let theta = fit.theta_hat - consts.v12 / consts.v22 * fit.tau_hat;
    let rss = m as f64 * fit.sigma_hat * fit.sigma_hat + fit.tau_hat * fit.tau_hat / consts.v22;
    let sigma = (rss / (m as f64 + 1.0)).sqrt();
    let var = (consts.v11 - consts.v12 * consts.v12 / consts.v22).max(0.0);
    Ok(ConfidenceInterval::centred(theta, t_quantile(m + 1, alpha) * var.sqrt() * sigma))
}

/// How [`orthogonalize_tau`] arrived at its contrast.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TauCase {
    /// `Cov(Θ̂, Ψ̂ᵢ) = 0` for exactly one column `i`, which is returned.
    Column(usize),
    /// Both covariances vanish; the first column is returned, either is valid.
    BothCovariancesZero,
    /// The combination `C₁ − (Cov₁/Cov₂) C₂`.
    Combined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrthogonalTau {
    pub c: Vec<f64>,
    pub t: f64,
    pub case: TauCase,
}

/// Given prior information `Cᵀβ = t2` on two contrasts, returns a single
/// contrast `cᵀβ = t` implied by it with `Cov(Θ̂, τ̂) = 0`.
pub fn orthogonalize_tau(
    x: &DMatrix<f64>,
    a: &[f64],
    c_cols: [&[f64]; 2],
    t2: [f64; 2],
) -> Result<OrthogonalTau> {
    let p = x.ncols();
    if a.len() != p || c_cols.iter().any(|c| c.len() != p) {
        return Err(KgError::DimensionMismatch("a and the columns of C must have p entries".into()));
    }
    let f = Factor::new(x)?;
    let wa = f.whiten(&DVector::from_column_slice(a));
    let w1 = f.whiten(&DVector::from_column_slice(c_cols[0]));
    let w2 = f.whiten(&DVector::from_column_slice(c_cols[1]));
    let g = nalgebra::Matrix2::new(w1.norm_squared(), w1.dot(&w2), w1.dot(&w2), w2.norm_squared());
    if g.determinant() <= 1e-12 * g[(0, 0)] * g[(1, 1)] {
        return Err(KgError::DegenerateContrast("columns of C are linearly dependent".into()));
    }
    let cov1 = wa.dot(&w1);
    let cov2 = wa.dot(&w2);
    let scale = wa.norm();
    let zero1 = cov1.abs() <= 1e-12 * scale * w1.norm();
    let zero2 = cov2.abs() <= 1e-12 * scale * w2.norm();
    let (c, t, case) = match (zero1, zero2) {
        (true, true) => (c_cols[0].to_vec(), t2[0], TauCase::BothCovariancesZero),
        (true, false) => (c_cols[0].to_vec(), t2[0], TauCase::Column(0)),
        (false, true) => (c_cols[1].to_vec(), t2[1], TauCase::Column(1)),
        (false, false) => {
            let k = cov1 / cov2;
            let c = c_cols[0].iter().zip(c_cols[1]).map(|(u, v)| u - k * v).collect();
            (c, t2[0] - k * t2[1], TauCase::Combined)
        }
    };
    // a in span(C) would leave Θ̂ perfectly correlated with the contrast set
    let resid_a = &wa - (&w1 * cov1.mul_add(g[(1, 1)], -cov2 * g[(0, 1)]) + &w2 * cov2.mul_add(g[(0, 0)], -cov1 * g[(0, 1)])) / g.determinant();
    if resid_a.norm() <= 1e-10 * scale {
        return Err(KgError::DegenerateContrast("a lies in the span of C".into()));
    }
    Ok(OrthogonalTau { c, t, case })
}

/// Rows of the 2³ factorial in standard order with columns
/// `(1, x1, x2, x3, x1x2, x1x3, x2x3)`.
pub fn factorial_2_3_design() -> DMatrix<f64> {
    let mut rows = Vec::with_capacity(8 * 7);
    for i in 0..8 {
        let x1 = if i & 1 == 0 { -1.0 } else { 1.0 };
        let x2 = if i & 2 == 0 { -1.0 } else { 1.0 };
        let x3 = if i & 4 == 0 { -1.0 } else { 1.0 };
        rows.extend_from_slice(&[1.0, x1, x2, x3, x1 * x2, x1 * x3, x2 * x3]);
    }
    DMatrix::from_row_slice(8, 7, &rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example_one_constants() {
        let x = factorial_2_3_design();
        let p = RegressionProblem::new(
            x,
            &[0.0, 0.0, 0.0, -2.0, 0.0, -2.0, 2.0],
            &[0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 1.0],
            0.0,
        )
        .unwrap();
        let k = design_constants(&p).unwrap();
        assert!((k.rho - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(k.m, 1);
        assert!((k.v11 - 1.5).abs() < 1e-12);
        assert!((k.v22 - 0.25).abs() < 1e-12);
    }

    #[test]
    fn singular_and_degenerate_inputs() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        let p = RegressionProblem::new(x, &[1.0, 0.0], &[0.0, 1.0], 0.0).unwrap();
        assert!(matches!(design_constants(&p), Err(KgError::SingularDesign { .. })));
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let p = RegressionProblem::new(x.clone(), &[1.0, 1.0], &[2.0, 2.0], 0.0).unwrap();
        assert!(matches!(design_constants(&p), Err(KgError::DegenerateContrast(_))));
        assert!(RegressionProblem::new(x.clone(), &[1.0], &[0.0, 1.0], 0.0).is_err());
        let square = DMatrix::<f64>::identity(2, 2);
        assert!(RegressionProblem::new(square, &[1.0, 0.0], &[0.0, 1.0], 0.0).is_err());
    }

    #[test]
    fn json_round_trip() {
        let p = RegressionProblem::from_rows(
            &[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]],
            &[1.0, 0.0],
            &[0.0, 1.0],
            0.5,
        )
        .unwrap();
        let s = serde_json::to_string(&p).unwrap();
        let q: RegressionProblem = serde_json::from_str(&s).unwrap();
        assert_eq!(p, q);
    }
}
