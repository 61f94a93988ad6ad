//! Lower bound on the achievable `e(0; s)` when `ρ = 0`.
//!
//! `λ(m)` weights the two risks of a compromise problem whose minimiser,
//! `s_λ(x) = √(1 + x²/m) t(m)` on `[0, d)`, has coverage at least `1 − α`
//! everywhere. Its excess coverage at `γ = 0` is `ν_m`, and no `s` meeting
//! the coverage constraint has `e(0; s) < 1 − η_m`, `η_m = ν_m(1−λ)/λ`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{KgError, Result};
use crate::performance::{coverage, QuadSettings};
use crate::roots::bisect;
use crate::special::{e_w, t_quantile};
use crate::spline::IntervalShape;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundResult {
    pub m: u32,
    pub alpha: f64,
    pub d: f64,
    pub lambda_m: f64,
    pub nu_m: f64,
    pub eta_m: f64,
    pub lower_bound: f64,
}

/// Left side of the equation defining `λ(m)`, extended by `0` where the
/// inner root is undefined.
pub fn lambda_equation_lhs(lambda: f64, m: u32, alpha: f64) -> f64 {
    let t = t_quantile(m, alpha);
    let mf = m as f64;
    let base = (2.0 / PI).sqrt() * (1.0 - lambda) * t * e_w(m) / lambda;
    let inner = base.powf(1.0 / (mf / 2.0 + 1.0)) - 1.0;
    mf.sqrt() * inner.max(0.0).sqrt()
}

/// `λ(m) ∈ (0, 1)`, by bisection. The left side decreases from `+∞` at
/// `λ → 0` to `0` at `λ → 1`.
pub fn lambda_m(m: u32, alpha: f64) -> Result<f64> {
    check(m, alpha)?;
    let t = t_quantile(m, alpha);
    let f = |l: f64| lambda_equation_lhs(l, m, alpha) - t;
    let (lo, hi) = (1e-300, 1.0 - 1e-16);
    if !(f(lo) > 0.0 && f(hi) < 0.0) {
        return Err(KgError::RootNotBracketed { lo, hi });
    }
    bisect(f, lo, hi, 1e-16, 200)
}

/// `s_{λ(m)}` as an interval shape with `b ≡ 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SLambda {
    m: u32,
    alpha: f64,
    d: f64,
    t: f64,
}

impl SLambda {
    pub fn new(m: u32, alpha: f64, d: f64) -> Result<Self> {
        check(m, alpha)?;
        if !(d > 0.0 && d.is_finite()) {
            return Err(KgError::InvalidArgument(format!("d = {d} must be positive")));
        }
        Ok(Self {
            m,
            alpha,
            d,
            t: t_quantile(m, alpha),
        })
    }
}

impl IntervalShape for SLambda {
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
        self.t
    }
    fn b(&self, _x: f64) -> f64 {
        0.0
    }
    fn s(&self, x: f64) -> f64 {
        s_lambda(x, self.m, self.t, self.d)
    }
    fn breakpoints(&self) -> Vec<f64> {
        vec![0.0, self.d]
    }
    fn b_is_zero(&self) -> bool {
        true
    }
}

fn s_lambda(x: f64, m: u32, t: f64, d: f64) -> f64 {
    let x = x.abs();
    if x < d {
        (1.0 + x * x / m as f64).sqrt() * t
    } else {
        t
    }
}

/// `s_{λ(m)}(x)`.
pub fn s_lambda_value(x: f64, m: u32, alpha: f64, d: f64) -> f64 {
    s_lambda(x, m, t_quantile(m, alpha), d)
}

/// `λ(m)`, `ν_m` and the bound `1 − η_m` on `inf e(0; s)`.
pub fn theorem3_bound(m: u32, alpha: f64, d: f64, quad: &QuadSettings) -> Result<BoundResult> {
    let shape = SLambda::new(m, alpha, d)?;
    let lambda = lambda_m(m, alpha)?;
    let nu = coverage(0.0, &shape, 0.0, quad)? - (1.0 - alpha);
    let eta = nu * (1.0 - lambda) / lambda;
    Ok(BoundResult {
        m,
        alpha,
        d,
        lambda_m: lambda,
        nu_m: nu,
        eta_m: eta,
        lower_bound: 1.0 - eta,
    })
}

/// [`theorem3_bound`] for each `m`.
pub fn bound_sweep(ms: &[u32], alpha: f64, d: f64, quad: &QuadSettings) -> Result<Vec<BoundResult>> {
    use rayon::prelude::*;
    ms.par_iter().map(|&m| theorem3_bound(m, alpha, d, quad)).collect()
}

fn check(m: u32, alpha: f64) -> Result<()> {
    if m == 0 || !(alpha > 0.0 && alpha < 0.5) {
        return Err(KgError::InvalidArgument(format!("need m ≥ 1 and α ∈ (0, 0.5), got m = {m}, α = {alpha}")));
    }
    Ok(())
}
