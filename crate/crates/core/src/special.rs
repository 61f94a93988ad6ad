//! Probability kernels, quantiles and quadrature rules.
//!
//! Everything downstream integrates against the density of `W = σ̂/σ`,
//! which is distributed as `sqrt(Q/m)` with `Q ~ χ²_m`. The two closed-form
//! moment identities [`lemma1`] and [`lemma2`] collapse the `w`-integrals
//! that appear in the length criterion and in the `m → ∞` bound.

use std::f64::consts::{FRAC_1_SQRT_2, LN_2, PI};

use serde::{Deserialize, Serialize};

use crate::roots::bisect;

/// 1/√(2π)
pub const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Half-width (in standard deviations) beyond which Gaussian kernels are
/// treated as zero.
pub const GAUSS_TRUNCATION: f64 = 8.5;

#[inline]
pub fn normal_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail `1 − Φ(x)` without cancellation.
#[inline]
pub fn normal_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x * FRAC_1_SQRT_2)
}

/// `Φ(hi) − Φ(lo)` evaluated on whichever side of zero keeps full
/// precision.
#[inline]
pub fn normal_prob_between(lo: f64, hi: f64) -> f64 {
    if lo >= 0.0 {
        normal_sf(lo) - normal_sf(hi)
    } else if hi <= 0.0 {
        normal_cdf(hi) - normal_cdf(lo)
    } else {
        1.0 - normal_cdf(lo) - normal_sf(hi)
    }
}

/// Inverse of the standard normal CDF (Wichura's AS 241, PPND16).
pub fn normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q
            * (((((((r * 2509.080_928_730_122_7 + 33430.575_583_588_128) * r
                + 67265.770_927_008_700_853)
                * r
                + 45921.953_931_549_871_457)
                * r
                + 13731.693_765_509_461_125)
                * r
                + 1971.590_950_306_551_442_7)
                * r
                + 133.141_667_891_784_377_21)
                * r
                + 3.387_132_872_796_366_608)
            / (((((((r * 5226.495_278_852_545_925 + 28729.085_735_721_942_674) * r
                + 39307.895_800_092_710_61)
                * r
                + 21213.794_301_586_595_867)
                * r
                + 5394.196_021_424_751_077_1)
                * r
                + 687.187_007_492_057_908_95)
                * r
                + 42.313_330_701_600_911_252)
                * r
                + 1.0);
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        (((((((r * 7.745_450_142_783_414_076_4e-4 + 0.022_723_844_989_269_184_583) * r
            + 0.241_780_725_177_450_611_77)
            * r
            + 1.270_458_252_452_368_382_58)
            * r
            + 3.647_848_324_763_204_605_04)
            * r
            + 5.769_497_221_460_691_405_5)
            * r
            + 4.630_337_846_156_545_295_9)
            * r
            + 1.423_437_110_749_683_577_34)
            / (((((((r * 1.050_750_071_644_416_843_24e-9 + 5.475_938_084_995_344_946e-4)
                * r
                + 0.015_198_666_563_616_457_2)
                * r
                + 0.148_103_976_427_480_074_59)
                * r
                + 0.689_767_334_985_100_004_55)
                * r
                + 1.676_384_830_183_803_849_4)
                * r
                + 2.053_191_626_637_758_821_87)
                * r
                + 1.0)
    } else {
        r -= 5.0;
        (((((((r * 2.010_334_399_292_288_132_65e-7 + 2.711_555_568_743_487_578_15e-5) * r
            + 0.001_242_660_947_388_078_438_6)
            * r
            + 0.026_532_189_526_576_123_093)
            * r
            + 0.296_560_571_828_504_891_23)
            * r
            + 1.784_826_539_917_291_335_8)
            * r
            + 5.463_784_911_164_114_369_9)
            * r
            + 6.657_904_643_501_103_777_2)
            / (((((((r * 2.044_263_103_389_939_785_64e-15 + 1.421_511_758_316_445_887_8e-7)
                * r
                + 1.846_318_317_510_054_681_8e-5)
                * r
                + 7.868_691_311_456_132_591e-4)
                * r
                + 0.014_875_361_290_850_614_852)
                * r
                + 0.136_929_880_922_735_805_31)
                * r
                + 0.599_832_206_555_887_937_69)
                * r
                + 1.0)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

#[inline]
pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

const CF_EPS: f64 = 1e-14;
const CF_TINY: f64 = 1e-300;
const CF_MAX_ITER: usize = 10_000;

/// Regularized incomplete beta function `I_x(a, b)`.
pub fn reg_inc_beta(a: f64, b: f64, x: f64) -> f64 {
    reg_inc_beta_split(a, b, x, 1.0 - x)
}

/// `I_x(a, b)` with `y = 1 − x` supplied by the caller, for arguments
/// where `1 − x` would round away.
pub fn reg_inc_beta_split(a: f64, b: f64, x: f64, y: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if y <= 0.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * y.ln();
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_cf(a, b, x) / a
    } else {
        1.0 - ln_front.exp() * beta_cf(b, a, y) / b
    }
}

// Modified Lentz evaluation of the incomplete-beta continued fraction.
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < CF_TINY {
        d = CF_TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < CF_TINY {
            d = CF_TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < CF_TINY {
            c = CF_TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < CF_TINY {
            d = CF_TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < CF_TINY {
            c = CF_TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < CF_EPS {
            break;
        }
    }
    h
}

/// Regularized lower incomplete gamma `P(a, x)`.
pub fn reg_lower_gamma(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x < a + 1.0 {
        gamma_series(a, x)
    } else {
        1.0 - gamma_cf(a, x)
    }
}

/// Regularized upper incomplete gamma `Q(a, x) = 1 − P(a, x)`.
pub fn reg_upper_gamma(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < a + 1.0 {
        1.0 - gamma_series(a, x)
    } else {
        gamma_cf(a, x)
    }
}

fn gamma_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut sum = 1.0 / a;
    let mut del = sum;
    for _ in 0..CF_MAX_ITER {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if del.abs() < sum.abs() * CF_EPS {
            break;
        }
    }
    sum * (-x + a * x.ln() - ln_gamma(a)).exp()
}

fn gamma_cf(a: f64, x: f64) -> f64 {
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / CF_TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..CF_MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < CF_TINY {
            d = CF_TINY;
        }
        c = b + an / c;
        if c.abs() < CF_TINY {
            c = CF_TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < CF_EPS {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

/// Two-sided tail `P(|T| > t)` for `T ~ t_m`.
pub fn t_two_sided_tail(t: f64, m: u32) -> f64 {
    let t = t.abs();
    let m = m as f64;
    let denom = m + t * t;
    reg_inc_beta_split(0.5 * m, 0.5, m / denom, t * t / denom)
}

/// CDF of Student's t with `m` degrees of freedom.
pub fn t_cdf(t: f64, m: u32) -> f64 {
    let tail = 0.5 * t_two_sided_tail(t, m);
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// The quantile `t(m)` with `P(−t(m) ≤ T ≤ t(m)) = 1 − alpha`, `T ~ t_m`,
/// found by bisection on the two-sided tail probability.
pub fn t_quantile(m: u32, alpha: f64) -> f64 {
    assert!(m >= 1, "t_quantile needs m >= 1");
    assert!(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
    let mut hi = 2.0;
    while t_two_sided_tail(hi, m) > alpha {
        hi *= 2.0;
    }
    bisect(|t| t_two_sided_tail(t, m) - alpha, 0.0, hi, 0.0, 2000).expect("bracketed by construction")
}

pub fn chi2_cdf(x: f64, m: u32) -> f64 {
    reg_lower_gamma(0.5 * m as f64, 0.5 * x)
}

pub fn chi2_sf(x: f64, m: u32) -> f64 {
    reg_upper_gamma(0.5 * m as f64, 0.5 * x)
}

/// Lower-tail χ² quantile. Bisection in `ln x` so that tiny tail masses are
/// resolved in relative terms.
pub fn chi2_quantile(p: f64, m: u32) -> f64 {
    chi2_quantile_by(|x| chi2_cdf(x, m) - p, m)
}

/// `x` with `P(χ²_m > x) = q`.
pub fn chi2_quantile_upper(q: f64, m: u32) -> f64 {
    chi2_quantile_by(|x| q - chi2_sf(x, m), m)
}

fn chi2_quantile_by<F: Fn(f64) -> f64>(g: F, m: u32) -> f64 {
    let mut hi = (m as f64).max(1.0);
    while g(hi) < 0.0 {
        hi *= 2.0;
    }
    let mut lo = hi;
    while g(lo) > 0.0 && lo > 1e-300 {
        lo *= 1e-4;
    }
    let u = bisect(|u: f64| g(u.exp()), lo.ln(), hi.ln(), 1e-15, 400).expect("bracketed by construction");
    u.exp()
}

/// Distribution of `W = σ̂/σ`, i.e. `sqrt(Q/m)` with `Q ~ χ²_m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiScaleDistribution {
    pub m: u32,
}

impl ChiScaleDistribution {
    pub fn new(m: u32) -> Self {
        assert!(m >= 1, "degrees of freedom must be positive");
        Self { m }
    }

    /// `f_W(w) = 2 m w f_{χ²_m}(m w²)`.
    pub fn pdf(&self, w: f64) -> f64 {
        if w <= 0.0 {
            return 0.0;
        }
        let m = self.m as f64;
        let half = 0.5 * m;
        let q = m * w * w;
        let ln_f = LN_2 + m.ln() + w.ln() + (half - 1.0) * q.ln() - 0.5 * q - half * LN_2 - ln_gamma(half);
        ln_f.exp()
    }

    pub fn cdf(&self, w: f64) -> f64 {
        if w <= 0.0 {
            0.0
        } else {
            chi2_cdf(self.m as f64 * w * w, self.m)
        }
    }

    pub fn mean(&self) -> f64 {
        e_w(self.m)
    }
}

/// `E(W) = sqrt(2/m) Γ((m+1)/2) / Γ(m/2)`.
pub fn e_w(m: u32) -> f64 {
    assert!(m >= 1);
    let mf = m as f64;
    let ratio = if m <= 300 {
        libm::tgamma(0.5 * (mf + 1.0)) / libm::tgamma(0.5 * mf)
    } else {
        (ln_gamma(0.5 * (mf + 1.0)) - ln_gamma(0.5 * mf)).exp()
    };
    (2.0 / mf).sqrt() * ratio
}

/// `∫₀^∞ φ(wx) w² f_W(w) dw = (1/√(2π)) (m/(x²+m))^{m/2+1}`.
pub fn lemma1(x: f64, m: u32) -> f64 {
    let m = m as f64;
    FRAC_1_SQRT_2PI * (m / (x * x + m)).powf(0.5 * m + 1.0)
}

/// `∫₀^∞ φ(t w) φ(w x) w² f_W(w) dw = (1/(2π)) (m/(t²+x²+m))^{m/2+1}`.
pub fn lemma2(t: f64, x: f64, m: u32) -> f64 {
    let m = m as f64;
    (m / (t * t + x * x + m)).powf(0.5 * m + 1.0) / (2.0 * PI)
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(order: usize) -> Self {
        assert!(order >= 1);
        let n = order;
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n.div_ceil(2) {
            let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, z);
                dp = d;
                let dz = p / d;
                z -= dz;
                if dz.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, z);
            dp = if d != 0.0 { d } else { dp };
            let w = 2.0 / ((1.0 - z * z) * dp * dp);
            nodes[i] = -z;
            nodes[n - 1 - i] = z;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// Calls `f(node, weight)` for the rule mapped onto `[a, b]`.
    #[inline]
    pub fn for_each_on<F: FnMut(f64, f64)>(&self, a: f64, b: f64, mut f: F) {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        for (z, w) in self.nodes.iter().zip(&self.weights) {
            f(mid + half * z, half * w);
        }
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let mut acc = 0.0;
        self.for_each_on(a, b, |x, w| acc += w * f(x));
        acc
    }
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// A composite quadrature rule over `[lower, upper]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub lower: f64,
    pub upper: f64,
    /// Panel boundaries, including both ends.
    pub breakpoints: Vec<f64>,
}

impl QuadratureRule {
    /// Gauss–Legendre of the given order on every interval between
    /// consecutive (sorted, deduplicated) breakpoints.
    pub fn from_breakpoints(breakpoints: &[f64], order: usize) -> Self {
        let mut bp: Vec<f64> = breakpoints.to_vec();
        bp.sort_by(|a, b| a.partial_cmp(b).expect("finite breakpoints"));
        bp.dedup_by(|a, b| (*a - *b).abs() <= 1e-15 * (1.0 + b.abs()));
        let gl = GaussLegendre::new(order);
        let mut nodes = Vec::with_capacity(order * bp.len());
        let mut weights = Vec::with_capacity(order * bp.len());
        for pair in bp.windows(2) {
            gl.for_each_on(pair[0], pair[1], |x, w| {
                nodes.push(x);
                weights.push(w);
            });
        }
        Self {
            nodes,
            weights,
            lower: bp[0],
            upper: *bp.last().unwrap(),
            breakpoints: bp,
        }
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Composite Gauss–Legendre rule with `panels` equal panels on `[a, b]`.
pub fn gauss_legendre_panels(a: f64, b: f64, panels: usize, order: usize) -> QuadratureRule {
    assert!(a < b && panels >= 1 && order >= 2);
    let bp: Vec<f64> = (0..=panels)
        .map(|i| if i == panels { b } else { a + (b - a) * i as f64 / panels as f64 })
        .collect();
    QuadratureRule::from_breakpoints(&bp, order)
}

/// Rule for `∫₀^∞ g(w) f_W(w) dw`: truncated support carrying all but `eps`
/// of the mass of `W`, 24 panels of order 16.
pub fn w_quadrature(m: u32, eps: f64) -> QuadratureRule {
    w_quadrature_with(m, eps, 24, 16)
}

/// As [`w_quadrature`] with explicit panel count and order. The weights
/// returned are plain Lebesgue weights; callers multiply by `f_W`.
pub fn w_quadrature_with(m: u32, eps: f64, panels: usize, order: usize) -> QuadratureRule {
    assert!(eps > 0.0 && eps < 1.0);
    let (lo, hi) = w_support(m, eps);
    let width = hi - lo;
    let mut bp: Vec<f64> = (0..=panels)
        .map(|i| if i == panels { hi } else { lo + width * i as f64 / panels as f64 })
        .collect();
    // extra boundary close to the lower end, where the χ density has
    // its steepest relative change for small m
    bp.push(lo + 0.25 * width / panels as f64);
    QuadratureRule::from_breakpoints(&bp, order)
}

/// Support `[w_lo, w_hi]` of `W` carrying mass `1 − eps` (`eps/2` per tail).
pub fn w_support(m: u32, eps: f64) -> (f64, f64) {
    let mf = m as f64;
    let lo = (chi2_quantile(0.5 * eps, m) / mf).sqrt();
    let hi = (chi2_quantile_upper(0.5 * eps, m) / mf).sqrt();
    (lo, hi)
}
