//! Independent numerical oracles shared by the integration tests. Nothing
//! here calls into the library's own quadrature or special functions.

#![allow(dead_code)]

use std::f64::consts::PI;

pub fn phi(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub fn big_phi(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Density of `W = √(χ²_m / m)`.
pub fn f_w(w: f64, m: u32) -> f64 {
    if w <= 0.0 {
        return 0.0;
    }
    let m = m as f64;
    let h = 0.5 * m;
    let ln = (2.0f64).ln() + h * h.ln() + (m - 1.0) * w.ln() - h * w * w - libm::lgamma(h);
    ln.exp()
}

fn simpson_step<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Adaptive Simpson on `[a, b]` to absolute tolerance `tol`.
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(&f, a, b, fa, fm, fb, whole, tol, 30)
}

/// `∫₀^∞ f(w) f_W(w) dw` to relative accuracy `rel`, over quarter-unit
/// panels until the density is negligible.
pub fn expect_w<F: Fn(f64) -> f64>(f: F, m: u32, rel: f64) -> f64 {
    // the bulk of W lies within a few multiples of 1/√m of 1
    let upper = 1.0 + 40.0 / (m as f64).sqrt();
    let g = |w: f64| f(w) * f_w(w, m);
    let n = 4000;
    let h = upper / n as f64;
    let coarse: f64 = (0..n)
        .map(|i| {
            let a = i as f64 * h;
            h / 6.0 * (g(a) + 4.0 * g(a + 0.5 * h) + g(a + h))
        })
        .sum();
    let panels = (upper / 0.25).ceil() as usize;
    let ph = upper / panels as f64;
    let tol = rel * coarse.abs() / panels as f64;
    (0..panels)
        .map(|i| simpson(&g, i as f64 * ph, (i + 1) as f64 * ph, tol))
        .sum()
}

/// `t(m)` with `P(|T_m| ≤ t) = 1 − α`, by bisection on a Simpson CDF.
pub fn t_quantile_oracle(m: u32, alpha: f64) -> f64 {
    let mf = m as f64;
    let c = (libm::lgamma(0.5 * (mf + 1.0)) - libm::lgamma(0.5 * mf)).exp() / (mf * PI).sqrt();
    let pdf = |x: f64| c * (1.0 + x * x / mf).powf(-0.5 * (mf + 1.0));
    let central = |t: f64| 2.0 * simpson(pdf, 0.0, t, 1e-13);
    let (mut lo, mut hi) = (0.0, 1.0);
    while central(hi) < 1.0 - alpha {
        hi *= 2.0;
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if central(mid) < 1.0 - alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Dense inverse by Gauss–Jordan elimination with partial pivoting.
pub fn gauss_jordan_inverse(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap())
            .unwrap();
        m.swap(col, piv);
        let p = m[col][col];
        for v in m[col].iter_mut() {
            *v /= p;
        }
        for r in 0..n {
            if r != col {
                let f = m[r][col];
                if f != 0.0 {
                    for k in 0..2 * n {
                        m[r][k] -= f * m[col][k];
                    }
                }
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

pub fn gram(x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let p = x[0].len();
    (0..p)
        .map(|i| (0..p).map(|j| x.iter().map(|r| r[i] * r[j]).sum()).collect())
        .collect()
}

pub fn quad_form(a: &[f64], m: &[Vec<f64>], b: &[f64]) -> f64 {
    a.iter()
        .enumerate()
        .map(|(i, ai)| ai * m[i].iter().zip(b).map(|(mij, bj)| mij * bj).sum::<f64>())
        .sum()
}

pub fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|r| r.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

/// Rows of the 2³ factorial, columns `(1, x1, x2, x3, x1x2, x1x3, x2x3)`.
pub fn factorial_rows() -> Vec<Vec<f64>> {
    (0..8)
        .map(|i| {
            let s = |bit: usize| if i & bit == 0 { -1.0 } else { 1.0 };
            let (x1, x2, x3) = (s(1), s(2), s(4));
            vec![1.0, x1, x2, x3, x1 * x2, x1 * x3, x2 * x3]
        })
        .collect()
}

pub const EXAMPLE1_A: [f64; 7] = [0.0, 0.0, 0.0, -2.0, 0.0, -2.0, 2.0];
pub const EXAMPLE1_C: [f64; 7] = [0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 1.0];
pub const RHO_EXAMPLE1: f64 = 0.816496;
pub const KNOTS_B: [f64; 8] = [0.0, 15.0, 18.0, 21.0, 24.0, 27.0, 30.0, 40.0];
pub const KNOTS_S: [f64; 8] = [0.0, 2.0, 4.0, 6.0, 8.0, 10.0, 25.0, 40.0];

/// The Example 1 family as computed by the optimizer, stored as a fixture.
pub fn example1_family() -> kgci_core::spline::IntervalFamily {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/example1_family.json");
    let text = std::fs::read_to_string(path).expect("fixture present");
    serde_json::from_str(&text).expect("fixture parses")
}
