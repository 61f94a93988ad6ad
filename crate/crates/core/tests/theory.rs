mod common;

use common::*;
use kgci_core::performance::{coverage, QuadSettings};
use kgci_core::roots::illinois;
use kgci_core::theory_bounds::*;
use std::f64::consts::PI;

/// `E(W) = √(2/m) Γ((m+1)/2) / Γ(m/2)`.
fn e_w_closed(m: u32) -> f64 {
    let mf = m as f64;
    (2.0 / mf).sqrt() * (libm::lgamma(0.5 * (mf + 1.0)) - libm::lgamma(0.5 * mf)).exp()
}

/// `λ(m)` solved in closed form from its defining equation.
fn lambda_closed(m: u32, alpha: f64) -> f64 {
    let t = t_quantile_oracle(m, alpha);
    let mf = m as f64;
    let k = (2.0 / PI).sqrt() * t * e_w_closed(m);
    1.0 / (1.0 + (1.0 + t * t / mf).powf(mf / 2.0 + 1.0) / k)
}

#[test]
fn lambda_matches_closed_form() {
    for m in [1, 2, 3, 5, 10, 30, 100, 200] {
        let got = lambda_m(m, 0.05).unwrap();
        let want = lambda_closed(m, 0.05);
        assert!(((got - want) / want).abs() < 1e-7, "m={m}: {got} vs {want}");
    }
}

#[test]
fn lambda_solves_its_equation_in_unit_interval() {
    for m in 1..=500 {
        let l = lambda_m(m, 0.05).unwrap();
        assert!(l > 0.0 && l < 1.0);
        let t = kgci_core::special::t_quantile(m, 0.05);
        assert!((lambda_equation_lhs(l, m, 0.05) - t).abs() < 1e-10, "m={m}");
    }
}

#[test]
fn lambda_has_interior_limit() {
    let z = 1.959_963_984_540_054_f64;
    let limit = 1.0 / (1.0 + (0.5 * z * z).exp() / ((2.0 / PI).sqrt() * z));
    let l = lambda_m(4096, 0.05).unwrap();
    assert!((l - limit).abs() < 2e-3, "{l} vs {limit}");
    assert!(limit > 0.0 && limit < 1.0);
}

#[test]
fn bisection_and_illinois_agree() {
    for m in [1, 4, 50] {
        let t = kgci_core::special::t_quantile(m, 0.05);
        let f = |l: f64| lambda_equation_lhs(l, m, 0.05) - t;
        let a = illinois(f, 1e-12, 1.0 - 1e-12, 1e-15, 500).unwrap();
        assert!((a - lambda_m(m, 0.05).unwrap()).abs() < 1e-9, "m={m}");
    }
}

/// Derivative of the pointwise criterion in `s`, written with the raw
/// integrals rather than the closed forms.
fn pointwise_derivative(s: f64, x: f64, m: u32, lambda: f64) -> f64 {
    let t = t_quantile_oracle(m, 0.05);
    let a = expect_w(|w| phi(w * x) * w * w, m, 1e-11);
    let b = expect_w(|w| phi(s * w) * phi(w * x) * w * w, m, 1e-11);
    lambda / (2.0 * (1.0 - lambda) * t * e_w_closed(m)) * a - b
}

#[test]
fn s_lambda_satisfies_first_order_condition() {
    for m in [1, 3, 20] {
        let lambda = lambda_m(m, 0.05).unwrap();
        for x in [0.0, 1.0, 3.5] {
            let s = s_lambda_value(x, m, 0.05, 6.0);
            let scale = expect_w(|w| phi(w * x) * w * w, m, 1e-11);
            let r = pointwise_derivative(s, x, m, lambda) / scale;
            assert!(r.abs() < 1e-7, "m={m} x={x}: {r}");
            assert!(pointwise_derivative(0.9 * s, x, m, lambda) < 0.0);
            assert!(pointwise_derivative(1.1 * s, x, m, lambda) > 0.0);
        }
    }
}

#[test]
fn s_lambda_shape() {
    let t = kgci_core::special::t_quantile(4, 0.05);
    assert_eq!(s_lambda_value(0.0, 4, 0.05, 6.0), t);
    assert!((s_lambda_value(2.0, 4, 0.05, 6.0) - 2.0f64.sqrt() * t).abs() < 1e-14);
    assert_eq!(s_lambda_value(6.0, 4, 0.05, 6.0), t);
    assert_eq!(s_lambda_value(-2.0, 4, 0.05, 6.0), s_lambda_value(2.0, 4, 0.05, 6.0));
}

#[test]
fn nu_is_nonnegative_and_below_envelope() {
    let q = QuadSettings::default();
    let d = 6.0;
    for m in 1..=50 {
        let r = theorem3_bound(m, 0.05, d, &q).unwrap();
        assert!(r.nu_m >= -1e-12, "m={m}");
        // a constant s at the largest value of s_λ covers more at γ = 0
        let t = kgci_core::special::t_quantile(m, 0.05);
        let top = ConstS { d, m, k: (1.0 + d * d / m as f64).sqrt() * t };
        let upper = coverage(0.0, &top, 0.0, &q).unwrap() - 0.95;
        assert!(r.nu_m <= upper + 1e-12, "m={m}");
    }
}

#[test]
fn s_lambda_has_coverage_at_least_nominal() {
    let q = QuadSettings::default();
    for m in [1, 2, 10, 200] {
        let shape = SLambda::new(m, 0.05, 6.0).unwrap();
        for g in [0.0, 1.0, 5.0] {
            assert!(coverage(g, &shape, 0.0, &q).unwrap() >= 0.95 - 1e-12);
        }
    }
}

#[test]
fn eta_decreases_to_zero() {
    let q = QuadSettings::default();
    let rs = bound_sweep(&[1, 2, 5, 20, 200], 0.05, 12.0, &q).unwrap();
    assert!(rs.iter().all(|r| r.eta_m > 0.0));
    assert!(rs.windows(2).all(|w| w[1].eta_m < w[0].eta_m));
    assert!(rs.last().unwrap().eta_m < 0.01);
    for r in &rs {
        assert!((r.lower_bound - (1.0 - r.eta_m)).abs() < 1e-15);
        let direct = r.nu_m * (1.0 - r.lambda_m) / r.lambda_m;
        assert!((direct - r.eta_m).abs() < 1e-15);
    }
}

#[test]
fn bound_rejects_bad_arguments() {
    let q = QuadSettings::default();
    assert!(theorem3_bound(0, 0.05, 6.0, &q).is_err());
    assert!(theorem3_bound(3, 0.7, 6.0, &q).is_err());
    assert!(SLambda::new(3, 0.05, -1.0).is_err());
}

struct ConstS {
    d: f64,
    m: u32,
    k: f64,
}

impl kgci_core::spline::IntervalShape for ConstS {
    fn cutoff(&self) -> f64 {
        self.d
    }
    fn m(&self) -> u32 {
        self.m
    }
    fn alpha(&self) -> f64 {
        0.05
    }
    fn t_m(&self) -> f64 {
        kgci_core::special::t_quantile(self.m, 0.05)
    }
    fn b(&self, _: f64) -> f64 {
        0.0
    }
    fn s(&self, x: f64) -> f64 {
        if x.abs() < self.d {
            self.k
        } else {
            self.t_m()
        }
    }
    fn breakpoints(&self) -> Vec<f64> {
        vec![0.0, self.d]
    }
    fn b_is_zero(&self) -> bool {
        true
    }
}
