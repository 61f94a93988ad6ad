use kgci_core::optimizer::*;
use kgci_core::performance::{criterion_a, max_sel, min_coverage, sel, uniform_gamma_grid, QuadSettings};
use kgci_core::spline::IntervalShape;

fn small(m: u32, rho: f64) -> OptimizationConfig {
    let k = [0.0, 2.0, 4.0, 6.0];
    OptimizationConfig {
        multistart_count: 1,
        seed: 7,
        ..OptimizationConfig::criterion(0.05, 0.15, 6.0, &k, &k, m, rho)
    }
}

#[test]
fn criterion_mode_improves_on_standard_interval() {
    let cfg = small(5, 0.5);
    let r = optimize(&cfg).unwrap();
    assert!(r.feasible && r.converged);
    assert!(r.criterion_value < 0.0);
    assert!((criterion_a(&r.family, 0.15).unwrap() - r.criterion_value).abs() < 1e-12);

    let q = QuadSettings::default();
    assert!((sel(0.0, &r.family, &q).unwrap() - r.sel0).abs() < 1e-9);
    let mc = min_coverage(&r.family, 0.5, &q, &uniform_gamma_grid(20.0, 0.05)).unwrap();
    assert!(mc.value >= 0.95 - cfg.coverage_tolerance - 1e-6, "{}", mc.value);
    assert!((mc.value - r.min_coverage_achieved).abs() < 1e-5);
    assert!(r.sel0 < 1.0);
    assert!(r.shape.s_unimodal);
    assert_eq!(r.starts.len(), 1);
    assert!(r.starts.iter().all(|s| s.criterion_value >= r.criterion_value - 1e-12 || !s.feasible));

    // deterministic for a fixed seed
    assert_eq!(optimize(&cfg).unwrap(), r);
}

#[test]
fn frozen_b_requires_uncorrelated_contrast() {
    assert!(optimize_b_zero(&small(1, 0.3)).is_err());
    // for larger m the standard interval is a stationary point of the
    // search and a single start does not leave it
    let r = optimize_b_zero(&small(1, 0.0)).unwrap();
    assert!(r.family.values_b().iter().all(|&v| v == 0.0));
    assert!(r.family.b_is_zero() || r.family.b(1.0) == 0.0);
    assert!(r.feasible);
    assert!(r.sel0 < 0.9);
}

#[test]
fn bounded_length_mode_respects_bound() {
    let k = [0.0, 2.0, 4.0, 6.0];
    let cfg = OptimizationConfig {
        multistart_count: 1,
        ..OptimizationConfig::bounded_length(0.05, 1.05, 6.0, &k, &k, 5, 0.0)
    };
    let r = optimize(&cfg).unwrap();
    assert!(r.feasible);
    let (_, emax) = max_sel(&r.family, &QuadSettings::default(), 30.0).unwrap();
    assert!(emax <= 1.05 + 1e-4, "{emax}");
    assert!(r.sel0 < 1.0);
    assert!((r.criterion_value - (r.sel0 - 1.0)).abs() < 1e-9);
}

#[test]
fn config_validation_and_serde() {
    let cfg = small(5, 0.2);
    let text = serde_json::to_string(&cfg).unwrap();
    let back: OptimizationConfig = serde_json::from_str(&text).unwrap();
    assert_eq!(back, cfg);
    let unknown = text.replacen('{', "{\"xii\": 1.0,", 1);
    assert!(serde_json::from_str::<OptimizationConfig>(&unknown).is_err());

    let both = OptimizationConfig { ell: Some(1.1), ..small(5, 0.2) };
    assert!(both.validate().is_err());
    assert!(OptimizationConfig { rho: 1.0, ..small(5, 0.2) }.validate().is_err());
    assert!(OptimizationConfig { multistart_count: 0, ..small(5, 0.2) }.validate().is_err());
    assert!(OptimizationConfig { knots_s: vec![0.0, 3.0], ..small(5, 0.2) }.validate().is_err());
    assert!(optimize(&both).is_err());
}
