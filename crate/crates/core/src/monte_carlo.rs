//! Simulation of interval procedures in pivotal units.
//!
//! Draws `H = γ + Z₁`, `G = ρZ₁ + √(1−ρ²)Z₂` and `W = √(χ²_m/m)`. An
//! interval `[Θ̂ − √v11 σ̂ (c + h), Θ̂ − √v11 σ̂ (c − h)]` misses `θ` from
//! below (θ under the interval) when `G > W(c + h)`, from above when
//! `G < W(c − h)`. Replicates are split into blocks, each with its own
//! ChaCha stream, so results depend only on the seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{KgError, Result};
use crate::special::{e_w, t_quantile};
use crate::spline::{IntervalFamily, IntervalShape};

const BLOCK: u64 = 1 << 16;

/// The interval being simulated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Procedure {
    Standard,
    /// Preliminary t test of `τ = 0` at level `test_size`; on acceptance the
    /// interval is computed from the constrained fit.
    Naive { test_size: f64 },
    Kg { family: IntervalFamily },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub procedure: Procedure,
    pub gamma: f64,
    pub rho: f64,
    pub m: u32,
    pub alpha: f64,
    pub reps: u64,
    pub seed: u64,
}

/// Proportions with binomial standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub gamma: f64,
    pub reps: u64,
    pub covered: u64,
    pub lower_miss: u64,
    pub upper_miss: u64,
    pub coverage_hat: f64,
    pub se_coverage: f64,
    /// Mean length relative to the expected length of the standard interval.
    pub mean_length_ratio_hat: f64,
    pub se_length_ratio: f64,
    pub lower_miss_rate: f64,
    pub se_lower: f64,
    pub upper_miss_rate: f64,
    pub se_upper: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Tally {
    covered: u64,
    lower: u64,
    upper: u64,
    len_sum: f64,
    len_sq: f64,
}

impl Tally {
    fn merge(mut self, o: Tally) -> Tally {
        self.covered += o.covered;
        self.lower += o.lower;
        self.upper += o.upper;
        self.len_sum += o.len_sum;
        self.len_sq += o.len_sq;
        self
    }
}

/// Centre and half-width in pivotal units (multiples of `σ√v11`) for one
/// draw of `(H, W)`.
enum Rule<'a> {
    Standard { t: f64 },
    Naive { crit: f64, t: f64, t_next: f64, rho: f64, m: f64 },
    Kg { family: &'a IntervalFamily },
}

impl Rule<'_> {
    #[inline]
    fn interval(&self, h: f64, w: f64) -> (f64, f64) {
        match *self {
            Rule::Standard { t } => (0.0, w * t),
            Rule::Naive { crit, t, t_next, rho, m } => {
                if h.abs() > crit * w {
                    (0.0, w * t)
                } else {
                    let scale = ((m * w * w + h * h) / (m + 1.0)).sqrt();
                    (rho * h, t_next * (1.0 - rho * rho).sqrt() * scale)
                }
            }
            Rule::Kg { family } => {
                let x = h / w;
                (w * family.b(x), w * family.s(x.abs()))
            }
        }
    }
}

fn validate(spec: &SimulationSpec) -> Result<()> {
    if !(spec.rho.abs() < 1.0) {
        return Err(KgError::InvalidArgument(format!("rho = {} must lie in (-1, 1)", spec.rho)));
    }
    if spec.m == 0 || !(spec.alpha > 0.0 && spec.alpha < 1.0) || spec.reps == 0 || !spec.gamma.is_finite() {
        return Err(KgError::InvalidArgument("need m ≥ 1, α ∈ (0,1), reps ≥ 1, finite γ".into()));
    }
    match &spec.procedure {
        Procedure::Kg { family } if family.m() != spec.m || (family.alpha() - spec.alpha).abs() > 1e-15 => {
            Err(KgError::DimensionMismatch("family m/alpha differ from the simulation's".into()))
        }
        Procedure::Naive { test_size } if !(*test_size > 0.0 && *test_size < 1.0) => {
            Err(KgError::InvalidArgument(format!("test_size = {test_size} outside (0, 1)")))
        }
        _ => Ok(()),
    }
}

/// Simulates `spec.reps` replicates.
pub fn simulate(spec: &SimulationSpec) -> Result<SimulationReport> {
    validate(spec)?;
    let t = t_quantile(spec.m, spec.alpha);
    let rule = match &spec.procedure {
        Procedure::Standard => Rule::Standard { t },
        Procedure::Naive { test_size } => Rule::Naive {
            crit: t_quantile(spec.m, *test_size),
            t,
            t_next: t_quantile(spec.m + 1, spec.alpha),
            rho: spec.rho,
            m: spec.m as f64,
        },
        Procedure::Kg { family } => Rule::Kg { family },
    };
    let chi = ChiSquared::new(spec.m as f64).expect("m ≥ 1");
    let r = (1.0 - spec.rho * spec.rho).sqrt();
    let m = spec.m as f64;
    let blocks = spec.reps.div_ceil(BLOCK);
    let tally = (0..blocks)
        .into_par_iter()
        .map(|blk| {
            let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
            rng.set_stream(blk);
            let n = BLOCK.min(spec.reps - blk * BLOCK);
            let mut tl = Tally::default();
            for _ in 0..n {
                let z1: f64 = rng.sample(StandardNormal);
                let z2: f64 = rng.sample(StandardNormal);
                let w = (chi.sample(&mut rng) / m).sqrt();
                let h = spec.gamma + z1;
                let g = spec.rho * z1 + r * z2;
                let (c, hw) = rule.interval(h, w);
                if g > c + hw {
                    tl.lower += 1;
                } else if g < c - hw {
                    tl.upper += 1;
                } else {
                    tl.covered += 1;
                }
                tl.len_sum += hw;
                tl.len_sq += hw * hw;
            }
            tl
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(Tally::default(), Tally::merge);

    let n = spec.reps as f64;
    let prop = |k: u64| {
        let p = k as f64 / n;
        (p, (p * (1.0 - p) / n).sqrt())
    };
    let (coverage_hat, se_coverage) = prop(tally.covered);
    let (lower_miss_rate, se_lower) = prop(tally.lower);
    let (upper_miss_rate, se_upper) = prop(tally.upper);
    let denom = t * e_w(spec.m);
    let mean = tally.len_sum / n;
    let var = (tally.len_sq / n - mean * mean).max(0.0) * n / (n - 1.0).max(1.0);
    Ok(SimulationReport {
        gamma: spec.gamma,
        reps: spec.reps,
        covered: tally.covered,
        lower_miss: tally.lower,
        upper_miss: tally.upper,
        coverage_hat,
        se_coverage,
        mean_length_ratio_hat: mean / denom,
        se_length_ratio: (var / n).sqrt() / denom,
        lower_miss_rate,
        se_lower,
        upper_miss_rate,
        se_upper,
    })
}

/// [`simulate`] at each γ, with the seed offset by the grid index.
pub fn sweep(base: &SimulationSpec, gammas: &[f64]) -> Result<Vec<SimulationReport>> {
    gammas
        .iter()
        .enumerate()
        .map(|(i, &g)| {
            simulate(&SimulationSpec {
                gamma: g,
                seed: base.seed.wrapping_add(i as u64),
                ..base.clone()
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(procedure: Procedure, gamma: f64) -> SimulationSpec {
        SimulationSpec {
            procedure,
            gamma,
            rho: 0.6,
            m: 3,
            alpha: 0.05,
            reps: 200_000,
            seed: 11,
        }
    }

    #[test]
    fn counts_partition_and_standard_is_exact() {
        let r = simulate(&spec(Procedure::Standard, 1.3)).unwrap();
        assert_eq!(r.covered + r.lower_miss + r.upper_miss, r.reps);
        assert!((r.coverage_hat - 0.95).abs() < 4.0 * r.se_coverage);
        assert!((r.mean_length_ratio_hat - 1.0).abs() < 4.0 * r.se_length_ratio);
    }

    #[test]
    fn reproducible_for_fixed_seed() {
        let s = spec(Procedure::Naive { test_size: 0.05 }, 0.5);
        assert_eq!(simulate(&s).unwrap(), simulate(&s).unwrap());
        let other = SimulationSpec { seed: 12, ..s.clone() };
        assert_ne!(simulate(&s).unwrap().covered, simulate(&other).unwrap().covered);
    }

    #[test]
    fn rejects_bad_specs() {
        let mut s = spec(Procedure::Standard, 0.0);
        s.rho = 1.0;
        assert!(simulate(&s).is_err());
        let s = spec(Procedure::Naive { test_size: 0.0 }, 0.0);
        assert!(simulate(&s).is_err());
    }
}
