use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::Result;
use crate::family::{check_capacity, check_growth, check_larger, CapacityReport, GrowthCheck, LargerReport, ModelFamily};
use crate::instances::DesignOperator;
use crate::rng::substream;

pub const GROWTH_BETA: f64 = 2.0;
pub const CAPACITY_T_MAX: usize = 200;
pub const PYTHAGOREAN_TOL: f64 = 1e-10;

#[derive(Clone, Debug, Serialize)]
pub struct FamilyCheck {
    pub family: &'static str,
    pub larger: LargerReport,
    pub capacity: CapacityReport,
    pub growth: Vec<GrowthCheck>,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct TheoryReport {
    pub families: Vec<FamilyCheck>,
    pub pythagorean_trials: usize,
    pub pythagorean_max_residual: f64,
    pub pythagorean_passed: bool,
}

impl TheoryReport {
    pub fn passed(&self) -> bool {
        self.pythagorean_passed && self.families.iter().all(|f| f.passed)
    }
}

/// Relative residuals of `||Y - XQ||^2 = ||Y - PY||^2 + ||PY - XQ||^2` on
/// random Gaussian `(X, Y, Q)` with `P` the projection onto the span of `X`.
pub fn pythagorean_residuals(trials: usize, seed: u64) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(trials);
    for t in 0..trials {
        let mut rng = substream(seed, &[t as u64]);
        let n = 5 + t % 20;
        let p = 1 + t % n.min(8);
        let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
        let x = DMatrix::from_fn(n, p, |_, _| normal());
        let y: Vec<f64> = (0..n).map(|_| normal()).collect();
        let q: Vec<f64> = (0..p).map(|_| normal()).collect();
        let design = DesignOperator::new(x, || format!("trial {t}"))?;
        let yv = DVector::from_column_slice(&y);
        let xq = design.apply(&q)?;
        let py = design.project(&y)?;
        let lhs = (&yv - &xq).norm_squared();
        let rhs = (&yv - &py).norm_squared() + (&py - &xq).norm_squared();
        out.push((lhs - rhs).abs() / lhs.max(1.0));
    }
    Ok(out)
}

/// Growth sums at `beta = 2`, `alpha = 1..=20`, the capacity count up to
/// `t = 200`, the larger condition, and the Pythagorean suite.
pub fn theory_checks(families: &[ModelFamily], seed: u64) -> Result<TheoryReport> {
    let alphas: Vec<f64> = (1..=20).map(f64::from).collect();
    let mut checks = Vec::with_capacity(families.len());
    for fam in families {
        let larger = check_larger(fam);
        let capacity = check_capacity(fam, CAPACITY_T_MAX)?;
        let growth = check_growth(fam, GROWTH_BETA, &alphas);
        let passed = larger.passed() && capacity.passed() && growth.iter().all(|g| g.passed);
        checks.push(FamilyCheck { family: fam.kind().name(), larger, capacity, growth, passed });
    }
    let trials = 100;
    let residuals = pythagorean_residuals(trials, seed)?;
    let worst = residuals.iter().copied().fold(0.0, f64::max);
    Ok(TheoryReport {
        families: checks,
        pythagorean_trials: trials,
        pythagorean_max_residual: worst,
        pythagorean_passed: worst < PYTHAGOREAN_TOL,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::shipped_families;

    #[test]
    fn shipped_families_pass() {
        let r = theory_checks(&shipped_families(), 1).unwrap();
        for f in &r.families {
            assert!(f.passed, "{} failed: {:?}", f.family, f);
        }
        assert!(r.pythagorean_max_residual < PYTHAGOREAN_TOL);
        assert!(r.passed());
    }

    #[test]
    fn sbm_growth_sums() {
        let g = check_growth(&ModelFamily::sbm(30), 2.0, &(1..=20).map(f64::from).collect::<Vec<_>>());
        assert_eq!(g.len(), 20);
        assert!(g.iter().all(|c| c.passed));
    }
}
