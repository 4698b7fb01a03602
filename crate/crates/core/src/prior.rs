//! The model-selection prior: complexity-penalized model index, uniform
//! structure, elliptical Laplace parameter.

use std::collections::HashMap;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::family::{ModelFamily, ModelIndex};
use crate::instances::{
    build_design, closure_count, enumerate_structures, is_full_rank, sample_structure, DesignOperator,
    Structure, CLOSURE_ENUMERATION_CAP,
};
use crate::special::{ln_gamma, log_sum_exp, LN_SQRT_PI};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    /// Laplace scale.
    pub lambda: f64,
    /// Strength of the complexity penalty.
    #[serde(rename = "D")]
    pub d: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self { lambda: 1.0, d: 2.0 }
    }
}

impl PriorConfig {
    pub fn new(lambda: f64, d: f64) -> Result<Self> {
        let c = Self { lambda, d };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::config(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.d > 0.0 && self.d.is_finite()) {
            return Err(Error::config(format!("D must be positive, got {}", self.d)));
        }
        Ok(())
    }
}

/// `ln Gamma(ell) - ln Gamma(ell / 2)`.
pub fn log_correction(ell: usize) -> f64 {
    assert!(ell >= 1, "effective dimension must be positive");
    let l = ell as f64;
    ln_gamma(l) - ln_gamma(0.5 * l)
}

/// Unnormalized log prior weight of one structure at index `tau`, after the
/// correction factor has cancelled against the Laplace normalizer:
/// `-D e(tau) - ln |Zbar_tau|`, or `-D eps(tau)` for the two-level family,
/// whose prior weighs structures individually.
pub fn structure_log_prior_weight(
    family: &ModelFamily,
    tau: ModelIndex,
    log_closure: f64,
    config: &PriorConfig,
) -> Result<f64> {
    let base = -config.d * family.prior_exponent(tau)?;
    Ok(if family.per_structure_prior() { base } else { base - log_closure })
}

/// Normalized `ln pi(tau)` over indices with nonempty `Zbar_tau`.
pub fn model_index_log_pmf(family: &ModelFamily, config: &PriorConfig) -> Result<Vec<(ModelIndex, f64)>> {
    config.validate()?;
    let mut raw = Vec::new();
    for tau in family.index_set() {
        let closure = closure_count(family, tau, CLOSURE_ENUMERATION_CAP)?;
        if closure.log_count == f64::NEG_INFINITY {
            continue;
        }
        let ell = family.ell(tau)?;
        let mut w = log_correction(ell) - config.d * family.prior_exponent(tau)?;
        if family.per_structure_prior() {
            // Every cell set of the index carries the same weight.
            w += closure.log_count;
        }
        raw.push((tau, w));
    }
    if raw.is_empty() {
        return Err(Error::NoValidModels);
    }
    let weights: Vec<f64> = raw.iter().map(|r| r.1).collect();
    let norm = log_sum_exp(&weights);
    Ok(raw.into_iter().map(|(t, w)| (t, w - norm)).collect())
}

/// Uniform direction on the unit sphere of `R^ell`.
fn unit_vector<R: Rng + ?Sized>(ell: usize, rng: &mut R) -> DVector<f64> {
    loop {
        let u = DVector::<f64>::from_fn(ell, |_, _| StandardNormal.sample(rng));
        let n = u.norm();
        if n > 0.0 {
            return u / n;
        }
    }
}

/// Draw `Q` with density proportional to `exp(-lambda ||X_Z Q||)`: a
/// Gamma(`ell`, rate `lambda`) radius times a uniform direction in whitened
/// coordinates, mapped back through the Gram factor.
pub fn sample_elliptical_laplace<R: Rng + ?Sized>(
    design: &DesignOperator,
    lambda: f64,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if !(lambda > 0.0) {
        return Err(Error::domain("lambda must be positive"));
    }
    let ell = design.ell();
    let radius = Gamma::new(ell as f64, 1.0 / lambda)
        .map_err(|e| Error::domain(e.to_string()))?
        .sample(rng);
    let w = unit_vector(ell, rng) * radius;
    Ok(design.unwhiten(&w))
}

/// Log density of the elliptical Laplace law at `q`.
pub fn elliptical_laplace_log_density(design: &DesignOperator, lambda: f64, q: &[f64]) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::domain("lambda must be positive"));
    }
    let ell = design.ell() as f64;
    let norm = design.apply(q)?.norm();
    Ok(0.5 * design.log_det_gram + ell * (lambda.ln() - LN_SQRT_PI) + ln_gamma(0.5 * ell)
        - ln_gamma(ell)
        - std::f64::consts::LN_2
        - lambda * norm)
}

#[derive(Clone, Debug, Serialize)]
pub struct PriorDraw {
    pub tau: ModelIndex,
    pub structure: Structure,
    pub q: Vec<f64>,
    pub signal: Vec<f64>,
}

/// Index sets above this size draw structures by rejection instead of enumeration.
pub const PRIOR_ENUMERATION_CAP: u64 = 1_000_000;
/// Rejection attempts before giving up on a pathological design.
pub const PRIOR_REJECTION_CAP: u64 = 10_000_000;

/// Repeated prior draws with the index pmf and small structure spaces cached.
pub struct PriorSampler<'a> {
    family: &'a ModelFamily,
    config: PriorConfig,
    pmf: Vec<(ModelIndex, f64)>,
    valid: HashMap<ModelIndex, Vec<Structure>>,
}

impl<'a> PriorSampler<'a> {
    pub fn new(family: &'a ModelFamily, config: PriorConfig) -> Result<Self> {
        let pmf = model_index_log_pmf(family, &config)?;
        Ok(Self { family, config, pmf, valid: HashMap::new() })
    }

    pub fn pmf(&self) -> &[(ModelIndex, f64)] {
        &self.pmf
    }

    fn draw_index<R: Rng + ?Sized>(&self, rng: &mut R) -> ModelIndex {
        let weights: Vec<f64> = self.pmf.iter().map(|p| p.1).collect();
        self.pmf[crate::instances::sample_log_weights(&weights, rng)].0
    }

    /// Uniform draw from `Zbar_tau`.
    pub fn draw_structure<R: Rng + ?Sized>(&mut self, tau: ModelIndex, rng: &mut R) -> Result<Structure> {
        let family = self.family;
        let count = family.structure_count(tau)?;
        if count <= num_bigint::BigUint::from(PRIOR_ENUMERATION_CAP) {
            let list = match self.valid.entry(tau) {
                std::collections::hash_map::Entry::Occupied(e) => e.into_mut(),
                std::collections::hash_map::Entry::Vacant(e) => {
                    let all = enumerate_structures(family, tau, PRIOR_ENUMERATION_CAP)?;
                    e.insert(all.into_iter().filter(|v| v.full_rank).map(|v| v.structure).collect())
                }
            };
            if list.is_empty() {
                return Err(Error::NoValidModels);
            }
            return Ok(list[rng.random_range(0..list.len())].clone());
        }
        for _ in 0..PRIOR_REJECTION_CAP {
            let z = sample_structure(family, tau, rng)?;
            if is_full_rank(family, tau, &z)? {
                return Ok(z);
            }
        }
        Err(Error::Numeric(format!(
            "no full-rank structure found for index {tau} after {PRIOR_REJECTION_CAP} attempts"
        )))
    }

    pub fn draw<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<PriorDraw> {
        let tau = self.draw_index(rng);
        let structure = self.draw_structure(tau, rng)?;
        let design = build_design(self.family, tau, &structure)?;
        let q = sample_elliptical_laplace(&design, self.config.lambda, rng)?;
        let signal = design.apply(q.as_slice())?;
        Ok(PriorDraw { tau, structure, q: q.as_slice().to_vec(), signal: signal.as_slice().to_vec() })
    }
}

/// One draw from the full prior.
pub fn sample_prior<R: Rng + ?Sized>(family: &ModelFamily, config: &PriorConfig, rng: &mut R) -> Result<PriorDraw> {
    PriorSampler::new(family, *config)?.draw(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::gaussian_design;
    use crate::rng::stream;
    use crate::stats::{ks_test, GammaCdf};
    use nalgebra::DMatrix;
    use ModelIndex::*;

    #[test]
    fn correction_values() {
        assert!(log_correction(2).abs() < 1e-15);
        assert!((log_correction(4) - 6f64.ln()).abs() < 1e-13);
        assert!((log_correction(1) + LN_SQRT_PI).abs() < 1e-13);
        // Large ell against the asymptotic Stirling difference computed in log space.
        let l = 1e6f64;
        let stirling = |x: f64| (x - 0.5) * x.ln() - x + 0.5 * crate::special::LN_2PI + 1.0 / (12.0 * x);
        let approx = stirling(l) - stirling(l / 2.0);
        assert!(((log_correction(1_000_000) - approx) / approx).abs() < 1e-12);
    }

    #[test]
    fn pmf_examples() {
        let f = ModelFamily::SobolevSequence { n: 2 };
        let pmf = model_index_log_pmf(&f, &PriorConfig::new(1.0, 1.0).unwrap()).unwrap();
        let ratio = (pmf[1].1 - pmf[0].1).exp();
        let expected = std::f64::consts::PI.sqrt() * (-2f64).exp();
        assert!((ratio - expected).abs() < 1e-12);
        assert!((ratio - 0.239_876).abs() < 1e-6);

        let single = ModelFamily::SobolevSequence { n: 1 };
        let pmf = model_index_log_pmf(&single, &PriorConfig::default()).unwrap();
        assert_eq!(pmf, vec![(Single(1), 0.0)]);
    }

    #[test]
    fn pmf_normalized_for_shipped_families() {
        for f in crate::instances::shipped_families() {
            let pmf = model_index_log_pmf(&f, &PriorConfig::default()).unwrap();
            let w: Vec<f64> = pmf.iter().map(|p| p.1).collect();
            assert!(log_sum_exp(&w).abs() < 1e-12, "{:?}", f.kind());
        }
    }

    #[test]
    fn aggregation_top_weight_uses_rank() {
        let f = ModelFamily::aggregation(gaussian_design(4, 4, 5)).unwrap();
        let cfg = PriorConfig::new(1.0, 1.5).unwrap();
        let pmf = model_index_log_pmf(&f, &cfg).unwrap();
        let top = pmf.iter().find(|p| p.0 == Single(4)).unwrap().1;
        let low = pmf.iter().find(|p| p.0 == Single(1)).unwrap().1;
        let expected = (log_correction(4) - 1.5 * 4.0) - (log_correction(1) - 1.5 * (1.0 + 4f64.ln()));
        assert!(((top - low) - expected).abs() < 1e-12);
    }

    #[test]
    fn empty_closure_is_excluded_or_errors() {
        // SBM with n = 3 has no valid labeling at k >= 2.
        let f = ModelFamily::sbm(3);
        let pmf = model_index_log_pmf(&f, &PriorConfig::default()).unwrap();
        assert_eq!(pmf.len(), 1);
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let g = ModelFamily::SparseRegression { design: std::sync::Arc::new(x), s_max: 2 };
        let pmf = model_index_log_pmf(&g, &PriorConfig::default()).unwrap();
        assert_eq!(pmf.len(), 1);
    }

    #[test]
    fn laplace_density_constants() {
        let f = ModelFamily::sparse_regression(DMatrix::identity(1, 1));
        let op = build_design(&f, Single(1), &Structure::Support(vec![0])).unwrap();
        let v = elliptical_laplace_log_density(&op, 1.0, &[0.0]).unwrap();
        assert!((v + std::f64::consts::LN_2).abs() < 1e-14);
        let a = elliptical_laplace_log_density(&op, 2.0, &[1.0]).unwrap();
        let b = elliptical_laplace_log_density(&op, 2.0, &[2.0]).unwrap();
        assert!((a - b - 2.0).abs() < 1e-14);
        assert!(elliptical_laplace_log_density(&op, 1.0, &[0.0, 1.0]).is_err());
    }

    #[test]
    fn exponential_radius_in_one_dimension() {
        let f = ModelFamily::sparse_regression(DMatrix::identity(1, 1));
        let op = build_design(&f, Single(1), &Structure::Support(vec![0])).unwrap();
        let mut rng = stream(1);
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| sample_elliptical_laplace(&op, 1.0, &mut rng).unwrap()[0].abs()).sum::<f64>()
            / n as f64;
        assert!((mean - 1.0).abs() < 0.02);
    }

    #[test]
    fn radius_law_on_generic_design() {
        let f = ModelFamily::sparse_regression(gaussian_design(7, 3, 2));
        let op = build_design(&f, Single(3), &Structure::Support(vec![0, 1, 2])).unwrap();
        let mut rng = stream(2);
        let r: Vec<f64> = (0..100_000)
            .map(|_| {
                let q = sample_elliptical_laplace(&op, 2.0, &mut rng).unwrap();
                op.apply(q.as_slice()).unwrap().norm()
            })
            .collect();
        let mean = r.iter().sum::<f64>() / r.len() as f64;
        assert!((mean - 1.5).abs() < 0.02);
        let p = ks_test(&r, &GammaCdf::new(3.0, 2.0));
        assert!(p > 0.01, "KS p = {p}");
    }

    #[test]
    fn collinear_structure_is_rejected_before_sampling() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let f = ModelFamily::SparseRegression { design: std::sync::Arc::new(x), s_max: 2 };
        assert!(matches!(
            build_design(&f, Single(2), &Structure::Support(vec![0, 1])),
            Err(Error::CollinearStructure { .. })
        ));
    }

    #[test]
    fn forced_single_index_prior_draw() {
        let f = ModelFamily::SobolevSequence { n: 1 };
        let d = sample_prior(&f, &PriorConfig::default(), &mut stream(3)).unwrap();
        assert_eq!(d.q.len(), 1);
        assert_eq!(d.signal.len(), 1);
        assert_eq!(d.signal[0], d.q[0]);
    }

    #[test]
    fn prior_draws_are_reproducible() {
        let f = ModelFamily::sbm(5);
        let a = sample_prior(&f, &PriorConfig::default(), &mut stream(9)).unwrap();
        let b = sample_prior(&f, &PriorConfig::default(), &mut stream(9)).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
}
