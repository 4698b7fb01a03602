use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Scenario, TruthKind};
use crate::error::{Error, Result};
use crate::family::{FamilyKind, ModelFamily, ModelIndex};
use crate::instances::{build_design, coefficients, effective_sparsity, is_full_rank, sample_structure, Structure};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphonShape {
    /// `scale * ((x - 1/2)^2 + (y - 1/2)^2)^{alpha/2}` for `alpha <= 1`, a
    /// Gaussian bump for `alpha > 1`; clipped to `[0, 1]`.
    Holder {
        #[serde(default = "unit")]
        scale: f64,
    },
    Constant { value: f64 },
}

fn unit() -> f64 {
    1.0
}

impl Default for GraphonShape {
    fn default() -> Self {
        GraphonShape::Holder { scale: 1.0 }
    }
}

pub fn graphon_value(shape: &GraphonShape, alpha: f64, x: f64, y: f64) -> f64 {
    match shape {
        GraphonShape::Constant { value } => *value,
        GraphonShape::Holder { scale } => {
            let r2 = (x - 0.5).powi(2) + (y - 0.5).powi(2);
            let v = if alpha <= 1.0 { scale * r2.powf(0.5 * alpha) } else { 0.1 + 0.8 * scale * (-r2 / 0.1).exp() };
            v.clamp(0.0, 1.0)
        }
    }
}

/// Sorted magnitudes `(k / j)^{1/q}` placed at coordinate `j - 1` with alternating signs.
pub fn weak_lq_coefficients(q: f64, k: f64, p: usize) -> Vec<f64> {
    (1..=p)
        .map(|j| {
            let sign = if j % 2 == 1 { 1.0 } else { -1.0 };
            sign * (k / j as f64).powf(1.0 / q)
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct TruthRecord {
    /// Reference index whose complexity sets the exceedance threshold.
    pub tau_star: ModelIndex,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub structure: Option<Structure>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xi: Option<Vec<f64>>,
}

fn balanced_labels<R: Rng + ?Sized>(len: usize, k: usize, rng: &mut R) -> Vec<usize> {
    let mut v: Vec<usize> = (0..len).map(|i| i % k).collect();
    v.shuffle(rng);
    v
}

/// Balanced labelings for the label families, a uniform full-rank draw otherwise.
fn truth_structure<R: Rng + ?Sized>(family: &ModelFamily, tau: ModelIndex, rng: &mut R) -> Result<Structure> {
    use ModelIndex::*;
    let z = match (family, tau) {
        (ModelFamily::Sbm { n, .. }, Single(k)) => Structure::Labels(balanced_labels(*n, k, rng)),
        (ModelFamily::MultiTask { m, .. }, Single(k)) => Structure::Labels(balanced_labels(*m, k, rng)),
        (ModelFamily::Biclustering { n, m, .. }, Pair(k, l)) => {
            Structure::LabelPair(balanced_labels(*n, k, rng), balanced_labels(*m, l, rng))
        }
        _ => {
            for _ in 0..10_000 {
                let z = sample_structure(family, tau, rng)?;
                if is_full_rank(family, tau, &z)? {
                    return Ok(z);
                }
            }
            return Err(Error::config(format!("no full-rank truth structure found at index {tau}")));
        }
    };
    if !is_full_rank(family, tau, &z)? {
        return Err(Error::config(format!("index {tau} admits no balanced full-rank truth")));
    }
    Ok(z)
}

fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// `(theta*, Q*)` at `(tau, z)` with signal energy `snr * eps(tau)`. SBM truths
/// are `1/2 +- g/2` (assortative) so they stay valid edge probabilities, and
/// only the centred part counts towards the energy.
fn well_specified_signal<R: Rng + ?Sized>(
    family: &ModelFamily,
    tau: ModelIndex,
    z: &Structure,
    snr: f64,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let design = build_design(family, tau, z)?;
    let target = snr * family.epsilon(tau)?;
    let q: Vec<f64> = match (family, tau) {
        (ModelFamily::Sbm { n, .. }, ModelIndex::Single(k)) => {
            let cells = (n * (n - 1)) as f64;
            let g = 2.0 * (target / cells).sqrt();
            if g > 1.0 {
                return Err(Error::config(format!("snr {snr} needs block gap {g:.3} > 1")));
            }
            (0..k * k).map(|c| if c / k == c % k { 0.5 + 0.5 * g } else { 0.5 - 0.5 * g }).collect()
        }
        _ => {
            let ell = design.ell();
            let raw: Vec<f64> = match family.kind() {
                FamilyKind::Biclustering | FamilyKind::MultiTask | FamilyKind::Dictionary => {
                    (0..ell).map(|_| StandardNormal.sample(rng)).collect()
                }
                _ => (0..ell).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect(),
            };
            let energy = sq_norm(design.apply(&raw)?.as_slice());
            let c = (target / energy).sqrt();
            raw.into_iter().map(|v| v * c).collect()
        }
    };
    let theta = design.apply(&q)?.as_slice().to_vec();
    Ok((theta, q))
}

/// Draw `theta*` and its record for grid point `family` of `scenario`.
pub fn generate_truth<R: Rng + ?Sized>(
    scenario: &Scenario,
    family: &ModelFamily,
    rng: &mut R,
) -> Result<(Vec<f64>, TruthRecord)> {
    match &scenario.truth {
        TruthKind::WellSpecified { tau } => {
            let z = truth_structure(family, *tau, rng)?;
            let (theta, q) = well_specified_signal(family, *tau, &z, scenario.snr, rng)?;
            let beta = coefficients(family, &z, &q);
            Ok((theta, TruthRecord { tau_star: *tau, structure: Some(z), q: Some(q), beta, xi: None }))
        }
        TruthKind::ApproxConstant { tau, misspec } => {
            let z = truth_structure(family, *tau, rng)?;
            let (mut theta, q) = well_specified_signal(family, *tau, &z, scenario.snr, rng)?;
            let design = build_design(family, *tau, &z)?;
            let raw: Vec<f64> = (0..theta.len()).map(|_| StandardNormal.sample(rng)).collect();
            let proj = design.project(&raw)?;
            let perp: Vec<f64> = raw.iter().zip(proj.iter()).map(|(a, b)| a - b).collect();
            let scale = (misspec * sq_norm(&theta) / sq_norm(&perp)).sqrt();
            for (t, v) in theta.iter_mut().zip(&perp) {
                *t += scale * v;
            }
            Ok((theta, TruthRecord { tau_star: *tau, structure: Some(z), q: Some(q), beta: None, xi: None }))
        }
        TruthKind::Graphon { alpha, shape } => {
            let ModelFamily::Sbm { n, k_max } = family else {
                return Err(Error::config("graphon truths need the sbm family"));
            };
            let xi: Vec<f64> = (0..*n).map(|_| rng.random::<f64>()).collect();
            let mut theta = Vec::with_capacity(n * (n - 1));
            for i in 0..*n {
                for j in 0..*n {
                    if i != j {
                        theta.push(graphon_value(shape, *alpha, xi[i], xi[j]));
                    }
                }
            }
            // Block count balancing bias and variance at smoothness min(alpha, 1).
            let a = alpha.min(1.0);
            let k_ref = ((*n as f64).powf(1.0 / (a + 1.0)).round() as usize).clamp(1, (*k_max).min(n / 2).max(1));
            Ok((theta, TruthRecord { tau_star: ModelIndex::Single(k_ref), structure: None, q: None, beta: None, xi: Some(xi) }))
        }
        TruthKind::WeakLq { q, k } => {
            let ModelFamily::SparseRegression { design, s_max } = family else {
                return Err(Error::config("weak_lq truths need the sparse_regression family"));
            };
            let (n, p) = (design.nrows(), design.ncols());
            let beta = weak_lq_coefficients(*q, *k, p);
            let theta = (design.as_ref() * nalgebra::DVector::from_column_slice(&beta)).as_slice().to_vec();
            let s_star = effective_sparsity(*q, *k, p, n).clamp(1, (*s_max).min(p));
            Ok((theta, TruthRecord { tau_star: ModelIndex::Single(s_star), structure: None, q: None, beta: Some(beta), xi: None }))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::NoiseKind;
    use crate::family::FamilyDescriptor;
    use crate::rng::stream;

    fn scenario(truth: TruthKind, grid: FamilyDescriptor) -> Scenario {
        Scenario {
            id: "t".into(),
            grid: vec![grid],
            truth,
            noise: NoiseKind::Gaussian,
            snr: 1.0,
            replicates: 1,
            seed: 0,
            prior: Default::default(),
            estimator: Default::default(),
            chain: Default::default(),
            delta: 0.5,
            cap: 1_000_000,
            coef_draws: 10,
        }
    }

    fn sbm(n: usize) -> FamilyDescriptor {
        FamilyDescriptor { family: Some(FamilyKind::Sbm), n: Some(n), ..Default::default() }
    }

    #[test]
    fn one_block_sbm_truth_is_constant() {
        let s = scenario(TruthKind::WellSpecified { tau: ModelIndex::Single(1) }, sbm(6));
        let f = s.families().unwrap().remove(0);
        let (theta, rec) = generate_truth(&s, &f, &mut stream(1)).unwrap();
        assert_eq!(theta.len(), 30);
        assert!(theta.iter().all(|&t| t == theta[0]));
        assert_eq!(rec.tau_star, ModelIndex::Single(1));
    }

    #[test]
    fn sbm_truth_energy_and_range() {
        let s = scenario(TruthKind::WellSpecified { tau: ModelIndex::Single(2) }, sbm(12));
        let f = s.families().unwrap().remove(0);
        let (theta, _) = generate_truth(&s, &f, &mut stream(2)).unwrap();
        let centred: f64 = theta.iter().map(|t| (t - 0.5).powi(2)).sum();
        assert!((centred - f.epsilon(ModelIndex::Single(2)).unwrap()).abs() < 1e-9);
        assert!(theta.iter().all(|t| (0.0..=1.0).contains(t)));
    }

    #[test]
    fn regression_truth_energy() {
        let d = FamilyDescriptor {
            family: Some(FamilyKind::SparseRegression),
            n: Some(30),
            p: Some(8),
            ..Default::default()
        };
        let mut s = scenario(TruthKind::WellSpecified { tau: ModelIndex::Single(2) }, d);
        s.snr = 2.5;
        let f = s.families().unwrap().remove(0);
        let (theta, rec) = generate_truth(&s, &f, &mut stream(3)).unwrap();
        let e: f64 = theta.iter().map(|t| t * t).sum();
        assert!((e - 2.5 * f.epsilon(ModelIndex::Single(2)).unwrap()).abs() < 1e-9);
        let beta = rec.beta.unwrap();
        assert_eq!(beta.iter().filter(|b| **b != 0.0).count(), 2);
    }

    #[test]
    fn weak_lq_definition() {
        let b = weak_lq_coefficients(1.0, 1.0, 4);
        let mags: Vec<f64> = b.iter().map(|v| v.abs()).collect();
        for (j, m) in mags.iter().enumerate() {
            assert!((m - 1.0 / (j + 1) as f64).abs() < 1e-15);
            assert!(((j + 1) as f64 * m - 1.0).abs() < 1e-15);
        }
        assert!(b[0] > 0.0 && b[1] < 0.0);
    }

    #[test]
    fn constant_graphon() {
        let s = scenario(
            TruthKind::Graphon { alpha: 0.5, shape: GraphonShape::Constant { value: 0.3 } },
            sbm(7),
        );
        let f = s.families().unwrap().remove(0);
        let (theta, rec) = generate_truth(&s, &f, &mut stream(4)).unwrap();
        assert!(theta.iter().all(|&t| t == 0.3));
        assert_eq!(rec.xi.unwrap().len(), 7);
    }

    #[test]
    fn holder_graphon_in_unit_interval() {
        for &a in &[0.3, 1.0, 2.0] {
            for i in 0..=10 {
                for j in 0..=10 {
                    let v = graphon_value(&GraphonShape::default(), a, i as f64 / 10.0, j as f64 / 10.0);
                    assert!((0.0..=1.0).contains(&v));
                }
            }
        }
    }

    #[test]
    fn misspecified_truth_adds_orthogonal_energy() {
        let d = FamilyDescriptor {
            family: Some(FamilyKind::SparseRegression),
            n: Some(20),
            p: Some(5),
            ..Default::default()
        };
        let tau = ModelIndex::Single(2);
        let s = scenario(TruthKind::ApproxConstant { tau, misspec: 0.25 }, d);
        let f = s.families().unwrap().remove(0);
        let (theta, rec) = generate_truth(&s, &f, &mut stream(5)).unwrap();
        let op = build_design(&f, tau, rec.structure.as_ref().unwrap()).unwrap();
        let inside = op.projected_norm(&theta).unwrap().powi(2);
        let total: f64 = theta.iter().map(|t| t * t).sum();
        assert!(((total - inside) / inside - 0.25).abs() < 1e-9);
    }
}
