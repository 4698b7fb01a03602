//! Exact posterior computation: the Laplace–Gaussian radial integral,
//! per-structure marginal likelihoods, enumerated posterior tables and the
//! conditional parameter sampler.

use std::io::Write;

use nalgebra::DVector;
use num_bigint::BigUint;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::family::{ModelFamily, ModelIndex};
use crate::instances::{enumerate_structures, projected_inner, DesignOperator, Structure};
use crate::prior::{structure_log_prior_weight, PriorConfig};
use crate::quad::{integrate, QuadConfig};
use crate::special::{log_sum_exp, LN_2PI, LN_SQRT_PI};

/// `N(d, m, lambda) = int_{R^d} exp(-||t - y||^2 / 2 - lambda ||t||) dt` with
/// `m = ||y||`, plus the posterior moments of the shrinkage factor
/// `a = 1 / (1 + 2s)` from the scale-mixture representation.
///
/// Given the mixing variable, `t ~ N(a y, a I)`, so `E[t] = E[a] y` and
/// `E||t||^2 = E[a^2] m^2 + d E[a]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RadialIntegral {
    pub log_value: f64,
    pub mean_shrink: f64,
    pub mean_shrink_sq: f64,
}

/// `ln(1 + 2 e^u)` without overflow.
fn ln_one_plus_two_exp(u: f64) -> f64 {
    if u > 0.0 {
        std::f64::consts::LN_2 + u + (0.5 * (-u).exp()).ln_1p()
    } else {
        (2.0 * u.exp()).ln_1p()
    }
}

/// `e^{-lambda r} = int_0^inf lambda / (2 sqrt(pi)) s^{-3/2} e^{-lambda^2 / (4s)} e^{-s r^2} ds`;
/// the Gaussian integral over `t` is then closed form. Log integrand in `u = ln s`.
fn mixture_log_integrand(u: f64, d: f64, m2: f64, lambda: f64) -> f64 {
    (lambda / 2.0).ln() - LN_SQRT_PI - 0.5 * u - 0.25 * lambda * lambda * (-u).exp() + 0.5 * d * LN_2PI
        - 0.5 * d * ln_one_plus_two_exp(u)
        - m2 / (2.0 + (-u).exp())
}

const SCAN_STEP: f64 = 0.05;
const LOG_WINDOW: f64 = 60.0;

pub fn radial_integral(d: usize, m: f64, lambda: f64) -> Result<RadialIntegral> {
    if d == 0 {
        return Err(Error::domain("radial integral needs d >= 1"));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::domain(format!("lambda must be finite and nonnegative, got {lambda}")));
    }
    if !m.is_finite() || m < 0.0 {
        return Err(Error::domain(format!("m must be finite and nonnegative, got {m}")));
    }
    let df = d as f64;
    if lambda == 0.0 {
        return Ok(RadialIntegral { log_value: 0.5 * df * LN_2PI, mean_shrink: 1.0, mean_shrink_sq: 1.0 });
    }
    let m2 = m * m;
    let g = |u: f64| mixture_log_integrand(u, df, m2, lambda);

    // Left end: the e^{-lambda^2 e^{-u} / 4} factor is below e^{-B} there.
    let big_b = 100.0 + 2.0 * lambda * (df + m2).sqrt();
    let mut lo = (lambda * lambda / (4.0 * big_b)).ln();
    let right_floor = (m2 + df).ln() + 5.0;
    let (mut u_max, mut g_max) = (lo, g(lo));
    let mut u = lo;
    loop {
        u += SCAN_STEP;
        let v = g(u);
        if v > g_max {
            g_max = v;
            u_max = u;
        }
        if u > right_floor && v < g_max - LOG_WINDOW {
            break;
        }
    }
    let hi = u;
    while g(lo) > g_max - LOG_WINDOW {
        lo -= 5.0;
    }
    // Refine the mode by golden section on the bracketing scan cell.
    let (mut a, mut b) = (u_max - SCAN_STEP, u_max + SCAN_STEP);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..60 {
        let c = b - phi * (b - a);
        let e = a + phi * (b - a);
        if g(c) > g(e) {
            b = e;
        } else {
            a = c;
        }
    }
    let mode = 0.5 * (a + b);
    let g_ref = g_max.max(g(mode));

    let res = integrate(
        |u: f64| {
            let w = (g(u) - g_ref).exp();
            let a = 1.0 / (1.0 + 2.0 * u.exp());
            [w, a * w, a * a * w]
        },
        lo,
        hi,
        &[mode],
        QuadConfig { abs_tol: 0.0, rel_tol: 1e-13, max_panels: 2000 },
    )?;
    let [i0, i1, i2] = res.value;
    if !(i0 > 0.0) {
        return Err(Error::Numeric(format!("radial integral vanished (d = {d}, m = {m}, lambda = {lambda})")));
    }
    Ok(RadialIntegral { log_value: g_ref + i0.ln(), mean_shrink: i1 / i0, mean_shrink_sq: i2 / i0 })
}

pub fn log_radial_integral(d: usize, m: f64, lambda: f64) -> Result<f64> {
    radial_integral(d, m, lambda).map(|r| r.log_value)
}

/// Collapsed marginal of one structure, with the sufficient statistics it was built from.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct MarginalStats {
    pub ell: usize,
    pub log_marginal: f64,
    pub projected_norm: f64,
    pub residual_sq: f64,
    pub radial: RadialIntegral,
}

fn combine(ell: usize, projected_sq: f64, residual_sq: f64, lambda: f64) -> Result<MarginalStats> {
    if !(lambda > 0.0) {
        return Err(Error::domain("lambda must be positive"));
    }
    let projected_norm = projected_sq.max(0.0).sqrt();
    let radial = radial_integral(ell, projected_norm, lambda)?;
    let log_marginal = ell as f64 * (lambda.ln() - LN_SQRT_PI) - 0.5 * residual_sq + radial.log_value;
    Ok(MarginalStats { ell, log_marginal, projected_norm, residual_sq, radial })
}

/// `ln[ sqrt(det X^T X) (lambda / sqrt(pi))^ell int exp(-||Y - XQ||^2 / 2 - lambda ||XQ||) dQ ]`.
pub fn log_marginal(design: &DesignOperator, y: &[f64], lambda: f64) -> Result<f64> {
    let w = design.whiten(y)?;
    let residual_sq = design.residual_norm_sq(y)?;
    Ok(combine(design.ell(), w.norm_squared(), residual_sq, lambda)?.log_marginal)
}

/// Marginal statistics of `(tau, z)` through the family's projection fast paths.
pub fn structure_marginal(
    family: &ModelFamily,
    tau: ModelIndex,
    z: &Structure,
    y: &[f64],
    lambda: f64,
) -> Result<MarginalStats> {
    let proj = projected_inner(family, tau, z, &[y])?;
    let py2 = proj.inner[(0, 0)];
    let y2: f64 = y.iter().map(|v| v * v).sum();
    combine(proj.ell, py2, (y2 - py2).max(0.0), lambda)
}

/// `E ||X_Z Q - theta*||^2` under the conditional posterior of `Q` given `(tau, z)`.
pub fn expected_prediction_loss(
    family: &ModelFamily,
    tau: ModelIndex,
    z: &Structure,
    y: &[f64],
    theta_star: &[f64],
    lambda: f64,
) -> Result<f64> {
    let proj = projected_inner(family, tau, z, &[y, theta_star])?;
    let (py2, cross) = (proj.inner[(0, 0)], proj.inner[(0, 1)]);
    let t2: f64 = theta_star.iter().map(|v| v * v).sum();
    let r = radial_integral(proj.ell, py2.max(0.0).sqrt(), lambda)?;
    let loss = t2 + r.mean_shrink_sq * py2 + proj.ell as f64 * r.mean_shrink - 2.0 * r.mean_shrink * cross;
    Ok(loss.max(0.0))
}

#[derive(Clone, Debug, Serialize)]
pub struct PosteriorEntry {
    pub tau: ModelIndex,
    pub structure: Structure,
    pub log_weight: f64,
    pub log_marginal: f64,
    pub projected_norm: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct PosteriorTable {
    pub entries: Vec<PosteriorEntry>,
    pub log_normalizer: f64,
}

impl PosteriorTable {
    /// Posterior mass of each model index, in index order.
    pub fn index_marginals(&self) -> Vec<(ModelIndex, f64)> {
        let mut out: Vec<(ModelIndex, Vec<f64>)> = Vec::new();
        for e in &self.entries {
            match out.last_mut() {
                Some((t, v)) if *t == e.tau => v.push(e.log_weight),
                _ => out.push((e.tau, vec![e.log_weight])),
            }
        }
        out.into_iter().map(|(t, v)| (t, log_sum_exp(&v).exp())).collect()
    }

    pub fn argmax(&self) -> &PosteriorEntry {
        self.entries
            .iter()
            .max_by(|a, b| a.log_weight.total_cmp(&b.log_weight))
            .expect("table is never empty")
    }

    pub fn check_finite(&self) -> Result<()> {
        for e in &self.entries {
            if !e.log_weight.is_finite() || !e.log_marginal.is_finite() {
                return Err(Error::Numeric(format!("non-finite weight at {}", e.structure.to_json())));
            }
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(["tau", "structure_json", "log_weight", "log_marginal", "projected_norm"])?;
        for e in &self.entries {
            w.write_record([
                e.tau.to_string(),
                e.structure.to_json(),
                e.log_weight.to_string(),
                e.log_marginal.to_string(),
                e.projected_norm.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Enumerate `Zbar_tau` for every index and weight each structure by
/// `-D e(tau) - ln |Zbar_tau| + log_marginal`, normalized over the table.
pub fn exact_posterior_table(
    family: &ModelFamily,
    y: &[f64],
    config: &PriorConfig,
    cap: u64,
) -> Result<PosteriorTable> {
    config.validate()?;
    if y.len() != family.data_len() {
        return Err(Error::DimensionMismatch { expected: family.data_len(), got: y.len() });
    }
    let indices = family.index_set();
    let mut total = BigUint::from(0u32);
    for &tau in &indices {
        total += family.structure_count(tau)?;
    }
    if total > BigUint::from(cap) {
        return Err(Error::CapExceeded { count: total.to_string(), cap });
    }

    let mut candidates: Vec<(ModelIndex, Structure, f64)> = Vec::new();
    for &tau in &indices {
        let valid: Vec<Structure> = enumerate_structures(family, tau, cap)?
            .into_iter()
            .filter(|v| v.full_rank)
            .map(|v| v.structure)
            .collect();
        if valid.is_empty() {
            continue;
        }
        let log_prior = structure_log_prior_weight(family, tau, (valid.len() as f64).ln(), config)?;
        candidates.extend(valid.into_iter().map(|z| (tau, z, log_prior)));
    }
    if candidates.is_empty() {
        return Err(Error::NoValidModels);
    }

    let stats: Vec<MarginalStats> = candidates
        .par_iter()
        .map(|(tau, z, _)| structure_marginal(family, *tau, z, y, config.lambda))
        .collect::<Result<_>>()?;
    let raw: Vec<f64> = candidates.iter().zip(&stats).map(|(c, s)| c.2 + s.log_marginal).collect();
    let log_normalizer = log_sum_exp(&raw);
    if !log_normalizer.is_finite() {
        return Err(Error::Numeric("posterior normalizer is not finite".into()));
    }
    let entries = candidates
        .into_iter()
        .zip(stats)
        .zip(raw)
        .map(|(((tau, structure, _), s), r)| PosteriorEntry {
            tau,
            structure,
            log_weight: r - log_normalizer,
            log_marginal: s.log_marginal,
            projected_norm: s.projected_norm,
        })
        .collect();
    let table = PosteriorTable { entries, log_normalizer };
    table.check_finite()?;
    Ok(table)
}

/// Independence Metropolis chain for `Q | (Z, Y)` in whitened coordinates
/// `t = L^T Q`, where the target is `exp(-||t - y_hat||^2 / 2 - lambda ||t||)`
/// and the proposal `N(y_hat, I)`.
pub struct ConditionalSampler<'a> {
    design: &'a DesignOperator,
    center: DVector<f64>,
    lambda: f64,
    state: DVector<f64>,
    state_norm: f64,
    accepted: u64,
    proposed: u64,
}

impl<'a> ConditionalSampler<'a> {
    pub fn new(design: &'a DesignOperator, y: &[f64], lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::domain("lambda must be finite and nonnegative"));
        }
        let center = design.whiten(y)?;
        let state_norm = center.norm();
        Ok(Self { design, state: center.clone(), center, lambda, state_norm, accepted: 0, proposed: 0 })
    }

    /// Log acceptance probability of moving from a point of norm `from` to one of norm `to`.
    pub fn log_acceptance(&self, from: f64, to: f64) -> f64 {
        (-self.lambda * (to - from)).min(0.0)
    }

    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let prop = &self.center + DVector::<f64>::from_fn(self.center.len(), |_, _| StandardNormal.sample(rng));
        let norm = prop.norm();
        self.proposed += 1;
        let log_alpha = self.log_acceptance(self.state_norm, norm);
        if log_alpha >= 0.0 || rng.random::<f64>().ln() < log_alpha {
            self.state = prop;
            self.state_norm = norm;
            self.accepted += 1;
        }
    }

    pub fn whitened(&self) -> &DVector<f64> {
        &self.state
    }

    pub fn current(&self) -> DVector<f64> {
        self.design.unwhiten(&self.state)
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            1.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

/// Burn-in `max(100, steps / 10)` iterations, run `steps` more and return the final `Q`.
pub fn sample_q_conditional<R: Rng + ?Sized>(
    design: &DesignOperator,
    y: &[f64],
    lambda: f64,
    rng: &mut R,
    steps: usize,
) -> Result<DVector<f64>> {
    if steps == 0 {
        return Err(Error::domain("steps must be positive"));
    }
    let mut s = ConditionalSampler::new(design, y, lambda)?;
    for _ in 0..(100.max(steps / 10) + steps) {
        s.step(rng);
    }
    Ok(s.current())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{build_design, gaussian_design, orthogonal_design};
    use crate::quad::integrate_scalar;
    use crate::rng::stream;
    use nalgebra::DMatrix;
    use ModelIndex::*;

    /// `N` for `d = 1` from the two-sided error-function closed form.
    fn erf_oracle(m: f64, lambda: f64) -> f64 {
        let upper = |x: f64| (0.5 * libm::erfc(x / std::f64::consts::SQRT_2)).ln();
        let a = -lambda * m + upper(lambda - m);
        let b = lambda * m + upper(m + lambda);
        0.5 * lambda * lambda + 0.5 * LN_2PI + crate::special::ln_add_exp(a, b)
    }

    /// Spherical-shell oracle for `d = 2, 3`: `int r^{d-1} K_d(r m) e^{-(r^2 + m^2)/2 - lambda r} dr`.
    fn shell_oracle(d: usize, m: f64, lambda: f64) -> f64 {
        let peak = m.max(1.0);
        let shift = -lambda * peak;
        let f = |r: f64| -> f64 {
            let base = -0.5 * (r - m) * (r - m) - lambda * r - shift;
            match d {
                // 2 pi I_0(rm) e^{-rm}, with I_0 by its integral representation.
                2 => {
                    let x = r * m;
                    let i0 = integrate_scalar(
                        |th: f64| (x * (th.cos() - 1.0)).exp(),
                        0.0,
                        std::f64::consts::PI,
                        &[],
                        QuadConfig::default(),
                    )
                    .unwrap();
                    2.0 * i0 * r * base.exp()
                }
                3 => {
                    let x = r * m;
                    // 4 pi sinh(x)/x e^{-x} = 2 pi (1 - e^{-2x}) / x.
                    let k = if x < 1e-8 { 4.0 * std::f64::consts::PI } else { 2.0 * std::f64::consts::PI * (-(-2.0 * x).exp_m1()) / x };
                    k * r * r * base.exp()
                }
                _ => unreachable!(),
            }
        };
        let v = integrate_scalar(f, 0.0, peak + 40.0, &[m], QuadConfig::default()).unwrap();
        v.ln() + shift
    }

    #[test]
    fn reference_values() {
        let v = log_radial_integral(1, 0.0, 1.0).unwrap();
        assert!((v.exp() - 1.311_360).abs() < 1e-6);
        assert!((v - erf_oracle(0.0, 1.0)).abs() < 1e-12, "{v:.17} {:.17}", erf_oracle(0.0, 1.0));
        let v3 = log_radial_integral(3, 0.0, 1.0).unwrap().exp();
        let direct = integrate_scalar(|r: f64| r * r * (-0.5 * r * r - r).exp(), 0.0, 60.0, &[], QuadConfig::default())
            .unwrap()
            * 4.0
            * std::f64::consts::PI;
        assert!(((v3 - direct) / direct).abs() < 1e-6);
        assert!((direct - 3.912_65).abs() < 1e-5);
    }

    #[test]
    fn lambda_zero_and_domain() {
        for d in 1..6 {
            for &m in &[0.0, 2.5, 40.0] {
                assert_eq!(log_radial_integral(d, m, 0.0).unwrap(), 0.5 * d as f64 * LN_2PI);
            }
        }
        assert!(radial_integral(0, 1.0, 1.0).is_err());
        assert!(radial_integral(1, 1.0, -1.0).is_err());
        assert!(radial_integral(1, f64::NAN, 1.0).is_err());
    }

    #[test]
    fn one_dimension_matches_erf() {
        for &lambda in &[0.1, 1.0, 5.0] {
            for i in 0..=40 {
                let m = 0.5 * i as f64;
                let got = log_radial_integral(1, m, lambda).unwrap();
                let want = erf_oracle(m, lambda);
                assert!((got - want).abs() < 1e-10, "m {m} lambda {lambda}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn two_and_three_dimensions_match_shells() {
        for d in [2, 3] {
            for &lambda in &[0.3, 1.0, 4.0] {
                for &m in &[0.0, 0.7, 3.0, 12.0] {
                    let got = log_radial_integral(d, m, lambda).unwrap();
                    let want = shell_oracle(d, m, lambda);
                    assert!((got - want).abs() < 1e-8, "d {d} m {m} lambda {lambda}: {got} vs {want}");
                }
            }
        }
    }

    #[test]
    fn large_inputs_stay_finite() {
        for &(d, m, l) in &[(1, 1e3, 1e-3), (50, 200.0, 10.0), (400, 0.0, 30.0), (3, 1e4, 100.0)] {
            let r = radial_integral(d, m, l).unwrap();
            assert!(r.log_value.is_finite());
            assert!(r.mean_shrink > 0.0 && r.mean_shrink <= 1.0);
            assert!(r.mean_shrink_sq <= r.mean_shrink);
        }
    }

    #[test]
    fn shrinkage_moments_match_direct_moments() {
        // d = 1: E[t] = E[a] y against quadrature of the tilted density.
        let (m, lambda) = (1.7, 0.8);
        let r = radial_integral(1, m, lambda).unwrap();
        let w = |t: f64| (-0.5 * (t - m) * (t - m) - lambda * t.abs()).exp();
        let cfg = QuadConfig::default();
        let z = integrate_scalar(w, -40.0, 40.0, &[0.0], cfg).unwrap();
        let e1 = integrate_scalar(|t| t * w(t), -40.0, 40.0, &[0.0], cfg).unwrap() / z;
        let e2 = integrate_scalar(|t| t * t * w(t), -40.0, 40.0, &[0.0], cfg).unwrap() / z;
        assert!((e1 - r.mean_shrink * m).abs() < 1e-9);
        assert!((e2 - (r.mean_shrink_sq * m * m + r.mean_shrink)).abs() < 1e-9);
    }

    #[test]
    fn log_marginal_examples() {
        let f = ModelFamily::sparse_regression(DMatrix::identity(1, 1));
        let op = build_design(&f, Single(1), &Structure::Support(vec![0])).unwrap();
        let v = log_marginal(&op, &[0.0], 1.0).unwrap();
        assert!((v - (-LN_SQRT_PI + erf_oracle(0.0, 1.0))).abs() < 1e-12);
        assert!((v + 0.301_301).abs() < 1e-6);

        // An orthogonal unit component drops the marginal by exactly 1/2.
        let x = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let g = ModelFamily::sparse_regression(x);
        let op = build_design(&g, Single(1), &Structure::Support(vec![0])).unwrap();
        let a = log_marginal(&op, &[1.3, 0.0], 1.0).unwrap();
        let b = log_marginal(&op, &[1.3, 1.0], 1.0).unwrap();
        assert!((a - b - 0.5).abs() < 1e-12);
    }

    #[test]
    fn basis_invariance() {
        let x = gaussian_design(9, 3, 11);
        let t = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, -1.0, 0.0, 0.5, 0.2, 1.0, 1.0, 3.0]);
        let y: Vec<f64> = (0..9).map(|i| (i as f64 * 0.7).sin() * 2.0).collect();
        let a = DesignOperator::new(x.clone(), String::new).unwrap();
        let b = DesignOperator::new(x * t, String::new).unwrap();
        let la = log_marginal(&a, &y, 1.3).unwrap();
        let lb = log_marginal(&b, &y, 1.3).unwrap();
        assert!((la - lb).abs() < 1e-9);
    }

    #[test]
    fn jacobian_cancellation_by_direct_integration() {
        // Non-orthogonal 2-column design; integrate over Q itself.
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.5, 0.2, 2.0, -0.7, 0.1]);
        let y = [0.4, 1.1, -0.3];
        let lambda = 0.9;
        let op = DesignOperator::new(x.clone(), String::new).unwrap();
        let cfg = QuadConfig { abs_tol: 0.0, rel_tol: 1e-10, max_panels: 400 };
        let inner = |q1: f64| {
            integrate_scalar(
                |q2: f64| {
                    let th = &x * DVector::from_column_slice(&[q1, q2]);
                    let r: f64 = th.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum();
                    (-0.5 * r - lambda * th.norm()).exp()
                },
                -25.0,
                25.0,
                &[0.0],
                cfg,
            )
            .unwrap()
        };
        let v = integrate_scalar(inner, -25.0, 25.0, &[0.0], cfg).unwrap();
        let direct = 0.5 * op.log_det_gram + 2.0 * (lambda.ln() - LN_SQRT_PI) + v.ln();
        let got = log_marginal(&op, &y, lambda).unwrap();
        assert!((got - direct).abs() < 1e-7, "{got} vs {direct}");
    }

    #[test]
    fn single_structure_table() {
        let f = ModelFamily::SobolevSequence { n: 1 };
        let t = exact_posterior_table(&f, &[0.3], &PriorConfig::default(), 10).unwrap();
        assert_eq!(t.entries.len(), 1);
        assert_eq!(t.entries[0].log_weight, 0.0);
    }

    #[test]
    fn high_snr_picks_true_column() {
        let x = orthogonal_design(10, 2, 3).unwrap();
        let y: Vec<f64> = x.column(0).iter().map(|v| 3.0 * v).collect();
        let f = ModelFamily::sparse_regression(x);
        let t = exact_posterior_table(&f, &y, &PriorConfig::default(), 100).unwrap();
        assert_eq!(t.argmax().structure, Structure::Support(vec![0]));
        let s: Vec<f64> = t.entries.iter().map(|e| e.log_weight).collect();
        assert!(log_sum_exp(&s).abs() < 1e-12);
    }

    #[test]
    fn symmetric_data_gives_symmetric_weights() {
        // SBM n = 4; data invariant under swapping nodes 0 and 1.
        let n = 4;
        let f = ModelFamily::sbm(n);
        let theta = |i: usize, j: usize| -> f64 {
            let c = |v: usize| if v < 2 { 0 } else { v };
            ((c(i) * 7 + c(j) * 3) % 5) as f64 * 0.3
        };
        let mut y = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    y.push(theta(i, j));
                }
            }
        }
        let t = exact_posterior_table(&f, &y, &PriorConfig::default(), 1000).unwrap();
        for e in &t.entries {
            if let Structure::Labels(z) = &e.structure {
                let mut w = z.clone();
                w.swap(0, 1);
                let other = t.entries.iter().find(|o| o.structure == Structure::Labels(w.clone())).unwrap();
                assert!((other.log_weight - e.log_weight).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn relabeling_invariance_of_sbm_weights() {
        let f = ModelFamily::sbm(5);
        let mut rng = stream(8);
        let y: Vec<f64> = (0..20).map(|_| rng.random::<f64>()).collect();
        let t = exact_posterior_table(&f, &y, &PriorConfig::default(), 10_000).unwrap();
        for e in &t.entries {
            if let Structure::Labels(z) = &e.structure {
                let k = z.iter().max().unwrap() + 1;
                if k == 2 {
                    let w: Vec<usize> = z.iter().map(|&v| 1 - v).collect();
                    let other = t.entries.iter().find(|o| o.structure == Structure::Labels(w.clone())).unwrap();
                    assert!((other.log_weight - e.log_weight).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn cap_exceeded_names_count() {
        let f = ModelFamily::sbm(6);
        match exact_posterior_table(&f, &vec![0.0; 30], &PriorConfig::default(), 10) {
            Err(Error::CapExceeded { count, cap }) => {
                assert_eq!(cap, 10);
                // sum_k k^6 for k = 1..6
                assert_eq!(count, (1..=6u64).map(|k| k.pow(6)).sum::<u64>().to_string());
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn larger_d_penalizes_complex_entries_more() {
        let f = ModelFamily::sparse_regression(gaussian_design(12, 4, 6));
        let mut rng = stream(5);
        let y: Vec<f64> = (0..12).map(|_| StandardNormal.sample(&mut rng)).collect();
        let lo = exact_posterior_table(&f, &y, &PriorConfig::new(1.0, 1.0).unwrap(), 100).unwrap();
        let hi = exact_posterior_table(&f, &y, &PriorConfig::new(1.0, 3.0).unwrap(), 100).unwrap();
        let find = |t: &PosteriorTable, s: Vec<usize>| {
            t.entries.iter().find(|e| e.structure == Structure::Support(s.clone())).unwrap().log_weight
        };
        let r_lo = find(&lo, vec![0, 1, 2]) - find(&lo, vec![3]);
        let r_hi = find(&hi, vec![0, 1, 2]) - find(&hi, vec![3]);
        assert!(r_hi < r_lo);
    }

    #[test]
    fn csv_layout() {
        let f = ModelFamily::SobolevSequence { n: 2 };
        let t = exact_posterior_table(&f, &[1.0, 0.5], &PriorConfig::default(), 10).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "tau,structure_json,log_weight,log_marginal,projected_norm");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("1,\"{\"\"prefix\"\":1}\","));
        assert!(!text.contains('\r'));
    }

    #[test]
    fn conditional_sampler_without_penalty_is_gaussian() {
        let f = ModelFamily::sparse_regression(DMatrix::identity(1, 1));
        let op = build_design(&f, Single(1), &Structure::Support(vec![0])).unwrap();
        let mut s = ConditionalSampler::new(&op, &[0.5], 0.0).unwrap();
        let mut rng = stream(12);
        let n = 100_000;
        let mut draws = Vec::with_capacity(n);
        for _ in 0..n {
            s.step(&mut rng);
            draws.push(s.current()[0]);
        }
        assert_eq!(s.acceptance_rate(), 1.0);
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.015);
        assert!((var - 1.0).abs() < 0.02);
        assert_eq!(s.log_acceptance(1.3, 1.3), 0.0);
    }

    #[test]
    fn conditional_variance_matches_quadrature() {
        let f = ModelFamily::sparse_regression(DMatrix::identity(1, 1));
        let op = build_design(&f, Single(1), &Structure::Support(vec![0])).unwrap();
        let cfg = QuadConfig::default();
        let w = |q: f64| (-0.5 * q * q - q.abs()).exp();
        let z = integrate_scalar(w, -40.0, 40.0, &[0.0], cfg).unwrap();
        let var = integrate_scalar(|q| q * q * w(q), -40.0, 40.0, &[0.0], cfg).unwrap() / z;

        let mut s = ConditionalSampler::new(&op, &[0.0], 1.0).unwrap();
        let mut rng = stream(13);
        for _ in 0..1000 {
            s.step(&mut rng);
        }
        let n = 100_000;
        let sq: Vec<f64> = (0..n)
            .map(|_| {
                s.step(&mut rng);
                s.current()[0].powi(2)
            })
            .collect();
        let mean_q: f64 = sq.iter().sum::<f64>() / n as f64;
        // Batch-means standard error for the autocorrelated chain.
        let batches: Vec<f64> = sq.chunks(1000).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
        let bm = batches.iter().sum::<f64>() / batches.len() as f64;
        let se = (batches.iter().map(|b| (b - bm).powi(2)).sum::<f64>() / (batches.len() - 1) as f64
            / batches.len() as f64)
            .sqrt();
        assert!((mean_q - var).abs() < 3.0 * se, "{mean_q} vs {var} (se {se})");
    }

    #[test]
    fn expected_loss_matches_conditional_draws() {
        let x = gaussian_design(6, 2, 21);
        let f = ModelFamily::sparse_regression(x.clone());
        let z = Structure::Support(vec![0, 1]);
        let op = build_design(&f, Single(2), &z).unwrap();
        let y = [0.3, -1.2, 0.8, 2.0, 0.1, -0.4];
        let theta = [0.2, -1.0, 0.5, 1.5, 0.0, 0.0];
        let exact = expected_prediction_loss(&f, Single(2), &z, &y, &theta, 1.0).unwrap();
        let mut s = ConditionalSampler::new(&op, &y, 1.0).unwrap();
        let mut rng = stream(4);
        let n = 200_000;
        let mut acc = 0.0;
        for _ in 0..n {
            s.step(&mut rng);
            let th = op.apply(s.current().as_slice()).unwrap();
            acc += th.iter().zip(&theta).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        }
        assert!((acc / n as f64 - exact).abs() < 0.03 * exact, "{} vs {exact}", acc / n as f64);
    }

    #[test]
    fn sample_q_conditional_is_reproducible() {
        let f = ModelFamily::sparse_regression(gaussian_design(5, 2, 1));
        let op = build_design(&f, Single(2), &Structure::Support(vec![0, 1])).unwrap();
        let a = sample_q_conditional(&op, &[1.0; 5], 1.0, &mut stream(3), 10).unwrap();
        let b = sample_q_conditional(&op, &[1.0; 5], 1.0, &mut stream(3), 10).unwrap();
        assert_eq!(a, b);
        assert!(sample_q_conditional(&op, &[1.0; 5], 1.0, &mut stream(3), 0).is_err());
    }
}
