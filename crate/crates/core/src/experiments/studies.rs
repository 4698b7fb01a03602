use std::sync::Arc;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::study::{median, quantile, replicate_with_prior, use_exact};
use super::{compute_losses, ChainSettings, Estimator, LossReport, LossSettings, PosteriorSource, Scenario, TruthKind, TruthRecord};
use crate::error::{Error, Result};
use crate::family::{FamilyKind, ModelFamily, ModelIndex};
use crate::instances::Structure;
use crate::marginal::exact_posterior_table;
use crate::prior::PriorConfig;
use crate::rng::substream;
use crate::sampler::run_chain;

#[derive(Clone, Debug, Serialize)]
pub struct ExceedancePoint {
    pub d: f64,
    pub mean_exceedance: f64,
    pub per_replicate: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExceedanceReport {
    pub points: Vec<ExceedancePoint>,
    /// Mean exceedance weakly decreasing along the `D` grid.
    pub monotone: bool,
}

/// Mean posterior exceedance at each `D` on the first grid point. Every `D`
/// reuses the same truths, noise and posterior streams.
pub fn exceedance_study(scenario: &Scenario, d_grid: &[f64]) -> Result<ExceedanceReport> {
    scenario.validate()?;
    let family = scenario.families()?.remove(0);
    let mut points = Vec::with_capacity(d_grid.len());
    for &d in d_grid {
        let prior = PriorConfig::new(scenario.prior.lambda, d)?;
        let per_replicate: Vec<f64> = (0..scenario.replicates)
            .into_par_iter()
            .map(|r| replicate_with_prior(scenario, 0, &family, r, prior).map(|row| row.losses.complexity_exceed))
            .collect::<Result<_>>()?;
        let mean_exceedance = per_replicate.iter().sum::<f64>() / per_replicate.len() as f64;
        points.push(ExceedancePoint { d, mean_exceedance, per_replicate });
    }
    let monotone = points.windows(2).all(|w| w[1].mean_exceedance <= w[0].mean_exceedance);
    Ok(ExceedanceReport { points, monotone })
}

#[derive(Clone, Debug, Serialize)]
pub struct LinfReport {
    /// 0.95-quantile of `||beta - beta*||_inf` pooled over every posterior
    /// draw of every replicate.
    pub quantile_95: f64,
    /// `4 sqrt(ln p / n)`.
    pub bound: f64,
    pub draws: usize,
    pub mean_support_recovery: f64,
    pub passed: bool,
}

/// Coefficient sup-norm study on the first grid point of a sparse-regression
/// scenario.
pub fn linf_study(scenario: &Scenario) -> Result<LinfReport> {
    scenario.validate()?;
    let family = scenario.families()?.remove(0);
    let ModelFamily::SparseRegression { design, .. } = &family else {
        return Err(Error::config("linf study needs the sparse_regression family"));
    };
    let (n, p) = (design.nrows() as f64, design.ncols() as f64);
    let rows: Vec<LossReport> = (0..scenario.replicates)
        .into_par_iter()
        .map(|r| replicate_with_prior(scenario, 0, &family, r, scenario.prior).map(|row| row.losses))
        .collect::<Result<_>>()?;
    let pooled: Vec<f64> = rows.iter().flat_map(|l| l.linf_draws.iter().copied()).collect();
    if pooled.is_empty() {
        return Err(Error::domain("linf study produced no coefficient draws"));
    }
    let quantile_95 = quantile(&pooled, 0.95);
    let bound = 4.0 * (p.ln() / n).sqrt();
    let recovery: Vec<f64> = rows.iter().filter_map(|l| l.support_recovery).collect();
    Ok(LinfReport {
        quantile_95,
        bound,
        draws: pooled.len(),
        mean_support_recovery: recovery.iter().sum::<f64>() / recovery.len().max(1) as f64,
        passed: quantile_95 <= bound,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct TwoLevelSettings {
    pub p: usize,
    pub m: usize,
    /// Nonzero rows of `B*`.
    pub s_star: usize,
    /// Nonzero cells in each nonzero row.
    pub cells_per_row: usize,
    /// Signal energy `snr * eps` at the two-level truth index.
    pub snr: f64,
    pub s_max: usize,
    pub replicates: usize,
    pub seed: u64,
    pub prior: PriorConfig,
    pub chain: ChainSettings,
    pub cap: u64,
    pub coef_draws: usize,
}

impl Default for TwoLevelSettings {
    fn default() -> Self {
        Self {
            p: 16,
            m: 8,
            s_star: 2,
            cells_per_row: 2,
            snr: 6.0,
            s_max: 6,
            replicates: 30,
            seed: 7,
            prior: PriorConfig::default(),
            chain: ChainSettings::default(),
            cap: 1_000_000,
            coef_draws: 200,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TwoLevelReport {
    /// `s* (m + ln(e p / s*))`.
    pub rate: f64,
    /// Median posterior `||B - B*||_F^2` over the rate.
    pub two_level_ratio: f64,
    pub one_level_ratio: f64,
    pub two_level_median_linf: f64,
    pub one_level_median_linf: f64,
    pub passed: bool,
}

fn posterior_losses(
    family: &ModelFamily,
    y: &[f64],
    theta: &[f64],
    truth: &TruthRecord,
    settings: &TwoLevelSettings,
    rng: &mut impl Rng,
) -> Result<LossReport> {
    let losses = LossSettings { lambda: settings.prior.lambda, delta: 0.5, coef_draws: settings.coef_draws, q_steps: settings.chain.q_steps };
    if use_exact(family, Estimator::Auto, settings.cap)? {
        let table = exact_posterior_table(family, y, &settings.prior, settings.cap)?;
        compute_losses(family, PosteriorSource::Table(&table), y, theta, truth, losses, rng)
    } else {
        let config = settings.chain.config(settings.prior, rng.random());
        let chain = run_chain(family, y, &config, rng)?;
        compute_losses(family, PosteriorSource::Chain(&chain), y, theta, truth, losses, rng)
    }
}

/// Two-level versus one-level group posteriors on `Y = B* + W` with identity
/// design, where `B*` has `s*` nonzero rows of `cells_per_row` nonzero cells.
pub fn two_level_study(settings: &TwoLevelSettings) -> Result<TwoLevelReport> {
    let (p, m, s) = (settings.p, settings.m, settings.s_star);
    if s == 0 || s > settings.s_max || settings.s_max > p || settings.cells_per_row == 0 || settings.cells_per_row > m {
        return Err(Error::config("two-level study needs 1 <= s* <= s_max <= p and 1 <= cells_per_row <= m"));
    }
    settings.prior.validate()?;
    let two = ModelFamily::GroupTwoLevel { p, m, s_max: settings.s_max };
    let one = ModelFamily::GroupSparsity { design: Arc::new(DMatrix::identity(p, p)), m, s_max: settings.s_max };
    let t = s * settings.cells_per_row;
    let tau_two = ModelIndex::Pair(s, t);
    let amplitude = (settings.snr * two.epsilon(tau_two)? / t as f64).sqrt();

    let per_rep: Vec<(LossReport, LossReport)> = (0..settings.replicates)
        .into_par_iter()
        .map(|r| -> Result<(LossReport, LossReport)> {
            let mut rng = substream(settings.seed, &[r as u64, 0]);
            let mut rows: Vec<usize> = sample(&mut rng, p, s).into_vec();
            rows.sort_unstable();
            let mut b = DMatrix::<f64>::zeros(p, m);
            let mut cells = Vec::with_capacity(t);
            for &i in &rows {
                for j in sample(&mut rng, m, settings.cells_per_row).into_vec() {
                    b[(i, j)] = if rng.random::<bool>() { amplitude } else { -amplitude };
                    cells.push((i, j));
                }
            }
            cells.sort_unstable();
            let noise = DMatrix::<f64>::from_fn(p, m, |_, _| rng.sample(rand_distr::StandardNormal));
            let y = &b + noise;

            let row_major = |a: &DMatrix<f64>| -> Vec<f64> { a.transpose().as_slice().to_vec() };
            let col_major = |a: &DMatrix<f64>| -> Vec<f64> { a.as_slice().to_vec() };
            let truth_two = TruthRecord {
                tau_star: tau_two,
                structure: Some(Structure::Cells(cells.clone())),
                q: Some(cells.iter().map(|&(i, j)| b[(i, j)]).collect()),
                beta: Some(row_major(&b)),
                xi: None,
            };
            let truth_one = TruthRecord {
                tau_star: ModelIndex::Single(s),
                structure: Some(Structure::Support(rows.clone())),
                q: None,
                beta: Some(col_major(&b)),
                xi: None,
            };
            let mut post = substream(settings.seed, &[r as u64, 1]);
            let l_two = posterior_losses(&two, &row_major(&y), &row_major(&b), &truth_two, settings, &mut post)?;
            let mut post = substream(settings.seed, &[r as u64, 2]);
            let l_one = posterior_losses(&one, &col_major(&y), &col_major(&b), &truth_one, settings, &mut post)?;
            Ok((l_two, l_one))
        })
        .collect::<Result<_>>()?;

    let pick = |f: fn(&(LossReport, LossReport)) -> Option<f64>| -> Result<Vec<f64>> {
        per_rep.iter().map(|x| f(x).ok_or_else(|| Error::Numeric("missing coefficient loss".into()))).collect()
    };
    let rate = s as f64 * (m as f64 + 1.0 + (p as f64 / s as f64).ln());
    let two_level_ratio = median(&pick(|x| x.0.l2_sq)?) / rate;
    let one_level_ratio = median(&pick(|x| x.1.l2_sq)?) / rate;
    let two_level_median_linf = median(&pick(|x| x.0.linf)?);
    let one_level_median_linf = median(&pick(|x| x.1.linf)?);
    let passed =
        (1.0 / 3.0..=3.0).contains(&two_level_ratio) && two_level_median_linf < one_level_median_linf;
    Ok(TwoLevelReport { rate, two_level_ratio, one_level_ratio, two_level_median_linf, one_level_median_linf, passed })
}

/// Squared distance from `theta` to its best `k`-block approximation, with
/// nodes grouped into `k` equal-size blocks by the rank of `xi` and each
/// block pair replaced by its average.
pub fn graphon_block_bias(theta: &[f64], xi: &[f64], k: usize) -> Result<f64> {
    let n = xi.len();
    if n < 2 || theta.len() != n * (n - 1) {
        return Err(Error::DimensionMismatch { expected: n * n.saturating_sub(1), got: theta.len() });
    }
    if k == 0 || k > n {
        return Err(Error::domain(format!("block count {k} outside [1, {n}]")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| xi[a].total_cmp(&xi[b]).then(a.cmp(&b)));
    let mut block = vec![0usize; n];
    for (rank, &node) in order.iter().enumerate() {
        block[node] = rank * k / n;
    }
    let cell = |i: usize, j: usize| i * (n - 1) + if j < i { j } else { j - 1 };
    let mut sum = vec![0.0; k * k];
    let mut count = vec![0usize; k * k];
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            let b = block[i] * k + block[j];
            sum[b] += theta[cell(i, j)];
            count[b] += 1;
        }
    }
    let mut bias = 0.0;
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            let b = block[i] * k + block[j];
            bias += (theta[cell(i, j)] - sum[b] / count[b] as f64).powi(2);
        }
    }
    Ok(bias)
}

/// Block bias of a graphon scenario's truth at its reference block count.
pub fn graphon_truth_bias(scenario: &Scenario, family: &ModelFamily, seed: u64) -> Result<f64> {
    if !matches!(scenario.truth, TruthKind::Graphon { .. }) || family.kind() != FamilyKind::Sbm {
        return Err(Error::config("graphon bias needs a graphon truth on the sbm family"));
    }
    let (theta, truth) = super::generate_truth(scenario, family, &mut substream(seed, &[]))?;
    let ModelIndex::Single(k) = truth.tau_star else { unreachable!("sbm indices are single") };
    graphon_block_bias(&theta, truth.xi.as_deref().expect("graphon truths record xi"), k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::{graphon_value, GraphonShape};

    #[test]
    fn constant_graphon_has_no_bias() {
        let n = 6;
        let theta = vec![0.4; n * (n - 1)];
        let xi = [0.9, 0.1, 0.5, 0.3, 0.7, 0.2];
        for k in 1..=n {
            assert!(graphon_block_bias(&theta, &xi, k).unwrap().abs() < 1e-28);
        }
    }

    /// Oracle: a graphon that is piecewise constant on [0, 1/2) x [1/2, 1]
    /// has zero bias at k = 2 when the ξ halves have equal size.
    #[test]
    fn two_block_graphon_is_exact_at_two_blocks() {
        let xi = [0.1, 0.8, 0.3, 0.6, 0.2, 0.9];
        let n = xi.len();
        let f = |a: f64, b: f64| if (a < 0.5) == (b < 0.5) { 0.7 } else { 0.2 };
        let mut theta = Vec::new();
        for i in 0..n {
            for j in (0..n).filter(|&j| j != i) {
                theta.push(f(xi[i], xi[j]));
            }
        }
        assert!(graphon_block_bias(&theta, &xi, 2).unwrap() < 1e-28);
        let one = graphon_block_bias(&theta, &xi, 1).unwrap();
        // Hand value: 12 cells at 0.7 and 18 at 0.2, mean 0.4.
        let want = 12.0 * 0.3f64.powi(2) + 18.0 * 0.2f64.powi(2);
        assert!((one - want).abs() < 1e-12);
    }

    #[test]
    fn bias_shrinks_with_more_blocks() {
        let n = 40;
        let xi: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let mut theta = Vec::new();
        for i in 0..n {
            for j in (0..n).filter(|&j| j != i) {
                theta.push(graphon_value(&GraphonShape::default(), 1.0, xi[i], xi[j]));
            }
        }
        let b2 = graphon_block_bias(&theta, &xi, 2).unwrap();
        let b8 = graphon_block_bias(&theta, &xi, 8).unwrap();
        assert!(b8 < b2);
    }

    #[test]
    fn small_exceedance_study_runs_with_common_data() {
        let s = Scenario::from_json(
            r#"{
                "id": "sbm-small",
                "grid": [{"family": "sbm", "n": 6, "k_max": 3}],
                "truth": {"kind": "well_specified", "tau": 2},
                "noise": "bernoulli_graph",
                "snr": 0.5,
                "replicates": 4,
                "seed": 3,
                "estimator": "exact"
            }"#,
        )
        .unwrap();
        let r = exceedance_study(&s, &[0.5, 1.0, 2.0, 4.0]).unwrap();
        assert_eq!(r.points.len(), 4);
        // Exact tables: tilting by exp(-D eps) is monotone in D for every replicate.
        for w in r.points.windows(2) {
            for (a, b) in w[0].per_replicate.iter().zip(&w[1].per_replicate) {
                assert!(*b <= *a + 1e-12);
            }
        }
        assert!(r.monotone);
    }
}
