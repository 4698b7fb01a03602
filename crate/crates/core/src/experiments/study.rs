use std::io::Write;

use num_bigint::BigUint;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{compute_losses, generate_noise, generate_truth, Estimator, LossReport, LossSettings, PosteriorSource, Scenario};
use crate::error::{Error, Result};
use crate::family::ModelFamily;
use crate::marginal::exact_posterior_table;
use crate::prior::PriorConfig;
use crate::rng::substream;
use crate::sampler::run_chain;

const TRUTH_STREAM: u64 = 0;
const NOISE_STREAM: u64 = 1;
const POSTERIOR_STREAM: u64 = 2;

#[derive(Clone, Debug, Serialize)]
pub struct ReplicateRow {
    pub scenario_id: String,
    pub grid_point: usize,
    pub replicate: usize,
    pub estimator: &'static str,
    pub tau_star: String,
    pub epsilon_star: f64,
    #[serde(flatten)]
    pub losses: LossReport,
}

#[derive(Clone, Debug, Serialize)]
pub struct PointSummary {
    pub grid_point: usize,
    pub family: &'static str,
    pub data_len: usize,
    pub epsilon_star: f64,
    pub median_prediction: f64,
    pub q25_prediction: f64,
    pub q75_prediction: f64,
    /// `median_prediction / epsilon_star`.
    pub ratio: f64,
    pub median_l2_sq: Option<f64>,
    pub median_linf: Option<f64>,
    pub mean_exceedance: f64,
    pub mean_support_recovery: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RateReport {
    pub scenario_id: String,
    pub points: Vec<PointSummary>,
    /// Least-squares fit of log median prediction loss on log `eps(tau*)`;
    /// `None` with fewer than two distinct complexities.
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    #[serde(skip)]
    pub rows: Vec<ReplicateRow>,
}

/// Type-7 quantile of an unsorted sample.
pub(crate) fn quantile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * p;
    let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

pub(crate) fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Ordinary least squares `y = slope x + intercept`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (mx, my) = (mean(x), mean(y));
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx <= 1e-12 * mx.abs().max(1.0) {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

pub(crate) fn use_exact(family: &ModelFamily, estimator: Estimator, cap: u64) -> Result<bool> {
    Ok(match estimator {
        Estimator::Exact => true,
        Estimator::Mcmc => false,
        Estimator::Auto => {
            let mut total = BigUint::from(0u32);
            for tau in family.index_set() {
                total += family.structure_count(tau)?;
            }
            total <= BigUint::from(cap)
        }
    })
}

/// Posterior losses of one replicate under `prior`. Truth, noise and posterior
/// use separate substreams of `(seed, grid_point, replicate)`, so runs that
/// differ only in the prior share their data.
pub(crate) fn replicate_with_prior(
    scenario: &Scenario,
    grid_point: usize,
    family: &ModelFamily,
    replicate: usize,
    prior: PriorConfig,
) -> Result<ReplicateRow> {
    let path = |s: u64| [grid_point as u64, replicate as u64, s];
    let (theta, truth) = generate_truth(scenario, family, &mut substream(scenario.seed, &path(TRUTH_STREAM)))?;
    let y = generate_noise(scenario.noise, &theta, &mut substream(scenario.seed, &path(NOISE_STREAM)))?;
    let mut rng = substream(scenario.seed, &path(POSTERIOR_STREAM));
    let settings = LossSettings {
        lambda: prior.lambda,
        delta: scenario.delta,
        coef_draws: scenario.coef_draws,
        q_steps: scenario.chain.q_steps,
    };
    let exact = use_exact(family, scenario.estimator, scenario.cap)?;
    let losses = if exact {
        let table = exact_posterior_table(family, &y, &prior, scenario.cap)?;
        compute_losses(family, PosteriorSource::Table(&table), &y, &theta, &truth, settings, &mut rng)?
    } else {
        let config = scenario.chain.config(prior, rng.random());
        let chain = run_chain(family, &y, &config, &mut rng)?;
        compute_losses(family, PosteriorSource::Chain(&chain), &y, &theta, &truth, settings, &mut rng)?
    };
    if !losses.prediction_sq.is_finite() || !losses.complexity_exceed.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss at grid point {grid_point}, replicate {replicate}")));
    }
    Ok(ReplicateRow {
        scenario_id: scenario.id.clone(),
        grid_point,
        replicate,
        estimator: if exact { "exact" } else { "mcmc" },
        tau_star: truth.tau_star.to_string(),
        epsilon_star: family.epsilon(truth.tau_star)?,
        losses,
    })
}

pub fn run_replicate(scenario: &Scenario, grid_point: usize, family: &ModelFamily, replicate: usize) -> Result<ReplicateRow> {
    replicate_with_prior(scenario, grid_point, family, replicate, scenario.prior)
}

fn summarize(grid_point: usize, family: &ModelFamily, rows: &[ReplicateRow]) -> PointSummary {
    let pred: Vec<f64> = rows.iter().map(|r| r.losses.prediction_sq).collect();
    let opt = |f: fn(&LossReport) -> Option<f64>| -> Option<Vec<f64>> { rows.iter().map(|r| f(&r.losses)).collect() };
    let epsilon_star = median(&rows.iter().map(|r| r.epsilon_star).collect::<Vec<_>>());
    let median_prediction = median(&pred);
    PointSummary {
        grid_point,
        family: family.kind().name(),
        data_len: family.data_len(),
        epsilon_star,
        median_prediction,
        q25_prediction: quantile(&pred, 0.25),
        q75_prediction: quantile(&pred, 0.75),
        ratio: median_prediction / epsilon_star,
        median_l2_sq: opt(|l| l.l2_sq).map(|v| median(&v)),
        median_linf: opt(|l| l.linf).map(|v| median(&v)),
        mean_exceedance: mean(&rows.iter().map(|r| r.losses.complexity_exceed).collect::<Vec<_>>()),
        mean_support_recovery: opt(|l| l.support_recovery).map(|v| mean(&v)),
    }
}

/// All replicates of one grid point, in replicate order.
pub fn run_point(scenario: &Scenario, grid_point: usize, family: &ModelFamily) -> Result<(PointSummary, Vec<ReplicateRow>)> {
    let rows: Vec<ReplicateRow> = (0..scenario.replicates)
        .into_par_iter()
        .map(|r| run_replicate(scenario, grid_point, family, r))
        .collect::<Result<_>>()?;
    Ok((summarize(grid_point, family, &rows), rows))
}

pub fn run_rate_study(scenario: &Scenario) -> Result<RateReport> {
    scenario.validate()?;
    let families = scenario.families()?;
    let mut points = Vec::with_capacity(families.len());
    let mut rows = Vec::new();
    for (g, family) in families.iter().enumerate() {
        let (summary, r) = run_point(scenario, g, family)?;
        points.push(summary);
        rows.extend(r);
    }
    let lx: Vec<f64> = points.iter().map(|p| p.epsilon_star.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.median_prediction.max(f64::MIN_POSITIVE).ln()).collect();
    let fit = fit_slope(&lx, &ly);
    Ok(RateReport {
        scenario_id: scenario.id.clone(),
        points,
        slope: fit.map(|f| f.0),
        intercept: fit.map(|f| f.1),
        rows,
    })
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out)
}

impl RateReport {
    pub fn write_replicates_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv_writer(out);
        w.write_record([
            "scenario_id",
            "grid_point",
            "replicate",
            "estimator",
            "tau_star",
            "epsilon_star",
            "prediction_sq",
            "l2_sq",
            "l1_sq",
            "linf",
            "complexity_exceed",
            "support_recovery",
            "map_tau",
        ])?;
        for r in &self.rows {
            let l = &r.losses;
            w.write_record([
                r.scenario_id.clone(),
                r.grid_point.to_string(),
                r.replicate.to_string(),
                r.estimator.to_string(),
                r.tau_star.clone(),
                r.epsilon_star.to_string(),
                l.prediction_sq.to_string(),
                opt_cell(l.l2_sq),
                opt_cell(l.l1_sq),
                opt_cell(l.linf),
                l.complexity_exceed.to_string(),
                opt_cell(l.support_recovery),
                l.map_tau.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv_writer(out);
        w.write_record([
            "scenario_id",
            "grid_point",
            "family",
            "data_len",
            "epsilon_star",
            "median_prediction",
            "q25_prediction",
            "q75_prediction",
            "ratio",
            "median_l2_sq",
            "median_linf",
            "mean_exceedance",
            "mean_support_recovery",
            "slope",
            "intercept",
        ])?;
        for p in &self.points {
            w.write_record([
                self.scenario_id.clone(),
                p.grid_point.to_string(),
                p.family.to_string(),
                p.data_len.to_string(),
                p.epsilon_star.to_string(),
                p.median_prediction.to_string(),
                p.q25_prediction.to_string(),
                p.q75_prediction.to_string(),
                p.ratio.to_string(),
                opt_cell(p.median_l2_sq),
                opt_cell(p.median_linf),
                p.mean_exceedance.to_string(),
                opt_cell(p.mean_support_recovery),
                opt_cell(self.slope),
                opt_cell(self.intercept),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// `{"x_label", "y_label", "points": [{"series", "x", "y"}]}`.
    pub fn plot_data(&self) -> serde_json::Value {
        let mut pts = Vec::new();
        for p in &self.points {
            for (series, y) in [
                ("median_prediction", p.median_prediction),
                ("q25_prediction", p.q25_prediction),
                ("q75_prediction", p.q75_prediction),
                ("epsilon_star", p.epsilon_star),
            ] {
                pts.push(serde_json::json!({ "series": series, "x": p.epsilon_star, "y": y }));
            }
        }
        serde_json::json!({
            "scenario_id": self.scenario_id,
            "x_label": "epsilon_star",
            "y_label": "prediction_sq",
            "points": pts,
        })
    }
}
