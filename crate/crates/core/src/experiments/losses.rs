use rand::Rng;
use serde::Serialize;

use super::TruthRecord;
use crate::error::{Error, Result};
use crate::family::{ModelFamily, ModelIndex};
use crate::instances::{build_design, coefficients, Structure};
use crate::marginal::{expected_prediction_loss, sample_q_conditional, PosteriorTable};
use crate::sampler::ChainOutput;

/// Entries this far below the top log weight are left out of table
/// averages; together they carry less than `count * e^{-40}` of the mass.
const NEGLIGIBLE_LOG_WEIGHT: f64 = -40.0;

pub enum PosteriorSource<'a> {
    Table(&'a PosteriorTable),
    Chain(&'a ChainOutput),
}

#[derive(Clone, Copy, Debug)]
pub struct LossSettings {
    pub lambda: f64,
    pub delta: f64,
    pub coef_draws: usize,
    pub q_steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LossReport {
    /// Posterior mean of `||X_Z Q - theta*||^2`.
    pub prediction_sq: f64,
    pub l2_sq: Option<f64>,
    /// Posterior mean of `||beta - beta*||_1^2`.
    pub l1_sq: Option<f64>,
    pub linf: Option<f64>,
    /// Per-draw `||beta - beta*||_inf`, for pooled quantiles.
    #[serde(skip)]
    pub linf_draws: Vec<f64>,
    /// Posterior probability that `eps(tau) > (1 + delta) eps(tau*)`.
    pub complexity_exceed: f64,
    /// Posterior probability of the true structure, when one exists.
    pub support_recovery: Option<f64>,
    pub map_tau: ModelIndex,
}

#[derive(Default)]
struct CoefAcc {
    l2: f64,
    l1: f64,
    linf: f64,
    count: usize,
    linf_draws: Vec<f64>,
}

impl CoefAcc {
    fn add(&mut self, beta: &[f64], truth: &[f64]) {
        let (mut l2, mut l1, mut li) = (0.0, 0.0, 0.0f64);
        for (b, t) in beta.iter().zip(truth) {
            let d = (b - t).abs();
            l2 += d * d;
            l1 += d;
            li = li.max(d);
        }
        self.l2 += l2;
        self.l1 += l1 * l1;
        self.linf += li;
        self.linf_draws.push(li);
        self.count += 1;
    }

    fn finish(self) -> (Option<f64>, Option<f64>, Option<f64>, Vec<f64>) {
        if self.count == 0 {
            return (None, None, None, Vec::new());
        }
        let c = self.count as f64;
        (Some(self.l2 / c), Some(self.l1 / c), Some(self.linf / c), self.linf_draws)
    }
}

/// Loss summaries of one posterior against the truth. Prediction losses use
/// the closed-form conditional expectation given each structure; coefficient
/// losses average over posterior draws of `Q`.
pub fn compute_losses<R: Rng + ?Sized>(
    family: &ModelFamily,
    source: PosteriorSource<'_>,
    y: &[f64],
    theta_star: &[f64],
    truth: &TruthRecord,
    settings: LossSettings,
    rng: &mut R,
) -> Result<LossReport> {
    let threshold = (1.0 + settings.delta) * family.epsilon(truth.tau_star)?;
    let exceeds = |tau: ModelIndex| -> Result<bool> { Ok(family.epsilon(tau)? > threshold) };
    let beta_star = if family.has_coefficients() { truth.beta.as_deref() } else { None };
    let truth_z: Option<&Structure> = truth.structure.as_ref();
    let mut coef = CoefAcc::default();

    let report = match source {
        PosteriorSource::Table(table) => {
            let top = table.entries.iter().map(|e| e.log_weight).fold(f64::NEG_INFINITY, f64::max);
            let (mut pred, mut exceed, mut recovered) = (0.0, 0.0, 0.0);
            for e in &table.entries {
                let w = e.log_weight.exp();
                if exceeds(e.tau)? {
                    exceed += w;
                }
                if truth_z == Some(&e.structure) {
                    recovered += w;
                }
                if e.log_weight - top < NEGLIGIBLE_LOG_WEIGHT {
                    continue;
                }
                pred += w * expected_prediction_loss(family, e.tau, &e.structure, y, theta_star, settings.lambda)?;
            }
            if let Some(bstar) = beta_star {
                let weights: Vec<f64> = table.entries.iter().map(|e| e.log_weight.exp()).collect();
                let total: f64 = weights.iter().sum();
                for _ in 0..settings.coef_draws {
                    let mut u = rng.random::<f64>() * total;
                    let mut pick = weights.len() - 1;
                    for (i, w) in weights.iter().enumerate() {
                        if u < *w {
                            pick = i;
                            break;
                        }
                        u -= w;
                    }
                    let e = &table.entries[pick];
                    let design = build_design(family, e.tau, &e.structure)?;
                    let q = sample_q_conditional(&design, y, settings.lambda, rng, settings.q_steps)?;
                    let beta = coefficients(family, &e.structure, q.as_slice()).expect("coefficient family");
                    coef.add(&beta, bstar);
                }
            }
            let map_tau = table
                .index_marginals()
                .into_iter()
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .map(|x| x.0)
                .expect("nonempty table");
            let (l2_sq, l1_sq, linf, linf_draws) = coef.finish();
            LossReport {
                prediction_sq: pred.max(0.0),
                l2_sq,
                l1_sq,
                linf,
                linf_draws,
                complexity_exceed: exceed.clamp(0.0, 1.0),
                support_recovery: truth_z.map(|_| recovered.clamp(0.0, 1.0)),
                map_tau,
            }
        }
        PosteriorSource::Chain(chain) => {
            if chain.draws.is_empty() {
                return Err(Error::domain("posterior draws are empty"));
            }
            let mut pred = 0.0;
            let mut recovered = 0usize;
            for d in &chain.draws {
                pred += expected_prediction_loss(family, d.tau, &d.structure, y, theta_star, settings.lambda)?;
                if truth_z == Some(&d.structure) {
                    recovered += 1;
                }
                if let Some(bstar) = beta_star {
                    let beta = coefficients(family, &d.structure, &d.q).expect("coefficient family");
                    coef.add(&beta, bstar);
                }
            }
            let nd = chain.draws.len() as f64;
            let total: u64 = chain.visits.iter().map(|v| v.1).sum();
            let mut exceed = 0u64;
            for &(tau, c) in &chain.visits {
                if exceeds(tau)? {
                    exceed += c;
                }
            }
            let map_tau = chain.visits.iter().max_by_key(|v| v.1).map(|v| v.0).expect("visits recorded");
            let (l2_sq, l1_sq, linf, linf_draws) = coef.finish();
            LossReport {
                prediction_sq: pred / nd,
                l2_sq,
                l1_sq,
                linf,
                linf_draws,
                complexity_exceed: exceed as f64 / total as f64,
                support_recovery: truth_z.map(|_| recovered as f64 / nd),
                map_tau,
            }
        }
    };
    Ok(report)
}
