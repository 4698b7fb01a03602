//! Collapsed Metropolis–Hastings over `(tau, Z)` with `Q` integrated out,
//! followed by conditional draws of `Q` for the retained states.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::family::{ModelFamily, ModelIndex};
use crate::instances::{
    build_design, check_structure, closure_count, is_full_rank, propose_move, sample_structure, Structure,
    CLOSURE_ENUMERATION_CAP,
};
use crate::marginal::{sample_q_conditional, structure_marginal};
use crate::prior::{structure_log_prior_weight, PriorConfig};
use crate::rng::{substream, StreamRng};

/// Iterations between recomputations of the cached marginal.
pub const SPOT_CHECK_EVERY: u64 = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainConfig {
    /// Total iterations, burn-in included.
    pub steps: u64,
    pub burn_in: u64,
    #[serde(default = "default_thin")]
    pub thin: u64,
    #[serde(default)]
    pub prior: PriorConfig,
    #[serde(default)]
    pub seed: u64,
    /// Iterations of the conditional `Q` chain per retained draw.
    #[serde(default = "default_q_steps")]
    pub q_steps: usize,
}

fn default_thin() -> u64 {
    10
}

fn default_q_steps() -> usize {
    200
}

impl ChainConfig {
    pub fn new(steps: u64, burn_in: u64, prior: PriorConfig, seed: u64) -> Self {
        Self { steps, burn_in, thin: default_thin(), prior, seed, q_steps: default_q_steps() }
    }

    pub fn validate(&self) -> Result<()> {
        self.prior.validate()?;
        if self.steps <= self.burn_in {
            return Err(Error::config(format!("steps ({}) must exceed burn_in ({})", self.steps, self.burn_in)));
        }
        if self.thin == 0 {
            return Err(Error::config("thin must be at least 1"));
        }
        if self.q_steps == 0 {
            return Err(Error::config("q_steps must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChainState {
    pub tau: ModelIndex,
    pub structure: Structure,
    pub log_marginal: f64,
    pub log_prior_weight: f64,
    pub iteration: u64,
}

impl ChainState {
    pub fn log_target(&self) -> f64 {
        self.log_prior_weight + self.log_marginal
    }
}

/// Unnormalized collapsed posterior with cached closure counts.
pub struct CollapsedTarget<'a> {
    pub family: &'a ModelFamily,
    pub y: &'a [f64],
    pub prior: PriorConfig,
    closure: HashMap<ModelIndex, (f64, bool)>,
}

impl<'a> CollapsedTarget<'a> {
    pub fn new(family: &'a ModelFamily, y: &'a [f64], prior: PriorConfig) -> Result<Self> {
        prior.validate()?;
        if y.len() != family.data_len() {
            return Err(Error::DimensionMismatch { expected: family.data_len(), got: y.len() });
        }
        Ok(Self { family, y, prior, closure: HashMap::new() })
    }

    fn closure(&mut self, tau: ModelIndex) -> Result<(f64, bool)> {
        if let Some(c) = self.closure.get(&tau) {
            return Ok(*c);
        }
        let c = closure_count(self.family, tau, CLOSURE_ENUMERATION_CAP)?;
        self.closure.insert(tau, (c.log_count, c.exact));
        Ok((c.log_count, c.exact))
    }

    pub fn log_prior_weight(&mut self, tau: ModelIndex) -> Result<f64> {
        let (log_count, _) = self.closure(tau)?;
        structure_log_prior_weight(self.family, tau, log_count, &self.prior)
    }

    /// `(log_prior_weight, log_marginal)`, or `None` when `(tau, z)` carries no posterior mass.
    pub fn evaluate(&mut self, tau: ModelIndex, z: &Structure) -> Result<Option<(f64, f64)>> {
        if !self.family.contains_index(tau) || check_structure(self.family, tau, z).is_err() {
            return Ok(None);
        }
        if !is_full_rank(self.family, tau, z)? {
            return Ok(None);
        }
        let lp = self.log_prior_weight(tau)?;
        let lm = structure_marginal(self.family, tau, z, self.y, self.prior.lambda)?.log_marginal;
        Ok(Some((lp, lm)))
    }

    /// Indices whose closure count fell back to the unfiltered `|Z_tau|`.
    pub fn substituted_indices(&self) -> Vec<ModelIndex> {
        let mut v: Vec<ModelIndex> = self.closure.iter().filter(|(_, c)| !c.1).map(|(t, _)| *t).collect();
        v.sort();
        v
    }

    pub fn state(&mut self, tau: ModelIndex, z: Structure, iteration: u64) -> Result<ChainState> {
        let (lp, lm) = self.evaluate(tau, &z)?.ok_or_else(|| Error::CollinearStructure { structure: z.to_json() })?;
        Ok(ChainState { tau, structure: z, log_marginal: lm, log_prior_weight: lp, iteration })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct MoveCounters {
    pub proposed: u64,
    pub accepted: u64,
    pub self_proposals: u64,
    pub zero_mass_rejections: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    SelfProposal,
    Accepted,
    Rejected,
    ZeroMass,
}

/// One collapsed MH step. Candidates outside `Zbar_tau` are rejected outright.
pub fn collapsed_mh_step<R: Rng + ?Sized>(
    state: ChainState,
    target: &mut CollapsedTarget<'_>,
    counters: &mut MoveCounters,
    rng: &mut R,
) -> Result<(ChainState, StepOutcome)> {
    let proposal = propose_move(target.family, state.tau, &state.structure, rng);
    counters.proposed += 1;
    let iteration = state.iteration + 1;
    if proposal.is_self(state.tau, &state.structure) {
        counters.self_proposals += 1;
        counters.accepted += 1;
        return Ok((ChainState { iteration, ..state }, StepOutcome::SelfProposal));
    }
    let Some((lp, lm)) = target.evaluate(proposal.tau, &proposal.structure)? else {
        counters.zero_mass_rejections += 1;
        return Ok((ChainState { iteration, ..state }, StepOutcome::ZeroMass));
    };
    let log_alpha = (lp - state.log_prior_weight) + (lm - state.log_marginal) + proposal.log_ratio;
    if !log_alpha.is_finite() && log_alpha != f64::NEG_INFINITY {
        return Err(Error::Numeric(format!("acceptance ratio {log_alpha} at iteration {iteration}")));
    }
    if log_alpha >= 0.0 || rng.random::<f64>().ln() < log_alpha {
        counters.accepted += 1;
        let next = ChainState {
            tau: proposal.tau,
            structure: proposal.structure,
            log_marginal: lm,
            log_prior_weight: lp,
            iteration,
        };
        Ok((next, StepOutcome::Accepted))
    } else {
        Ok((ChainState { iteration, ..state }, StepOutcome::Rejected))
    }
}

/// A valid starting state: the lowest-complexity index with a full-rank
/// structure found among up to 1000 uniform draws from `Z_tau`.
pub fn initial_state<R: Rng + ?Sized>(target: &mut CollapsedTarget<'_>, rng: &mut R) -> Result<ChainState> {
    let family = target.family;
    let mut indices = family.index_set();
    let eps: Vec<f64> = indices.iter().map(|&t| family.epsilon(t)).collect::<Result<_>>()?;
    let mut order: Vec<usize> = (0..indices.len()).collect();
    order.sort_by(|&a, &b| eps[a].total_cmp(&eps[b]));
    indices = order.into_iter().map(|i| indices[i]).collect();
    for tau in indices {
        for _ in 0..1000 {
            let z = sample_structure(family, tau, rng)?;
            if is_full_rank(family, tau, &z)? {
                return target.state(tau, z, 0);
            }
        }
    }
    Err(Error::NoValidModels)
}

#[derive(Clone, Debug, Serialize)]
pub struct ModelDraw {
    pub iter: u64,
    pub tau: ModelIndex,
    pub structure: Structure,
    pub q: Vec<f64>,
    pub log_marginal: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ChainDiagnostics {
    pub acceptance_rate: f64,
    pub counters: MoveCounters,
    /// Post-burn-in iterations spent at each model index.
    pub index_visits: BTreeMap<String, u64>,
    /// Largest absolute gap between a cached and a recomputed log marginal.
    pub spot_check_residual: f64,
    pub closure_substituted: bool,
    pub substituted_indices: Vec<ModelIndex>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ChainOutput {
    pub draws: Vec<ModelDraw>,
    pub diagnostics: ChainDiagnostics,
    /// Post-burn-in visit counts keyed by model index, in index order.
    #[serde(skip)]
    pub visits: Vec<(ModelIndex, u64)>,
}

impl ChainOutput {
    /// Empirical post-burn-in frequency of each model index.
    pub fn index_frequencies(&self) -> Vec<(ModelIndex, f64)> {
        let total: u64 = self.visits.iter().map(|v| v.1).sum();
        self.visits.iter().map(|&(t, c)| (t, c as f64 / total as f64)).collect()
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for d in &self.draws {
            serde_json::to_writer(&mut out, d)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Run one chain: `config.steps` iterations, the first `burn_in` discarded,
/// every `thin`-th retained state paired with a conditional `Q` draw.
pub fn run_chain<R: Rng + ?Sized>(
    family: &ModelFamily,
    y: &[f64],
    config: &ChainConfig,
    rng: &mut R,
) -> Result<ChainOutput> {
    config.validate()?;
    let mut target = CollapsedTarget::new(family, y, config.prior)?;
    let mut state = initial_state(&mut target, rng)?;
    let mut counters = MoveCounters::default();
    let mut visits: BTreeMap<ModelIndex, u64> = BTreeMap::new();
    let mut retained: Vec<ChainState> = Vec::new();
    let mut spot = 0.0f64;

    for it in 0..config.steps {
        if it > 0 {
            state = collapsed_mh_step(state, &mut target, &mut counters, rng)?.0;
        }
        if state.iteration % SPOT_CHECK_EVERY == 0 {
            let fresh = structure_marginal(family, state.tau, &state.structure, y, config.prior.lambda)?.log_marginal;
            spot = spot.max((fresh - state.log_marginal).abs());
        }
        if it >= config.burn_in {
            *visits.entry(state.tau).or_default() += 1;
            if (it - config.burn_in) % config.thin == 0 {
                retained.push(state.clone());
            }
        }
    }

    let mut draws = Vec::with_capacity(retained.len());
    for s in retained {
        let design = build_design(family, s.tau, &s.structure)?;
        let q = sample_q_conditional(&design, y, config.prior.lambda, rng, config.q_steps)?;
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite Q draw at iteration {}", s.iteration)));
        }
        draws.push(ModelDraw {
            iter: s.iteration,
            tau: s.tau,
            structure: s.structure,
            q: q.as_slice().to_vec(),
            log_marginal: s.log_marginal,
        });
    }

    let substituted_indices = target.substituted_indices();
    let diagnostics = ChainDiagnostics {
        acceptance_rate: counters.accepted as f64 / counters.proposed.max(1) as f64,
        counters,
        index_visits: visits.iter().map(|(t, c)| (t.to_string(), *c)).collect(),
        spot_check_residual: spot,
        closure_substituted: !substituted_indices.is_empty(),
        substituted_indices,
    };
    Ok(ChainOutput { draws, diagnostics, visits: visits.into_iter().collect() })
}

/// Independent chains on substreams `(seed, chain)`, run in parallel.
pub fn run_chains(family: &ModelFamily, y: &[f64], config: &ChainConfig, chains: usize) -> Result<Vec<ChainOutput>> {
    (0..chains)
        .into_par_iter()
        .map(|c| {
            let mut rng: StreamRng = substream(config.seed, &[c as u64]);
            run_chain(family, y, config, &mut rng)
        })
        .collect()
}

/// Total-variation distance between two distributions over model indices.
pub fn index_tv_distance(a: &[(ModelIndex, f64)], b: &[(ModelIndex, f64)]) -> f64 {
    let mut m: BTreeMap<ModelIndex, (f64, f64)> = BTreeMap::new();
    for &(t, p) in a {
        m.entry(t).or_default().0 += p;
    }
    for &(t, p) in b {
        m.entry(t).or_default().1 += p;
    }
    0.5 * m.values().map(|(x, y)| (x - y).abs()).sum::<f64>()
}
