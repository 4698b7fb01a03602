//! Synthetic truths and noise, posterior loss summaries, restricted
//! eigenvalue constants, rate studies and numeric theory checks.

mod checks;
mod constants;
mod losses;
mod noise;
mod studies;
mod study;
mod truth;

pub use checks::{pythagorean_residuals, theory_checks, FamilyCheck, TheoryReport};
pub use constants::{restricted_constants, RestrictedConstants};
pub use losses::{compute_losses, LossReport, LossSettings, PosteriorSource};
pub use noise::generate_noise;
pub use studies::{
    exceedance_study, graphon_block_bias, graphon_truth_bias, linf_study, two_level_study, ExceedancePoint,
    ExceedanceReport, LinfReport, TwoLevelReport, TwoLevelSettings,
};
pub use study::{
    fit_slope, run_point, run_rate_study, run_replicate, PointSummary, RateReport, ReplicateRow,
};
pub use truth::{generate_truth, graphon_value, weak_lq_coefficients, GraphonShape, TruthRecord};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::family::{FamilyDescriptor, FamilyKind, ModelFamily, ModelIndex};
use crate::prior::PriorConfig;
use crate::sampler::ChainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TruthKind {
    /// `theta* = X_{Z*} Q*` at index `tau`, with signal energy `snr * eps(tau)`.
    WellSpecified { tau: ModelIndex },
    /// Exchangeable graph from a shipped Holder-`alpha` graphon.
    Graphon {
        alpha: f64,
        #[serde(default)]
        shape: GraphonShape,
    },
    /// Weak `l_q` ball coefficients `|beta|_(j) = (k / j)^{1/q}`.
    WeakLq { q: f64, k: f64 },
    /// A well-specified signal at `tau` plus an orthogonal-direction
    /// perturbation carrying `misspec` of its energy.
    ApproxConstant {
        tau: ModelIndex,
        #[serde(default = "default_misspec")]
        misspec: f64,
    },
}

fn default_misspec() -> f64 {
    0.1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Gaussian,
    Rademacher,
    BernoulliGraph,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Enumeration when the structure count fits under `cap`, MCMC otherwise.
    #[default]
    Auto,
    Exact,
    Mcmc,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSettings {
    pub steps: u64,
    pub burn_in: u64,
    pub thin: u64,
    pub q_steps: usize,
}

impl Default for ChainSettings {
    fn default() -> Self {
        Self { steps: 20_000, burn_in: 2_000, thin: 50, q_steps: 200 }
    }
}

impl ChainSettings {
    pub fn config(&self, prior: PriorConfig, seed: u64) -> ChainConfig {
        ChainConfig {
            steps: self.steps,
            burn_in: self.burn_in,
            thin: self.thin,
            prior,
            seed,
            q_steps: self.q_steps,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub id: String,
    /// One family descriptor per grid point.
    pub grid: Vec<FamilyDescriptor>,
    pub truth: TruthKind,
    pub noise: NoiseKind,
    #[serde(default = "default_snr")]
    pub snr: f64,
    pub replicates: usize,
    pub seed: u64,
    #[serde(default)]
    pub prior: PriorConfig,
    #[serde(default)]
    pub estimator: Estimator,
    #[serde(default)]
    pub chain: ChainSettings,
    /// Exceedance threshold `(1 + delta) eps(tau*)`.
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_cap")]
    pub cap: u64,
    /// Posterior draws used for coefficient losses from an exact table.
    #[serde(default = "default_coef_draws")]
    pub coef_draws: usize,
}

fn default_snr() -> f64 {
    1.0
}

fn default_delta() -> f64 {
    0.5
}

fn default_cap() -> u64 {
    1_000_000
}

fn default_coef_draws() -> usize {
    200
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn families(&self) -> Result<Vec<ModelFamily>> {
        self.grid.iter().map(|d| d.build()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::config("scenario grid is empty"));
        }
        if self.replicates == 0 {
            return Err(Error::config("replicates must be at least 1"));
        }
        if !(self.snr > 0.0 && self.snr.is_finite()) {
            return Err(Error::config("snr must be positive"));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::config("delta must be nonnegative"));
        }
        self.prior.validate()?;
        let c = self.chain;
        if c.steps <= c.burn_in || c.thin == 0 || c.q_steps == 0 {
            return Err(Error::config("chain settings need steps > burn_in, thin >= 1 and q_steps >= 1"));
        }
        for fam in self.families()? {
            let kind = fam.kind();
            match &self.truth {
                TruthKind::WellSpecified { tau } | TruthKind::ApproxConstant { tau, .. } => {
                    if !fam.contains_index(*tau) {
                        return Err(Error::config(format!("truth index {tau} outside the {} index set", kind.name())));
                    }
                }
                TruthKind::Graphon { alpha, .. } => {
                    if kind != FamilyKind::Sbm {
                        return Err(Error::config("graphon truths need the sbm family"));
                    }
                    if !(*alpha > 0.0) {
                        return Err(Error::config("graphon alpha must be positive"));
                    }
                }
                TruthKind::WeakLq { q, k } => {
                    if kind != FamilyKind::SparseRegression {
                        return Err(Error::config("weak_lq truths need the sparse_regression family"));
                    }
                    if !(*q > 0.0 && *q <= 1.0) || !(*k > 0.0) {
                        return Err(Error::config("weak_lq needs q in (0, 1] and k > 0"));
                    }
                }
            }
            if self.noise == NoiseKind::BernoulliGraph {
                let graph_truth = matches!(self.truth, TruthKind::Graphon { .. })
                    || (kind == FamilyKind::Sbm && matches!(self.truth, TruthKind::WellSpecified { .. }));
                if !graph_truth {
                    return Err(Error::config("bernoulli_graph noise needs an sbm or graphon truth"));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_parses_and_validates() {
        let text = r#"{
            "id": "sbm",
            "grid": [{"family": "sbm", "n": 8}],
            "truth": {"kind": "well_specified", "tau": 2},
            "noise": "bernoulli_graph",
            "replicates": 2,
            "seed": 1
        }"#;
        let s = Scenario::from_json(text).unwrap();
        assert_eq!(s.truth, TruthKind::WellSpecified { tau: ModelIndex::Single(2) });
        assert_eq!(s.delta, 0.5);
        assert_eq!(s.prior, PriorConfig::default());

        let bad = text.replace("\"sbm\", \"n\": 8", "\"sparse_regression\", \"n\": 8, \"p\": 4");
        assert!(Scenario::from_json(&bad).is_err());
        let zero = text.replace("\"replicates\": 2", "\"replicates\": 0");
        assert!(Scenario::from_json(&zero).is_err());
        let unknown = text.replace("\"seed\": 1", "\"seed\": 1, \"bogus\": 3");
        assert!(Scenario::from_json(&unknown).is_err());
    }
}
