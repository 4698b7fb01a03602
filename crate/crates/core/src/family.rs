//! Structured-linear-model families, their model index sets, and the
//! complexity functions that drive the model-selection prior.
//!
//! A family fixes a finite index set `T`; each index `tau` carries an
//! effective dimension `ell(tau)`, a structure space `Z_tau` of known size,
//! and a complexity `eps(tau)` that dominates `ell(tau) + ln |Z_tau|`.
//! All logarithms are natural.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{ln_add_exp, ln_binomial, log_sum_exp};

/// Fixed design matrix shared between families and workers.
pub type Design = Arc<DMatrix<f64>>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelIndex {
    Single(usize),
    Pair(usize, usize),
}

impl fmt::Display for ModelIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelIndex::Single(a) => write!(f, "{a}"),
            ModelIndex::Pair(a, b) => write!(f, "[{a},{b}]"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    Sbm,
    Biclustering,
    SparseRegression,
    GroupSparsity,
    GroupTwoLevel,
    MultiTask,
    Dictionary,
    SobolevSequence,
    BesovLevel,
    AggregationRegression,
}

impl FamilyKind {
    pub fn name(self) -> &'static str {
        match self {
            FamilyKind::Sbm => "sbm",
            FamilyKind::Biclustering => "biclustering",
            FamilyKind::SparseRegression => "sparse_regression",
            FamilyKind::GroupSparsity => "group_sparsity",
            FamilyKind::GroupTwoLevel => "group_two_level",
            FamilyKind::MultiTask => "multi_task",
            FamilyKind::Dictionary => "dictionary",
            FamilyKind::SobolevSequence => "sobolev_sequence",
            FamilyKind::BesovLevel => "besov_level",
            FamilyKind::AggregationRegression => "aggregation_regression",
        }
    }
}

/// A structured-linear-model family with its (truncated) index set.
///
/// Vectorization conventions for the data vector `Y` (length `data_len`):
/// * SBM: off-diagonal cells `(i, j)`, `i != j`, row-major.
/// * biclustering, group-two-level: row-major `n x m` (resp. `p x m`).
/// * group sparsity, multi-task, dictionary: column-major `n x m` (resp. `n x d`).
#[derive(Clone, Debug)]
pub enum ModelFamily {
    Sbm { n: usize, k_max: usize },
    Biclustering { n: usize, m: usize, k_max: usize, l_max: usize },
    SparseRegression { design: Design, s_max: usize },
    GroupSparsity { design: Design, m: usize, s_max: usize },
    GroupTwoLevel { p: usize, m: usize, s_max: usize },
    MultiTask { design: Design, m: usize, k_max: usize },
    Dictionary { n: usize, d: usize, p_max: usize },
    SobolevSequence { n: usize },
    BesovLevel { level: u32 },
    AggregationRegression { design: Design, rank: usize },
}

/// Complexity record for one model index.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexityValue {
    pub tau: ModelIndex,
    pub epsilon: f64,
    pub ell: usize,
    pub log_count: f64,
}

fn ln(x: f64) -> f64 {
    x.ln()
}

/// `2 s ln(e p / s)`, the sparse-regression complexity.
fn sparse_eps(s: usize, p: usize) -> f64 {
    let s = s as f64;
    2.0 * s * (1.0 + ln(p as f64 / s))
}

/// `ln` of the number of `t`-subsets of an `s x m` grid that touch every row.
pub(crate) fn ln_row_covering_subsets(s: usize, m: usize, t: usize) -> f64 {
    if t < s || t > s * m {
        return f64::NEG_INFINITY;
    }
    // Coefficient of x^t in (sum_{c=1..m} C(m,c) x^c)^s, in log space.
    let row: Vec<f64> = (0..=m)
        .map(|c| if c == 0 { f64::NEG_INFINITY } else { ln_binomial(m as u64, c as u64) })
        .collect();
    let mut poly = vec![f64::NEG_INFINITY; 1];
    poly[0] = 0.0;
    for _ in 0..s {
        let mut next = vec![f64::NEG_INFINITY; poly.len() + m];
        for (i, &a) in poly.iter().enumerate() {
            if a == f64::NEG_INFINITY {
                continue;
            }
            for (c, &b) in row.iter().enumerate().skip(1) {
                next[i + c] = ln_add_exp(next[i + c], a + b);
            }
        }
        poly = next;
    }
    poly[t]
}

fn big_binomial(n: u64, k: u64) -> BigUint {
    if k > n {
        return BigUint::from(0u32);
    }
    let k = k.min(n - k);
    let mut acc = BigUint::from(1u32);
    for i in 0..k {
        acc *= BigUint::from(n - i);
        acc /= BigUint::from(i + 1);
    }
    acc
}

fn big_row_covering_subsets(s: usize, m: usize, t: usize) -> BigUint {
    let row: Vec<BigUint> = (0..=m).map(|c| big_binomial(m as u64, c as u64)).collect();
    let mut poly = vec![BigUint::from(1u32)];
    for _ in 0..s {
        let mut next = vec![BigUint::from(0u32); poly.len() + m];
        for (i, a) in poly.iter().enumerate() {
            for (c, b) in row.iter().enumerate().skip(1) {
                next[i + c] += a * b;
            }
        }
        poly = next;
    }
    poly.get(t).cloned().unwrap_or_else(|| BigUint::from(0u32))
}

/// Numerical rank with relative singular-value tolerance.
pub fn matrix_rank(x: &DMatrix<f64>) -> usize {
    if x.nrows() == 0 || x.ncols() == 0 {
        return 0;
    }
    let sv = x.clone().svd(false, false).singular_values;
    let max = sv.iter().copied().fold(0.0, f64::max);
    let tol = max * 1e-10 * (x.nrows().max(x.ncols()) as f64);
    sv.iter().filter(|&&v| v > tol).count()
}

impl ModelFamily {
    pub fn sbm(n: usize) -> Self {
        ModelFamily::Sbm { n, k_max: n }
    }

    pub fn sparse_regression(design: DMatrix<f64>) -> Self {
        let s_max = design.ncols().min(design.nrows());
        ModelFamily::SparseRegression { design: Arc::new(design), s_max }
    }

    /// Aggregation family; the rank is computed from the dictionary matrix and
    /// the first `rank` columns must span its column space.
    pub fn aggregation(design: DMatrix<f64>) -> Result<Self> {
        let rank = matrix_rank(&design);
        if rank == 0 {
            return Err(Error::config("aggregation design has rank 0"));
        }
        let lead = design.columns(0, rank).into_owned();
        if matrix_rank(&lead) != rank {
            return Err(Error::config(
                "aggregation design: the first rank(X) columns must span the column space",
            ));
        }
        Ok(ModelFamily::AggregationRegression { design: Arc::new(design), rank })
    }

    pub fn kind(&self) -> FamilyKind {
        match self {
            ModelFamily::Sbm { .. } => FamilyKind::Sbm,
            ModelFamily::Biclustering { .. } => FamilyKind::Biclustering,
            ModelFamily::SparseRegression { .. } => FamilyKind::SparseRegression,
            ModelFamily::GroupSparsity { .. } => FamilyKind::GroupSparsity,
            ModelFamily::GroupTwoLevel { .. } => FamilyKind::GroupTwoLevel,
            ModelFamily::MultiTask { .. } => FamilyKind::MultiTask,
            ModelFamily::Dictionary { .. } => FamilyKind::Dictionary,
            ModelFamily::SobolevSequence { .. } => FamilyKind::SobolevSequence,
            ModelFamily::BesovLevel { .. } => FamilyKind::BesovLevel,
            ModelFamily::AggregationRegression { .. } => FamilyKind::AggregationRegression,
        }
    }

    /// Length `N` of the data vector.
    pub fn data_len(&self) -> usize {
        match self {
            ModelFamily::Sbm { n, .. } => n * (n - 1),
            ModelFamily::Biclustering { n, m, .. } => n * m,
            ModelFamily::SparseRegression { design, .. } => design.nrows(),
            ModelFamily::GroupSparsity { design, m, .. } => design.nrows() * m,
            ModelFamily::GroupTwoLevel { p, m, .. } => p * m,
            ModelFamily::MultiTask { design, m, .. } => design.nrows() * m,
            ModelFamily::Dictionary { n, d, .. } => n * d,
            ModelFamily::SobolevSequence { n } => *n,
            ModelFamily::BesovLevel { level } => 1usize << level,
            ModelFamily::AggregationRegression { design, .. } => design.nrows(),
        }
    }

    /// Regression families whose parameter embeds into a coefficient vector.
    pub fn has_coefficients(&self) -> bool {
        matches!(
            self,
            ModelFamily::SparseRegression { .. }
                | ModelFamily::GroupSparsity { .. }
                | ModelFamily::GroupTwoLevel { .. }
                | ModelFamily::AggregationRegression { .. }
                | ModelFamily::BesovLevel { .. }
                | ModelFamily::SobolevSequence { .. }
        )
    }

    /// Length of the coefficient vector for families with coefficient semantics.
    pub fn coefficient_len(&self) -> Option<usize> {
        match self {
            ModelFamily::SparseRegression { design, .. }
            | ModelFamily::AggregationRegression { design, .. } => Some(design.ncols()),
            ModelFamily::GroupSparsity { design, m, .. } => Some(design.ncols() * m),
            ModelFamily::GroupTwoLevel { p, m, .. } => Some(p * m),
            ModelFamily::BesovLevel { level } => Some(1usize << level),
            ModelFamily::SobolevSequence { n } => Some(*n),
            _ => None,
        }
    }

    /// The finite index set `T`, in increasing order.
    pub fn index_set(&self) -> Vec<ModelIndex> {
        use ModelIndex::*;
        match self {
            ModelFamily::Sbm { n, k_max } => (1..=(*k_max).min(*n)).map(Single).collect(),
            ModelFamily::Biclustering { n, m, k_max, l_max } => {
                let mut v = Vec::new();
                for k in 1..=(*k_max).min(*n) {
                    for l in 1..=(*l_max).min(*m) {
                        v.push(Pair(k, l));
                    }
                }
                v
            }
            ModelFamily::SparseRegression { design, s_max }
            | ModelFamily::GroupSparsity { design, s_max, .. } => {
                (1..=(*s_max).min(design.ncols())).map(Single).collect()
            }
            ModelFamily::GroupTwoLevel { p, m, s_max } => {
                let mut v = Vec::new();
                for s in 1..=(*s_max).min(*p) {
                    for t in s..=s * m {
                        v.push(Pair(s, t));
                    }
                }
                v
            }
            ModelFamily::MultiTask { m, k_max, .. } => (1..=(*k_max).min(*m)).map(Single).collect(),
            ModelFamily::Dictionary { n, d, p_max } => {
                let mut v = Vec::new();
                for p in 1..=(*p_max).min(*n).min(*d) {
                    for s in 1..=p {
                        v.push(Pair(p, s));
                    }
                }
                v
            }
            ModelFamily::SobolevSequence { n } => (1..=*n).map(Single).collect(),
            ModelFamily::BesovLevel { level } => (1..=(1usize << level)).map(Single).collect(),
            ModelFamily::AggregationRegression { rank, .. } => (1..=*rank).map(Single).collect(),
        }
    }

    pub fn contains_index(&self, tau: ModelIndex) -> bool {
        use ModelIndex::*;
        match (self, tau) {
            (ModelFamily::Sbm { n, k_max }, Single(k)) => k >= 1 && k <= (*k_max).min(*n),
            (ModelFamily::Biclustering { n, m, k_max, l_max }, Pair(k, l)) => {
                k >= 1 && l >= 1 && k <= (*k_max).min(*n) && l <= (*l_max).min(*m)
            }
            (ModelFamily::SparseRegression { design, s_max }, Single(s))
            | (ModelFamily::GroupSparsity { design, s_max, .. }, Single(s)) => {
                s >= 1 && s <= (*s_max).min(design.ncols())
            }
            (ModelFamily::GroupTwoLevel { p, m, s_max }, Pair(s, t)) => {
                s >= 1 && s <= (*s_max).min(*p) && t >= s && t <= s * m
            }
            (ModelFamily::MultiTask { m, k_max, .. }, Single(k)) => k >= 1 && k <= (*k_max).min(*m),
            (ModelFamily::Dictionary { n, d, p_max }, Pair(p, s)) => {
                p >= 1 && p <= (*p_max).min(*n).min(*d) && s >= 1 && s <= p
            }
            (ModelFamily::SobolevSequence { n }, Single(k)) => k >= 1 && k <= *n,
            (ModelFamily::BesovLevel { level }, Single(s)) => s >= 1 && s <= (1usize << level),
            (ModelFamily::AggregationRegression { rank, .. }, Single(s)) => s >= 1 && s <= *rank,
            _ => false,
        }
    }

    fn check_index(&self, tau: ModelIndex) -> Result<()> {
        if self.contains_index(tau) {
            Ok(())
        } else {
            Err(Error::domain(format!(
                "model index {tau} is not in the index set of the {} family",
                self.kind().name()
            )))
        }
    }

    /// Effective dimension `ell(tau)`.
    pub fn ell(&self, tau: ModelIndex) -> Result<usize> {
        self.check_index(tau)?;
        use ModelIndex::*;
        Ok(match (self, tau) {
            (ModelFamily::Sbm { .. }, Single(k)) => k * k,
            (ModelFamily::Biclustering { .. }, Pair(k, l)) => k * l,
            (ModelFamily::SparseRegression { .. }, Single(s)) => s,
            (ModelFamily::GroupSparsity { m, .. }, Single(s)) => m * s,
            (ModelFamily::GroupTwoLevel { .. }, Pair(_, t)) => t,
            (ModelFamily::MultiTask { design, .. }, Single(k)) => design.ncols() * k,
            (ModelFamily::Dictionary { n, .. }, Pair(p, _)) => n * p,
            (ModelFamily::SobolevSequence { .. }, Single(k)) => k,
            (ModelFamily::BesovLevel { .. }, Single(s)) => s,
            (ModelFamily::AggregationRegression { .. }, Single(s)) => s,
            _ => unreachable!("index validated"),
        })
    }

    /// Complexity `eps(tau)` used by the model-index prior.
    pub fn epsilon(&self, tau: ModelIndex) -> Result<f64> {
        self.check_index(tau)?;
        use ModelIndex::*;
        Ok(match (self, tau) {
            (ModelFamily::Sbm { n, .. }, Single(k)) => (k * k) as f64 + *n as f64 * ln(k as f64),
            (ModelFamily::Biclustering { n, m, .. }, Pair(k, l)) => {
                (k * l) as f64 + *n as f64 * ln(k as f64) + *m as f64 * ln(l as f64)
            }
            (ModelFamily::SparseRegression { design, .. }, Single(s)) => sparse_eps(s, design.ncols()),
            (ModelFamily::GroupSparsity { design, m, .. }, Single(s)) => {
                let p = design.ncols() as f64;
                let s = s as f64;
                s * (*m as f64 + 1.0 + ln(p / s))
            }
            (ModelFamily::GroupTwoLevel { p, m, .. }, Pair(s, t)) => {
                let (pf, mf, sf, tf) = (*p as f64, *m as f64, s as f64, t as f64);
                mf * sf + sf * (1.0 + ln(pf / sf)) + tf * (1.0 + ln(mf * sf / tf))
            }
            (ModelFamily::MultiTask { design, m, .. }, Single(k)) => {
                (design.ncols() * k) as f64 + *m as f64 * ln(k as f64)
            }
            (ModelFamily::Dictionary { n, d, .. }, Pair(p, s)) => {
                let (pf, sf) = (p as f64, s as f64);
                3.0 * ((n * p) as f64 + *d as f64 * sf * (1.0 + ln(pf / sf)))
            }
            (ModelFamily::SobolevSequence { .. }, Single(k)) => 2.0 * k as f64,
            (ModelFamily::BesovLevel { level }, Single(s)) => sparse_eps(s, 1usize << level),
            (ModelFamily::AggregationRegression { design, rank }, Single(s)) => {
                if s == *rank {
                    2.0 * *rank as f64
                } else {
                    sparse_eps(s, design.ncols())
                }
            }
            _ => unreachable!("index validated"),
        })
    }

    /// Exponent `e` in the model-index prior weight `exp(-D e)`. Equals
    /// `eps(tau)` except for aggregation, whose prior uses `s ln(ep/s)` below
    /// the rank and `r` at the rank.
    pub fn prior_exponent(&self, tau: ModelIndex) -> Result<f64> {
        let eps = self.epsilon(tau)?;
        Ok(match self {
            ModelFamily::AggregationRegression { .. } => 0.5 * eps,
            _ => eps,
        })
    }

    /// Exact `ln |Z_tau|` (before the full-rank filter), via log-gamma.
    pub fn log_structure_count(&self, tau: ModelIndex) -> Result<f64> {
        self.check_index(tau)?;
        use ModelIndex::*;
        Ok(match (self, tau) {
            (ModelFamily::Sbm { n, .. }, Single(k)) => *n as f64 * ln(k as f64),
            (ModelFamily::Biclustering { n, m, .. }, Pair(k, l)) => {
                *n as f64 * ln(k as f64) + *m as f64 * ln(l as f64)
            }
            (ModelFamily::SparseRegression { design, .. }, Single(s))
            | (ModelFamily::GroupSparsity { design, .. }, Single(s)) => {
                ln_binomial(design.ncols() as u64, s as u64)
            }
            (ModelFamily::GroupTwoLevel { p, m, .. }, Pair(s, t)) => {
                ln_binomial(*p as u64, s as u64) + ln_row_covering_subsets(s, *m, t)
            }
            (ModelFamily::MultiTask { m, .. }, Single(k)) => *m as f64 * ln(k as f64),
            (ModelFamily::Dictionary { d, .. }, Pair(p, s)) => {
                let terms: Vec<f64> = (0..=s)
                    .map(|t| ln_binomial(p as u64, t as u64) + t as f64 * std::f64::consts::LN_2)
                    .collect();
                *d as f64 * log_sum_exp(&terms)
            }
            (ModelFamily::SobolevSequence { .. }, Single(_)) => 0.0,
            (ModelFamily::BesovLevel { level }, Single(s)) => {
                ln_binomial(1u64 << level, s as u64)
            }
            (ModelFamily::AggregationRegression { design, rank }, Single(s)) => {
                if s == *rank {
                    0.0
                } else {
                    ln_binomial(design.ncols() as u64, s as u64)
                }
            }
            _ => unreachable!("index validated"),
        })
    }

    /// Exact `|Z_tau|` as a big integer (independent of the log-gamma route).
    pub fn structure_count(&self, tau: ModelIndex) -> Result<BigUint> {
        self.check_index(tau)?;
        use ModelIndex::*;
        let pow = |b: usize, e: usize| BigUint::from(b).pow(e as u32);
        Ok(match (self, tau) {
            (ModelFamily::Sbm { n, .. }, Single(k)) => pow(k, *n),
            (ModelFamily::Biclustering { n, m, .. }, Pair(k, l)) => pow(k, *n) * pow(l, *m),
            (ModelFamily::SparseRegression { design, .. }, Single(s))
            | (ModelFamily::GroupSparsity { design, .. }, Single(s)) => {
                big_binomial(design.ncols() as u64, s as u64)
            }
            (ModelFamily::GroupTwoLevel { p, m, .. }, Pair(s, t)) => {
                big_binomial(*p as u64, s as u64) * big_row_covering_subsets(s, *m, t)
            }
            (ModelFamily::MultiTask { m, .. }, Single(k)) => pow(k, *m),
            (ModelFamily::Dictionary { d, .. }, Pair(p, s)) => {
                let mut col = BigUint::from(0u32);
                for t in 0..=s {
                    col += big_binomial(p as u64, t as u64) * pow(2, t);
                }
                col.pow(*d as u32)
            }
            (ModelFamily::SobolevSequence { .. }, Single(_)) => BigUint::from(1u32),
            (ModelFamily::BesovLevel { level }, Single(s)) => big_binomial(1u64 << level, s as u64),
            (ModelFamily::AggregationRegression { design, rank }, Single(s)) => {
                if s == *rank {
                    BigUint::from(1u32)
                } else {
                    big_binomial(design.ncols() as u64, s as u64)
                }
            }
            _ => unreachable!("index validated"),
        })
    }

    pub fn complexity(&self, tau: ModelIndex) -> Result<ComplexityValue> {
        Ok(ComplexityValue {
            tau,
            epsilon: self.epsilon(tau)?,
            ell: self.ell(tau)?,
            log_count: self.log_structure_count(tau)?,
        })
    }

    /// Complexity values over the whole index set.
    pub fn complexities(&self) -> Vec<ComplexityValue> {
        self.index_set()
            .into_iter()
            .map(|tau| self.complexity(tau).expect("index from index_set"))
            .collect()
    }

    /// True when the prior weighs each structure individually by
    /// `exp(-D eps)` instead of spreading `pi(tau)` uniformly over `Z_tau`.
    /// Only the two-level group prior does this.
    pub fn per_structure_prior(&self) -> bool {
        matches!(self, ModelFamily::GroupTwoLevel { .. })
    }
}

// ---------------------------------------------------------------------------
// Condition checks.

#[derive(Clone, Debug, Serialize)]
pub struct LargerViolation {
    pub tau: ModelIndex,
    pub epsilon: f64,
    pub required: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct LargerReport {
    pub checked: usize,
    pub violations: Vec<LargerViolation>,
}

impl LargerReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks `eps >= ell + ln |Z|` over a list of complexity values.
pub fn check_larger_values(values: &[ComplexityValue]) -> LargerReport {
    let violations = values
        .iter()
        .filter_map(|v| {
            let required = v.ell as f64 + v.log_count;
            // Equality holds exactly for SBM, biclustering and multi-task.
            let slack = 1e-10 * required.abs().max(1.0);
            (v.epsilon + slack < required).then_some(LargerViolation {
                tau: v.tau,
                epsilon: v.epsilon,
                required,
            })
        })
        .collect();
    LargerReport { checked: values.len(), violations }
}

pub fn check_larger(family: &ModelFamily) -> LargerReport {
    check_larger_values(&family.complexities())
}

#[derive(Clone, Debug, Serialize)]
pub struct CapacityViolation {
    pub t: usize,
    pub count: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct CapacityReport {
    pub t_max: usize,
    pub counts: Vec<usize>,
    pub violations: Vec<CapacityViolation>,
}

impl CapacityReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Counts `|{tau : t-1 < eps(tau) <= t}|` for `t = 1..=t_max` and flags counts above `t`.
pub fn check_capacity_values(epsilons: &[f64], t_max: usize) -> Result<CapacityReport> {
    if t_max == 0 {
        return Err(Error::domain("t_max must be at least 1"));
    }
    let mut counts = vec![0usize; t_max];
    for &e in epsilons {
        let t = e.ceil();
        if t >= 1.0 && t <= t_max as f64 {
            counts[t as usize - 1] += 1;
        }
    }
    let violations = counts
        .iter()
        .enumerate()
        .filter(|&(i, &c)| c > i + 1)
        .map(|(i, &c)| CapacityViolation { t: i + 1, count: c })
        .collect();
    Ok(CapacityReport { t_max, counts, violations })
}

pub fn check_capacity(family: &ModelFamily, t_max: usize) -> Result<CapacityReport> {
    let eps: Vec<f64> = family.complexities().iter().map(|c| c.epsilon).collect();
    check_capacity_values(&eps, t_max)
}

#[derive(Clone, Debug, Serialize)]
pub struct GrowthCheck {
    pub alpha: f64,
    pub lower_sum: f64,
    pub lower_bound: f64,
    pub upper_sum: f64,
    pub upper_bound: f64,
    pub inverse_sum: f64,
    pub passed: bool,
}

/// Evaluates the three growth sums over `eps` at exponent `beta`:
/// `sum_{eps<=a} e^{beta eps} <= 4 ceil(a) e^{beta ceil(a)}`,
/// `sum_{eps>a} e^{-beta eps} <= 4 a e^{-beta floor(a)}` and
/// `sum_{eps<=a} e^{-beta eps} <= 6`.
pub fn growth_sums(epsilons: &[f64], beta: f64, alpha: f64) -> GrowthCheck {
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    let mut inverse = Vec::new();
    for &e in epsilons {
        if e <= alpha {
            lower.push(beta * e);
            inverse.push(-beta * e);
        } else if -beta * e > (1e-16f64).ln() - 40.0 {
            upper.push(-beta * e);
        }
    }
    // Compare in log space: the sums overflow f64 for large alpha.
    let ln_lower = log_sum_exp(&lower);
    let ln_upper = log_sum_exp(&upper);
    let ln_inverse = log_sum_exp(&inverse);
    let ln_lower_bound = (4.0 * alpha.ceil()).ln() + beta * alpha.ceil();
    let ln_upper_bound = (4.0 * alpha).ln() - beta * alpha.floor();
    let tol = 1e-12;
    let passed = ln_lower <= ln_lower_bound + tol
        && ln_upper <= ln_upper_bound + tol
        && ln_inverse <= 6f64.ln() + tol;
    GrowthCheck {
        alpha,
        lower_sum: ln_lower.exp(),
        lower_bound: ln_lower_bound.exp(),
        upper_sum: ln_upper.exp(),
        upper_bound: ln_upper_bound.exp(),
        inverse_sum: ln_inverse.exp(),
        passed,
    }
}

pub fn check_growth(family: &ModelFamily, beta: f64, alphas: &[f64]) -> Vec<GrowthCheck> {
    let eps: Vec<f64> = family.complexities().iter().map(|c| c.epsilon).collect();
    alphas.iter().map(|&a| growth_sums(&eps, beta, a)).collect()
}

// ---------------------------------------------------------------------------
// JSON descriptor.

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    /// i.i.d. N(0,1) entries, columns rescaled to squared norm `n`.
    #[default]
    Gaussian,
    /// Columns orthogonal with squared norm `n`.
    Orthogonal,
    Identity,
}

/// `{"family": "...", "n": ..., "p": ..., "design": [[...]]}`; matrices row-major.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyDescriptor {
    pub family: Option<FamilyKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_max: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_max: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_max: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_max: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design_kind: Option<DesignKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design_seed: Option<u64>,
}

fn need(v: Option<usize>, name: &str, fam: &str) -> Result<usize> {
    match v {
        Some(x) if x >= 1 => Ok(x),
        Some(_) => Err(Error::config(format!("{fam}: `{name}` must be positive"))),
        None => Err(Error::config(format!("{fam}: missing `{name}`"))),
    }
}

impl FamilyDescriptor {
    fn design_matrix(&self, fam: &str) -> Result<DMatrix<f64>> {
        if let Some(rows) = &self.design {
            let nrows = rows.len();
            if nrows == 0 {
                return Err(Error::config(format!("{fam}: empty design")));
            }
            let ncols = rows[0].len();
            if ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
                return Err(Error::config(format!("{fam}: ragged or empty design rows")));
            }
            if rows.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::config(format!("{fam}: non-finite design entry")));
            }
            return Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]));
        }
        let n = need(self.n, "n", fam)?;
        let p = need(self.p, "p", fam)?;
        let seed = self.design_seed.unwrap_or(0);
        Ok(match self.design_kind.clone().unwrap_or_default() {
            DesignKind::Gaussian => crate::instances::gaussian_design(n, p, seed),
            DesignKind::Orthogonal => crate::instances::orthogonal_design(n, p, seed)?,
            DesignKind::Identity => {
                if n != p {
                    return Err(Error::config(format!("{fam}: identity design needs n == p")));
                }
                DMatrix::identity(n, n)
            }
        })
    }

    pub fn build(&self) -> Result<ModelFamily> {
        let kind = self.family.ok_or_else(|| Error::config("descriptor: missing `family`"))?;
        let fam = kind.name();
        let fam_out = match kind {
            FamilyKind::Sbm => {
                let n = need(self.n, "n", fam)?;
                if n < 2 {
                    return Err(Error::config("sbm: n must be at least 2"));
                }
                ModelFamily::Sbm { n, k_max: self.k_max.unwrap_or(n).min(n) }
            }
            FamilyKind::Biclustering => {
                let n = need(self.n, "n", fam)?;
                let m = need(self.m, "m", fam)?;
                ModelFamily::Biclustering {
                    n,
                    m,
                    k_max: self.k_max.unwrap_or(n).min(n),
                    l_max: self.l_max.unwrap_or(m).min(m),
                }
            }
            FamilyKind::SparseRegression => {
                let x = self.design_matrix(fam)?;
                let s_cap = x.ncols().min(x.nrows());
                let s_max = self.s_max.unwrap_or(s_cap).min(s_cap);
                ModelFamily::SparseRegression { design: Arc::new(x), s_max }
            }
            FamilyKind::GroupSparsity => {
                let x = self.design_matrix(fam)?;
                let m = need(self.m, "m", fam)?;
                let s_cap = x.ncols().min(x.nrows());
                let s_max = self.s_max.unwrap_or(s_cap).min(s_cap);
                ModelFamily::GroupSparsity { design: Arc::new(x), m, s_max }
            }
            FamilyKind::GroupTwoLevel => {
                let p = need(self.p, "p", fam)?;
                let m = need(self.m, "m", fam)?;
                ModelFamily::GroupTwoLevel { p, m, s_max: self.s_max.unwrap_or(p).min(p) }
            }
            FamilyKind::MultiTask => {
                let x = self.design_matrix(fam)?;
                let m = need(self.m, "m", fam)?;
                if matrix_rank(&x) < x.ncols() {
                    return Err(Error::config("multi_task: design must have full column rank"));
                }
                ModelFamily::MultiTask { design: Arc::new(x), m, k_max: self.k_max.unwrap_or(m).min(m) }
            }
            FamilyKind::Dictionary => {
                let n = need(self.n, "n", fam)?;
                let d = need(self.d, "d", fam)?;
                ModelFamily::Dictionary { n, d, p_max: self.p_max.unwrap_or(n.min(d)).min(n.min(d)) }
            }
            FamilyKind::SobolevSequence => ModelFamily::SobolevSequence { n: need(self.n, "n", fam)? },
            FamilyKind::BesovLevel => {
                let level = self.level.ok_or_else(|| Error::config("besov_level: missing `level`"))?;
                if level > 20 {
                    return Err(Error::config("besov_level: level above 20 is not supported"));
                }
                ModelFamily::BesovLevel { level }
            }
            FamilyKind::AggregationRegression => ModelFamily::aggregation(self.design_matrix(fam)?)?,
        };
        Ok(fam_out)
    }
}

impl TryFrom<&FamilyDescriptor> for ModelFamily {
    type Error = Error;
    fn try_from(d: &FamilyDescriptor) -> Result<Self> {
        d.build()
    }
}

impl ModelFamily {
    /// Parse a JSON descriptor.
    pub fn from_json(text: &str) -> Result<Self> {
        let d: FamilyDescriptor = serde_json::from_str(text)?;
        d.build()
    }

    /// Descriptor with the design written out explicitly.
    pub fn descriptor(&self) -> FamilyDescriptor {
        let rows = |x: &DMatrix<f64>| -> Vec<Vec<f64>> {
            (0..x.nrows()).map(|i| (0..x.ncols()).map(|j| x[(i, j)]).collect()).collect()
        };
        let mut d = FamilyDescriptor { family: Some(self.kind()), ..Default::default() };
        match self {
            ModelFamily::Sbm { n, k_max } => {
                d.n = Some(*n);
                d.k_max = Some(*k_max);
            }
            ModelFamily::Biclustering { n, m, k_max, l_max } => {
                d.n = Some(*n);
                d.m = Some(*m);
                d.k_max = Some(*k_max);
                d.l_max = Some(*l_max);
            }
            ModelFamily::SparseRegression { design, s_max } => {
                d.design = Some(rows(design));
                d.s_max = Some(*s_max);
            }
            ModelFamily::GroupSparsity { design, m, s_max } => {
                d.design = Some(rows(design));
                d.m = Some(*m);
                d.s_max = Some(*s_max);
            }
            ModelFamily::GroupTwoLevel { p, m, s_max } => {
                d.p = Some(*p);
                d.m = Some(*m);
                d.s_max = Some(*s_max);
            }
            ModelFamily::MultiTask { design, m, k_max } => {
                d.design = Some(rows(design));
                d.m = Some(*m);
                d.k_max = Some(*k_max);
            }
            ModelFamily::Dictionary { n, d: dd, p_max } => {
                d.n = Some(*n);
                d.d = Some(*dd);
                d.p_max = Some(*p_max);
            }
            ModelFamily::SobolevSequence { n } => d.n = Some(*n),
            ModelFamily::BesovLevel { level } => d.level = Some(*level),
            ModelFamily::AggregationRegression { design, .. } => d.design = Some(rows(design)),
        }
        d
    }
}
