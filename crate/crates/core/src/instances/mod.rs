//! Concrete structures for every family: encodings, consistency checks,
//! enumeration of structure spaces, and closure counts `|Zbar_tau|`.

mod design;
mod generators;
mod moves;
mod rates;

pub use design::{
    build_design, checked_cholesky, design_matrix, is_full_rank, projected_inner,
    projected_inner_generic, DesignOperator, Projection,
};
pub use generators::{gaussian_design, orthogonal_design, shipped_families};
pub use moves::{propose_kind, propose_move, proposal_log_prob, MoveKind, Proposal};
pub use rates::{aggregation_rate, effective_sparsity, AggregationClass};

use num_bigint::BigUint;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::family::{ModelFamily, ModelIndex};
use crate::special::{ln_add_exp, ln_binomial};

/// One element `Z` of a structure space. Labels and indices are 0-based.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Structure {
    /// Node or task labels in `[k]`.
    Labels(Vec<usize>),
    /// Row and column labels for biclustering.
    LabelPair(Vec<usize>, Vec<usize>),
    /// Sorted support set.
    Support(Vec<usize>),
    /// `p x d` sign matrix, stored by rows.
    Signs(Vec<Vec<i8>>),
    /// Sorted `(row, column)` cells.
    Cells(Vec<(usize, usize)>),
    /// Prefix length.
    Prefix(usize),
}

impl Structure {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("structure serializes")
    }
}

/// An enumerated structure with its full-rank verification flag.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifiedStructure {
    pub structure: Structure,
    pub full_rank: bool,
}

fn sorted_unique<T: Ord>(v: &[T]) -> bool {
    v.windows(2).all(|w| w[0] < w[1])
}

fn bad(family: &ModelFamily, tau: ModelIndex, z: &Structure) -> Error {
    Error::domain(format!(
        "structure {} is not consistent with index {tau} of the {} family",
        z.to_json(),
        family.kind().name()
    ))
}

/// Row count of a set of cells.
pub(crate) fn cell_rows(cells: &[(usize, usize)]) -> usize {
    let mut rows: Vec<usize> = cells.iter().map(|c| c.0).collect();
    rows.dedup();
    rows.len()
}

/// Checks that `z` is an element of `Z_tau` (labels in range, support sizes,
/// column-support bounds). Does not check the full-rank condition.
pub fn check_structure(family: &ModelFamily, tau: ModelIndex, z: &Structure) -> Result<()> {
    if !family.contains_index(tau) {
        return Err(bad(family, tau, z));
    }
    use ModelIndex::*;
    let ok = match (family, tau, z) {
        (ModelFamily::Sbm { n, .. }, Single(k), Structure::Labels(v)) => {
            v.len() == *n && v.iter().all(|&x| x < k)
        }
        (ModelFamily::Biclustering { n, m, .. }, Pair(k, l), Structure::LabelPair(a, b)) => {
            a.len() == *n && b.len() == *m && a.iter().all(|&x| x < k) && b.iter().all(|&x| x < l)
        }
        (ModelFamily::SparseRegression { design, .. }, Single(s), Structure::Support(v))
        | (ModelFamily::GroupSparsity { design, .. }, Single(s), Structure::Support(v)) => {
            v.len() == s && sorted_unique(v) && v.iter().all(|&j| j < design.ncols())
        }
        (ModelFamily::AggregationRegression { design, rank }, Single(s), Structure::Support(v)) => {
            if s == *rank {
                v.iter().copied().eq(0..*rank)
            } else {
                v.len() == s && sorted_unique(v) && v.iter().all(|&j| j < design.ncols())
            }
        }
        (ModelFamily::BesovLevel { level }, Single(s), Structure::Support(v)) => {
            v.len() == s && sorted_unique(v) && v.iter().all(|&j| j < (1usize << level))
        }
        (ModelFamily::MultiTask { m, .. }, Single(k), Structure::Labels(v)) => {
            v.len() == *m && v.iter().all(|&x| x < k)
        }
        (ModelFamily::Dictionary { d, .. }, Pair(p, s), Structure::Signs(rows)) => {
            rows.len() == p
                && rows.iter().all(|r| r.len() == *d && r.iter().all(|&x| (-1..=1).contains(&x)))
                && (0..*d).all(|j| rows.iter().filter(|r| r[j] != 0).count() <= s)
        }
        (ModelFamily::GroupTwoLevel { p, m, .. }, Pair(s, t), Structure::Cells(c)) => {
            c.len() == t
                && sorted_unique(c)
                && c.iter().all(|&(i, j)| i < *p && j < *m)
                && cell_rows(c) == s
        }
        (ModelFamily::SobolevSequence { .. }, Single(k), Structure::Prefix(j)) => k == *j,
        _ => false,
    };
    if ok {
        Ok(())
    } else {
        Err(bad(family, tau, z))
    }
}

// ---------------------------------------------------------------------------
// Enumeration.

fn for_each_product(radix: usize, len: usize, mut f: impl FnMut(&[usize])) {
    let mut v = vec![0usize; len];
    loop {
        f(&v);
        let mut i = len;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            v[i] += 1;
            if v[i] < radix {
                break;
            }
            v[i] = 0;
        }
    }
}

/// Lexicographic `s`-combinations of `[0, p)`.
pub(crate) fn for_each_combination(p: usize, s: usize, mut f: impl FnMut(&[usize])) {
    if s > p {
        return;
    }
    let mut c: Vec<usize> = (0..s).collect();
    loop {
        f(&c);
        let mut i = s;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if c[i] < p - s + i {
                c[i] += 1;
                for j in i + 1..s {
                    c[j] = c[j - 1] + 1;
                }
                break;
            }
        }
    }
}

fn all_structures(family: &ModelFamily, tau: ModelIndex) -> Vec<Structure> {
    use ModelIndex::*;
    let mut out = Vec::new();
    match (family, tau) {
        (ModelFamily::Sbm { n, .. }, Single(k)) => {
            for_each_product(k, *n, |v| out.push(Structure::Labels(v.to_vec())));
        }
        (ModelFamily::MultiTask { m, .. }, Single(k)) => {
            for_each_product(k, *m, |v| out.push(Structure::Labels(v.to_vec())));
        }
        (ModelFamily::Biclustering { n, m, .. }, Pair(k, l)) => {
            let mut rows = Vec::new();
            for_each_product(k, *n, |v| rows.push(v.to_vec()));
            let mut cols = Vec::new();
            for_each_product(l, *m, |v| cols.push(v.to_vec()));
            for a in &rows {
                for b in &cols {
                    out.push(Structure::LabelPair(a.clone(), b.clone()));
                }
            }
        }
        (ModelFamily::SparseRegression { design, .. }, Single(s))
        | (ModelFamily::GroupSparsity { design, .. }, Single(s)) => {
            for_each_combination(design.ncols(), s, |c| out.push(Structure::Support(c.to_vec())));
        }
        (ModelFamily::AggregationRegression { design, rank }, Single(s)) => {
            if s == *rank {
                out.push(Structure::Support((0..*rank).collect()));
            } else {
                for_each_combination(design.ncols(), s, |c| out.push(Structure::Support(c.to_vec())));
            }
        }
        (ModelFamily::BesovLevel { level }, Single(s)) => {
            for_each_combination(1usize << level, s, |c| out.push(Structure::Support(c.to_vec())));
        }
        (ModelFamily::SobolevSequence { .. }, Single(k)) => out.push(Structure::Prefix(k)),
        (ModelFamily::Dictionary { d, .. }, Pair(p, s)) => {
            // Column patterns with at most s nonzeros, in lexicographic order of the
            // value vector over (-1, 0, 1).
            let mut columns: Vec<Vec<i8>> = Vec::new();
            for_each_product(3, p, |v| {
                if v.iter().filter(|&&x| x != 1).count() <= s {
                    columns.push(v.iter().map(|&x| x as i8 - 1).collect());
                }
            });
            for_each_product(columns.len(), *d, |pick| {
                let rows: Vec<Vec<i8>> =
                    (0..p).map(|a| pick.iter().map(|&c| columns[c][a]).collect()).collect();
                out.push(Structure::Signs(rows));
            });
        }
        (ModelFamily::GroupTwoLevel { p, m, .. }, Pair(s, t)) => {
            for_each_combination(*p, s, |rows| {
                // Each chosen row takes a nonempty subset of [m] (bit mask).
                for_each_product((1usize << m) - 1, s, |masks| {
                    let total: u32 = masks.iter().map(|&x| (x as u32 + 1).count_ones()).sum();
                    if total as usize != t {
                        return;
                    }
                    let mut cells = Vec::with_capacity(t);
                    for (r, &mask) in rows.iter().zip(masks) {
                        let mask = mask + 1;
                        for j in 0..*m {
                            if mask >> j & 1 == 1 {
                                cells.push((*r, j));
                            }
                        }
                    }
                    out.push(Structure::Cells(cells));
                });
            });
        }
        _ => unreachable!("index validated"),
    }
    out.sort();
    out
}

/// Every element of `Z_tau`, in lexicographic order, tagged with its
/// full-rank flag. Fails with `CapExceeded` when `|Z_tau| > cap`.
pub fn enumerate_structures(
    family: &ModelFamily,
    tau: ModelIndex,
    cap: u64,
) -> Result<Vec<VerifiedStructure>> {
    let count = family.structure_count(tau)?;
    if count > BigUint::from(cap) {
        return Err(Error::CapExceeded { count: count.to_string(), cap });
    }
    all_structures(family, tau)
        .into_iter()
        .map(|z| {
            let full_rank = is_full_rank(family, tau, &z)?;
            Ok(VerifiedStructure { structure: z, full_rank })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Closure counts.

/// `ln |Zbar_tau|`, exact when `exact` is set; otherwise the unfiltered
/// `ln |Z_tau|` is reported as a proxy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ClosureCount {
    pub log_count: f64,
    pub exact: bool,
}

/// Log number of maps `[n] -> [k]` whose fibres all have size `>= min_size`.
pub(crate) fn ln_constrained_labelings(n: usize, k: usize, min_size: usize) -> f64 {
    // f[r] = ln #(assignments of r labelled nodes to the labels so far).
    let mut f = vec![f64::NEG_INFINITY; n + 1];
    f[0] = 0.0;
    for _ in 0..k {
        let mut g = vec![f64::NEG_INFINITY; n + 1];
        for r in 0..=n {
            for c in min_size..=r {
                if f[r - c] == f64::NEG_INFINITY {
                    continue;
                }
                g[r] = ln_add_exp(g[r], ln_binomial(r as u64, c as u64) + f[r - c]);
            }
        }
        f = g;
    }
    f[n]
}

/// Enumeration size above which regression closure counts fall back to the
/// unfiltered count.
pub const CLOSURE_ENUMERATION_CAP: u64 = 200_000;

pub fn closure_count(family: &ModelFamily, tau: ModelIndex, cap: u64) -> Result<ClosureCount> {
    use ModelIndex::*;
    let unfiltered = family.log_structure_count(tau)?;
    let exact = |log_count: f64| Ok(ClosureCount { log_count, exact: true });
    match (family, tau) {
        (ModelFamily::Sbm { n, .. }, Single(k)) => exact(ln_constrained_labelings(*n, k, 2)),
        (ModelFamily::Biclustering { n, m, .. }, Pair(k, l)) => {
            exact(ln_constrained_labelings(*n, k, 1) + ln_constrained_labelings(*m, l, 1))
        }
        (ModelFamily::MultiTask { m, .. }, Single(k)) => exact(ln_constrained_labelings(*m, k, 1)),
        (ModelFamily::GroupTwoLevel { .. }, _)
        | (ModelFamily::SobolevSequence { .. }, _)
        | (ModelFamily::BesovLevel { .. }, _) => exact(unfiltered),
        _ => {
            let count = family.structure_count(tau)?;
            if count > BigUint::from(cap) {
                return Ok(ClosureCount { log_count: unfiltered, exact: false });
            }
            let mut valid = 0u64;
            for z in all_structures(family, tau) {
                if is_full_rank(family, tau, &z)? {
                    valid += 1;
                }
            }
            Ok(ClosureCount {
                log_count: if valid == 0 { f64::NEG_INFINITY } else { (valid as f64).ln() },
                exact: true,
            })
        }
    }
}

/// Uniform draw from `Z_tau` (before the full-rank filter).
pub fn sample_structure<R: Rng + ?Sized>(family: &ModelFamily, tau: ModelIndex, rng: &mut R) -> Result<Structure> {
    if !family.contains_index(tau) {
        return Err(Error::domain(format!("model index {tau} is not in the index set")));
    }
    use ModelIndex::*;
    let subset = |p: usize, s: usize, rng: &mut R| -> Vec<usize> {
        let mut v: Vec<usize> = rand::seq::index::sample(rng, p, s).into_vec();
        v.sort_unstable();
        v
    };
    Ok(match (family, tau) {
        (ModelFamily::Sbm { n, .. }, Single(k)) => Structure::Labels((0..*n).map(|_| rng.random_range(0..k)).collect()),
        (ModelFamily::MultiTask { m, .. }, Single(k)) => {
            Structure::Labels((0..*m).map(|_| rng.random_range(0..k)).collect())
        }
        (ModelFamily::Biclustering { n, m, .. }, Pair(k, l)) => Structure::LabelPair(
            (0..*n).map(|_| rng.random_range(0..k)).collect(),
            (0..*m).map(|_| rng.random_range(0..l)).collect(),
        ),
        (ModelFamily::SparseRegression { design, .. }, Single(s))
        | (ModelFamily::GroupSparsity { design, .. }, Single(s)) => Structure::Support(subset(design.ncols(), s, rng)),
        (ModelFamily::AggregationRegression { design, rank }, Single(s)) => {
            if s == *rank {
                Structure::Support((0..*rank).collect())
            } else {
                Structure::Support(subset(design.ncols(), s, rng))
            }
        }
        (ModelFamily::BesovLevel { level }, Single(s)) => Structure::Support(subset(1usize << level, s, rng)),
        (ModelFamily::SobolevSequence { .. }, Single(k)) => Structure::Prefix(k),
        (ModelFamily::Dictionary { d, .. }, Pair(p, s)) => {
            // Column support size t has weight C(p, t) 2^t.
            let weights: Vec<f64> =
                (0..=s).map(|t| ln_binomial(p as u64, t as u64) + t as f64 * std::f64::consts::LN_2).collect();
            let mut rows = vec![vec![0i8; *d]; p];
            for j in 0..*d {
                let t = sample_log_weights(&weights, rng);
                for a in subset(p, t, rng) {
                    rows[a][j] = if rng.random::<bool>() { 1 } else { -1 };
                }
            }
            Structure::Signs(rows)
        }
        (ModelFamily::GroupTwoLevel { p, m, .. }, Pair(s, t)) => {
            let rows = subset(*p, s, rng);
            // Row counts c_i >= 1 with sum t, weighted by prod C(m, c_i), drawn
            // sequentially from the remaining-rows covering counts.
            let mut cells = Vec::with_capacity(t);
            let mut left = t;
            for (idx, &r) in rows.iter().enumerate() {
                let rest = s - idx - 1;
                let weights: Vec<f64> = (0..=(*m).min(left))
                    .map(|c| {
                        if c == 0 {
                            f64::NEG_INFINITY
                        } else if rest == 0 {
                            if c == left { ln_binomial(*m as u64, c as u64) } else { f64::NEG_INFINITY }
                        } else {
                            ln_binomial(*m as u64, c as u64) + crate::family::ln_row_covering_subsets(rest, *m, left - c)
                        }
                    })
                    .collect();
                let c = sample_log_weights(&weights, rng);
                for j in subset(*m, c, rng) {
                    cells.push((r, j));
                }
                left -= c;
            }
            cells.sort_unstable();
            Structure::Cells(cells)
        }
        _ => unreachable!("index validated"),
    })
}

/// Index drawn with probability proportional to `exp(weights[i])`.
pub(crate) fn sample_log_weights<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let max = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let probs: Vec<f64> = weights.iter().map(|w| (w - max).exp()).collect();
    let total: f64 = probs.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, p) in probs.iter().enumerate() {
        if u < *p {
            return i;
        }
        u -= p;
    }
    probs.iter().rposition(|&p| p > 0.0).expect("some positive weight")
}

/// Regression-type coefficient vector for a structure and parameter:
/// sparse and aggregation give `beta` in `R^p`; group sparsity gives `B`
/// column-major `p x m`; two-level gives `B` row-major `p x m`; sequence
/// families give the signal itself. `None` for families without coefficients.
pub fn coefficients(family: &ModelFamily, z: &Structure, q: &[f64]) -> Option<Vec<f64>> {
    let len = family.coefficient_len()?;
    let mut beta = vec![0.0; len];
    match (family, z) {
        (ModelFamily::SparseRegression { .. }, Structure::Support(s))
        | (ModelFamily::AggregationRegression { .. }, Structure::Support(s))
        | (ModelFamily::BesovLevel { .. }, Structure::Support(s)) => {
            for (a, &j) in s.iter().enumerate() {
                beta[j] = q[a];
            }
        }
        (ModelFamily::GroupSparsity { design, m, .. }, Structure::Support(s)) => {
            let p = design.ncols();
            for j in 0..*m {
                for (a, &row) in s.iter().enumerate() {
                    beta[row + p * j] = q[a + s.len() * j];
                }
            }
        }
        (ModelFamily::GroupTwoLevel { m, .. }, Structure::Cells(c)) => {
            for (a, &(i, j)) in c.iter().enumerate() {
                beta[i * m + j] = q[a];
            }
        }
        (ModelFamily::SobolevSequence { .. }, Structure::Prefix(k)) => beta[..*k].copy_from_slice(&q[..*k]),
        _ => return None,
    }
    Some(beta)
}
