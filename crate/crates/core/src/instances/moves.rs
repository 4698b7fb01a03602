//! Metropolis–Hastings neighbourhood moves over `(tau, Z)`.
//!
//! Each family draws a move type from a fixed menu with equal probability.
//! A move that cannot be applied in the current state proposes the current
//! state itself. Candidates may fall outside `Zbar_tau` or outside the index
//! set; the sampler rejects those. The proposal ratio of a move is computed
//! from [`proposal_log_prob`], which sums the probability of every menu entry
//! that maps one state to the other.

use rand::Rng;

use super::{cell_rows, Structure};
use crate::family::{ModelFamily, ModelIndex};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MoveKind {
    /// Support families: add, drop or swap one index.
    Add,
    Drop,
    Swap,
    /// Label families: move one unit to another label, split a label, merge the last label.
    Relabel,
    Split,
    Merge,
    /// Dictionary: flip one sign entry, change the support bound, add or delete a row.
    Flip,
    BoundUp,
    BoundDown,
    AddRow,
    DeleteRow,
    /// Two-level groups: toggle one cell, fill an empty row, clear a full row.
    Toggle,
    FillRow,
    ClearRow,
    /// Sobolev prefix length.
    Up,
    Down,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Proposal {
    pub tau: ModelIndex,
    pub structure: Structure,
    /// `ln q(current | candidate) - ln q(candidate | current)`.
    pub log_ratio: f64,
    pub kind: MoveKind,
}

impl Proposal {
    pub fn is_self(&self, tau: ModelIndex, z: &Structure) -> bool {
        self.tau == tau && &self.structure == z
    }
}

fn menu(family: &ModelFamily) -> &'static [MoveKind] {
    use MoveKind::*;
    match family {
        ModelFamily::SparseRegression { .. }
        | ModelFamily::GroupSparsity { .. }
        | ModelFamily::AggregationRegression { .. }
        | ModelFamily::BesovLevel { .. } => &[Add, Drop, Swap],
        ModelFamily::Sbm { .. } | ModelFamily::MultiTask { .. } | ModelFamily::Biclustering { .. } => {
            &[Relabel, Split, Merge]
        }
        ModelFamily::Dictionary { .. } => &[Flip, Flip, BoundUp, BoundDown, AddRow, DeleteRow, Flip, Flip],
        ModelFamily::GroupTwoLevel { .. } => &[Toggle, FillRow, ClearRow],
        ModelFamily::SobolevSequence { .. } => &[Up, Down],
    }
}

fn menu_prob(family: &ModelFamily, kind: MoveKind) -> f64 {
    let m = menu(family);
    m.iter().filter(|&&k| k == kind).count() as f64 / m.len() as f64
}

fn support_universe(family: &ModelFamily) -> usize {
    match family {
        ModelFamily::SparseRegression { design, .. }
        | ModelFamily::GroupSparsity { design, .. }
        | ModelFamily::AggregationRegression { design, .. } => design.ncols(),
        ModelFamily::BesovLevel { level } => 1usize << level,
        _ => unreachable!("support family"),
    }
}

/// Draw a move from the family's menu.
pub fn propose_move<R: Rng + ?Sized>(
    family: &ModelFamily,
    tau: ModelIndex,
    z: &Structure,
    rng: &mut R,
) -> Proposal {
    let m = menu(family);
    let kind = m[rng.random_range(0..m.len())];
    propose_kind(family, tau, z, kind, rng)
}

/// Apply a specific move type; inapplicable moves return the current state.
pub fn propose_kind<R: Rng + ?Sized>(
    family: &ModelFamily,
    tau: ModelIndex,
    z: &Structure,
    kind: MoveKind,
    rng: &mut R,
) -> Proposal {
    let candidate = candidate(family, tau, z, kind, rng);
    match candidate {
        Some((t2, z2)) if !(t2 == tau && &z2 == z) => {
            let fwd = proposal_log_prob(family, (tau, z), (t2, &z2));
            let rev = proposal_log_prob(family, (t2, &z2), (tau, z));
            Proposal { tau: t2, structure: z2, log_ratio: rev - fwd, kind }
        }
        _ => Proposal { tau, structure: z.clone(), log_ratio: 0.0, kind },
    }
}

fn candidate<R: Rng + ?Sized>(
    family: &ModelFamily,
    tau: ModelIndex,
    z: &Structure,
    kind: MoveKind,
    rng: &mut R,
) -> Option<(ModelIndex, Structure)> {
    use ModelIndex::*;
    use MoveKind::*;
    match (family, tau, z) {
        (_, Single(s), Structure::Support(supp)) if menu(family)[0] == Add => {
            let p = support_universe(family);
            let outside: Vec<usize> = (0..p).filter(|j| !supp.contains(j)).collect();
            let mut next = supp.clone();
            let t2 = match kind {
                Add => {
                    if outside.is_empty() {
                        return None;
                    }
                    next.push(outside[rng.random_range(0..outside.len())]);
                    s + 1
                }
                Drop => {
                    if supp.is_empty() {
                        return None;
                    }
                    next.remove(rng.random_range(0..supp.len()));
                    s - 1
                }
                Swap => {
                    if supp.is_empty() || outside.is_empty() {
                        return None;
                    }
                    let i = rng.random_range(0..supp.len());
                    next[i] = outside[rng.random_range(0..outside.len())];
                    s
                }
                _ => return None,
            };
            next.sort_unstable();
            Some((Single(t2), Structure::Support(next)))
        }
        (ModelFamily::Sbm { k_max, .. }, Single(k), Structure::Labels(v))
        | (ModelFamily::MultiTask { k_max, .. }, Single(k), Structure::Labels(v)) => {
            let (k2, v2) = label_candidate(v, k, *k_max, kind, rng)?;
            Some((Single(k2), Structure::Labels(v2)))
        }
        (ModelFamily::Biclustering { k_max, l_max, .. }, Pair(k, l), Structure::LabelPair(a, b)) => {
            // Rows, columns or both with equal probability. The joint move
            // crosses valleys where neither margin alone explains the data.
            match rng.random_range(0..3) {
                0 => {
                    let (k2, a2) = label_candidate(a, k, *k_max, kind, rng)?;
                    Some((Pair(k2, l), Structure::LabelPair(a2, b.clone())))
                }
                1 => {
                    let (l2, b2) = label_candidate(b, l, *l_max, kind, rng)?;
                    Some((Pair(k, l2), Structure::LabelPair(a.clone(), b2)))
                }
                _ => {
                    let (k2, a2) = label_candidate(a, k, *k_max, kind, rng)?;
                    let (l2, b2) = label_candidate(b, l, *l_max, kind, rng)?;
                    Some((Pair(k2, l2), Structure::LabelPair(a2, b2)))
                }
            }
        }
        (ModelFamily::Dictionary { d, p_max, .. }, Pair(p, s), Structure::Signs(rows)) => match kind {
            Flip => {
                let a = rng.random_range(0..p);
                let j = rng.random_range(0..*d);
                let mut rows2 = rows.clone();
                let others: Vec<i8> = [-1i8, 0, 1].into_iter().filter(|&x| x != rows[a][j]).collect();
                rows2[a][j] = others[rng.random_range(0..2)];
                Some((tau, Structure::Signs(rows2)))
            }
            BoundUp => (s < p).then(|| (Pair(p, s + 1), z.clone())),
            BoundDown => (s > 1).then(|| (Pair(p, s - 1), z.clone())),
            AddRow => {
                if p >= *p_max {
                    return None;
                }
                let mut rows2 = rows.clone();
                rows2.push((0..*d).map(|_| rng.random_range(-1i8..=1)).collect());
                Some((Pair(p + 1, s), Structure::Signs(rows2)))
            }
            DeleteRow => {
                if p <= 1 || s >= p {
                    return None;
                }
                let mut rows2 = rows.clone();
                rows2.pop();
                Some((Pair(p - 1, s), Structure::Signs(rows2)))
            }
            _ => None,
        },
        (ModelFamily::GroupTwoLevel { p, m, .. }, _, Structure::Cells(cells)) => {
            let mut next = cells.clone();
            match kind {
                Toggle => {
                    let cell = (rng.random_range(0..*p), rng.random_range(0..*m));
                    match next.binary_search(&cell) {
                        Ok(i) => {
                            next.remove(i);
                        }
                        Err(i) => next.insert(i, cell),
                    }
                }
                FillRow => {
                    let empty: Vec<usize> = (0..*p).filter(|&i| row_count(cells, i) == 0).collect();
                    if empty.is_empty() {
                        return None;
                    }
                    let r = empty[rng.random_range(0..empty.len())];
                    next.extend((0..*m).map(|j| (r, j)));
                    next.sort_unstable();
                }
                ClearRow => {
                    let full: Vec<usize> = (0..*p).filter(|&i| row_count(cells, i) == *m).collect();
                    if full.is_empty() {
                        return None;
                    }
                    let r = full[rng.random_range(0..full.len())];
                    next.retain(|c| c.0 != r);
                }
                _ => return None,
            }
            Some((Pair(cell_rows(&next), next.len()), Structure::Cells(next)))
        }
        (ModelFamily::SobolevSequence { n }, Single(k), _) => {
            let k2 = match kind {
                Up if k < *n => k + 1,
                Down if k > 1 => k - 1,
                _ => return None,
            };
            Some((Single(k2), Structure::Prefix(k2)))
        }
        _ => None,
    }
}

fn row_count(cells: &[(usize, usize)], row: usize) -> usize {
    cells.iter().filter(|c| c.0 == row).count()
}

fn label_sizes(v: &[usize], k: usize) -> Vec<usize> {
    let mut c = vec![0; k];
    for &x in v {
        c[x] += 1;
    }
    c
}

/// `ln(2^n - 2)`, the number of nonempty proper subsets of an `n`-set.
fn ln_proper_subsets(n: usize) -> f64 {
    let n = n as f64;
    n * std::f64::consts::LN_2 + (-(2f64.powf(1.0 - n))).ln_1p()
}

fn label_candidate<R: Rng + ?Sized>(
    v: &[usize],
    k: usize,
    k_max: usize,
    kind: MoveKind,
    rng: &mut R,
) -> Option<(usize, Vec<usize>)> {
    let sizes = label_sizes(v, k);
    match kind {
        MoveKind::Relabel => {
            if k < 2 {
                return None;
            }
            let i = rng.random_range(0..v.len());
            let mut new = rng.random_range(0..k - 1);
            if new >= v[i] {
                new += 1;
            }
            let mut v2 = v.to_vec();
            v2[i] = new;
            Some((k, v2))
        }
        MoveKind::Split => {
            if k >= k_max {
                return None;
            }
            let splittable: Vec<usize> = (0..k).filter(|&c| sizes[c] >= 2).collect();
            if splittable.is_empty() {
                return None;
            }
            let a = splittable[rng.random_range(0..splittable.len())];
            let members: Vec<usize> = (0..v.len()).filter(|&i| v[i] == a).collect();
            // Uniform nonempty proper subset by rejection.
            let mask = loop {
                let m: Vec<bool> = members.iter().map(|_| rng.random::<bool>()).collect();
                let c = m.iter().filter(|&&b| b).count();
                if c > 0 && c < members.len() {
                    break m;
                }
            };
            let mut v2 = v.to_vec();
            for (&i, &b) in members.iter().zip(&mask) {
                if b {
                    v2[i] = k;
                }
            }
            Some((k + 1, v2))
        }
        MoveKind::Merge => {
            if k < 2 {
                return None;
            }
            let u = rng.random_range(0..k - 1);
            if sizes[k - 1] == 0 || sizes[u] == 0 {
                return None;
            }
            let v2 = v.iter().map(|&x| if x == k - 1 { u } else { x }).collect();
            Some((k - 1, v2))
        }
        _ => None,
    }
}

/// `ln q(to | from)` for a single label vector, or `-inf` when no move maps
/// `from` to `to`. Assumes `from != to`.
fn label_log_prob(menu_p: f64, from: (&[usize], usize), to: (&[usize], usize), k_max: usize) -> f64 {
    let (v, k) = from;
    let (w, k2) = to;
    if v.len() != w.len() {
        return f64::NEG_INFINITY;
    }
    let sizes = label_sizes(v, k);
    if k2 == k {
        let diff: Vec<usize> = (0..v.len()).filter(|&i| v[i] != w[i]).collect();
        if diff.len() == 1 && k >= 2 && w[diff[0]] < k {
            return menu_p.ln() - (v.len() as f64).ln() - ((k - 1) as f64).ln();
        }
        return f64::NEG_INFINITY;
    }
    if k2 == k + 1 && k < k_max {
        // Members of one label a moved to the new label k.
        let moved: Vec<usize> = (0..v.len()).filter(|&i| v[i] != w[i]).collect();
        if moved.is_empty() || moved.iter().any(|&i| w[i] != k) {
            return f64::NEG_INFINITY;
        }
        let a = v[moved[0]];
        if moved.iter().any(|&i| v[i] != a) || moved.len() >= sizes[a] {
            return f64::NEG_INFINITY;
        }
        let splittable = sizes.iter().filter(|&&c| c >= 2).count();
        return menu_p.ln() - (splittable as f64).ln() - ln_proper_subsets(sizes[a]);
    }
    if k2 + 1 == k && k >= 2 {
        // Last label k-1 merged into some u < k-1.
        let last: Vec<usize> = (0..v.len()).filter(|&i| v[i] == k - 1).collect();
        if last.is_empty() {
            return f64::NEG_INFINITY;
        }
        let u = w[last[0]];
        if u >= k - 1 || sizes[u] == 0 {
            return f64::NEG_INFINITY;
        }
        let consistent = (0..v.len()).all(|i| if v[i] == k - 1 { w[i] == u } else { w[i] == v[i] });
        if consistent {
            return menu_p.ln() - ((k - 1) as f64).ln();
        }
    }
    f64::NEG_INFINITY
}

/// `ln q(to | from)` for distinct states; `-inf` when unreachable in one move.
pub fn proposal_log_prob(
    family: &ModelFamily,
    from: (ModelIndex, &Structure),
    to: (ModelIndex, &Structure),
) -> f64 {
    use ModelIndex::*;
    use MoveKind::*;
    let neg = f64::NEG_INFINITY;
    match (family, from, to) {
        (_, (_, Structure::Support(a)), (_, Structure::Support(b))) if menu(family)[0] == Add => {
            let p = support_universe(family);
            let s = a.len();
            let only_a = a.iter().filter(|j| !b.contains(j)).count();
            let only_b = b.iter().filter(|j| !a.contains(j)).count();
            match (only_a, only_b) {
                (0, 1) => menu_prob(family, Add).ln() - ((p - s) as f64).ln(),
                (1, 0) => menu_prob(family, Drop).ln() - (s as f64).ln(),
                (1, 1) => menu_prob(family, Swap).ln() - ((s * (p - s)) as f64).ln(),
                _ => neg,
            }
        }
        (ModelFamily::Sbm { k_max, .. }, (Single(k), Structure::Labels(v)), (Single(k2), Structure::Labels(w)))
        | (
            ModelFamily::MultiTask { k_max, .. },
            (Single(k), Structure::Labels(v)),
            (Single(k2), Structure::Labels(w)),
        ) => {
            let kind = if k2 == k { Relabel } else if k2 > k { Split } else { Merge };
            label_log_prob(menu_prob(family, kind), (v, k), (w, k2), *k_max)
        }
        (
            ModelFamily::Biclustering { k_max, l_max, .. },
            (Pair(k, l), Structure::LabelPair(a, b)),
            (Pair(k2, l2), Structure::LabelPair(a2, b2)),
        ) => {
            let third = 3f64.ln();
            let kind_of = |from: usize, to: usize| if to == from { Relabel } else if to > from { Split } else { Merge };
            if b == b2 && l == l2 {
                label_log_prob(menu_prob(family, kind_of(k, k2)), (a, k), (a2, k2), *k_max) - third
            } else if a == a2 && k == k2 {
                label_log_prob(menu_prob(family, kind_of(l, l2)), (b, l), (b2, l2), *l_max) - third
            } else if kind_of(k, k2) == kind_of(l, l2) {
                label_log_prob(menu_prob(family, kind_of(k, k2)), (a, k), (a2, k2), *k_max)
                    + label_log_prob(1.0, (b, l), (b2, l2), *l_max)
                    - third
            } else {
                neg
            }
        }
        (
            ModelFamily::Dictionary { d, .. },
            (Pair(p, s), Structure::Signs(r1)),
            (Pair(p2, s2), Structure::Signs(r2)),
        ) => {
            if p2 == p && s2 == s {
                let diff: usize = r1
                    .iter()
                    .zip(r2)
                    .map(|(x, y)| x.iter().zip(y).filter(|(a, b)| a != b).count())
                    .sum();
                if diff == 1 {
                    menu_prob(family, Flip).ln() - ((p * d) as f64).ln() - std::f64::consts::LN_2
                } else {
                    neg
                }
            } else if p2 == p && r1 == r2 && s2 == s + 1 {
                menu_prob(family, BoundUp).ln()
            } else if p2 == p && r1 == r2 && s2 + 1 == s {
                menu_prob(family, BoundDown).ln()
            } else if p2 == p + 1 && s2 == s && r2[..p] == r1[..] {
                menu_prob(family, AddRow).ln() - *d as f64 * 3f64.ln()
            } else if p2 + 1 == p && s2 == s && r1[..p2] == r2[..] {
                menu_prob(family, DeleteRow).ln()
            } else {
                neg
            }
        }
        (ModelFamily::GroupTwoLevel { p, m, .. }, (_, Structure::Cells(a)), (_, Structure::Cells(b))) => {
            let only_a: Vec<&(usize, usize)> = a.iter().filter(|c| b.binary_search(c).is_err()).collect();
            let only_b: Vec<&(usize, usize)> = b.iter().filter(|c| a.binary_search(c).is_err()).collect();
            let mut prob = 0.0;
            if only_a.len() + only_b.len() == 1 {
                prob += menu_prob(family, Toggle) / (p * m) as f64;
            }
            if only_a.is_empty() && only_b.len() == *m {
                let r = only_b[0].0;
                if only_b.iter().all(|c| c.0 == r) && row_count(a, r) == 0 {
                    let empty = (0..*p).filter(|&i| row_count(a, i) == 0).count();
                    prob += menu_prob(family, FillRow) / empty as f64;
                }
            }
            if only_b.is_empty() && only_a.len() == *m {
                let r = only_a[0].0;
                if only_a.iter().all(|c| c.0 == r) {
                    let full = (0..*p).filter(|&i| row_count(a, i) == *m).count();
                    prob += menu_prob(family, ClearRow) / full as f64;
                }
            }
            prob.ln()
        }
        (ModelFamily::SobolevSequence { .. }, (Single(k), _), (Single(k2), _)) => {
            if k2 == k + 1 {
                menu_prob(family, Up).ln()
            } else if k2 + 1 == k {
                menu_prob(family, Down).ln()
            } else {
                neg
            }
        }
        _ => neg,
    }
}

#[cfg(test)]
mod tests {
    use super::super::{check_structure, enumerate_structures, gaussian_design, is_full_rank};
    use super::*;
    use crate::rng::stream;
    use nalgebra::DMatrix;
    use std::collections::HashMap;
    use std::sync::Arc;
    use ModelIndex::*;

    fn sparse3() -> ModelFamily {
        ModelFamily::sparse_regression(DMatrix::identity(3, 3))
    }

    #[test]
    fn forced_swap_is_symmetric() {
        let f = sparse3();
        let z = Structure::Support(vec![0]);
        let to = Structure::Support(vec![1]);
        let a = proposal_log_prob(&f, (Single(1), &z), (Single(1), &to));
        let b = proposal_log_prob(&f, (Single(1), &to), (Single(1), &z));
        assert_eq!(a, b);
        let mut rng = stream(1);
        let prop = propose_kind(&f, Single(1), &z, MoveKind::Swap, &mut rng);
        assert_eq!(prop.log_ratio, 0.0);
    }

    #[test]
    fn sobolev_boundary_self_proposes() {
        let f = ModelFamily::SobolevSequence { n: 5 };
        let mut rng = stream(1);
        let p = propose_kind(&f, Single(1), &Structure::Prefix(1), MoveKind::Down, &mut rng);
        assert!(p.is_self(Single(1), &Structure::Prefix(1)));
        assert_eq!(p.log_ratio, 0.0);
    }

    #[test]
    fn add_from_empty_support() {
        // The empty support sits outside the index set, but the menu arithmetic
        // is the same: three adds each of probability 1/3, reverse drop certain.
        let f = sparse3();
        let empty = Structure::Support(vec![]);
        let mut rng = stream(2);
        let mut counts = HashMap::new();
        for _ in 0..30_000 {
            let p = propose_kind(&f, Single(0), &empty, MoveKind::Add, &mut rng);
            assert!((p.log_ratio - 3f64.ln()).abs() < 1e-12);
            *counts.entry(p.structure).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 3);
        for c in counts.values() {
            assert!((*c as f64 / 30_000.0 - 1.0 / 3.0).abs() < 0.015);
        }
    }

    fn move_families() -> Vec<(ModelFamily, ModelIndex, Structure)> {
        vec![
            (ModelFamily::sparse_regression(gaussian_design(10, 6, 1)), Single(2), Structure::Support(vec![1, 4])),
            (
                ModelFamily::GroupSparsity { design: Arc::new(gaussian_design(8, 5, 2)), m: 2, s_max: 5 },
                Single(1),
                Structure::Support(vec![3]),
            ),
            (ModelFamily::aggregation(gaussian_design(4, 6, 3)).unwrap(), Single(3), Structure::Support(vec![0, 2, 5])),
            (ModelFamily::BesovLevel { level: 3 }, Single(2), Structure::Support(vec![0, 7])),
            (ModelFamily::Sbm { n: 7, k_max: 4 }, Single(2), Structure::Labels(vec![0, 0, 1, 1, 1, 0, 1])),
            (
                ModelFamily::MultiTask { design: Arc::new(gaussian_design(5, 2, 4)), m: 5, k_max: 3 },
                Single(2),
                Structure::Labels(vec![0, 1, 1, 0, 1]),
            ),
            (
                ModelFamily::Biclustering { n: 5, m: 4, k_max: 3, l_max: 3 },
                Pair(2, 1),
                Structure::LabelPair(vec![0, 1, 0, 1, 1], vec![0, 0, 0, 0]),
            ),
            (
                ModelFamily::Dictionary { n: 3, d: 4, p_max: 3 },
                Pair(2, 1),
                Structure::Signs(vec![vec![1, 0, -1, 0], vec![0, 1, 0, -1]]),
            ),
            (ModelFamily::GroupTwoLevel { p: 4, m: 2, s_max: 4 }, Pair(1, 2), Structure::Cells(vec![(2, 0), (2, 1)])),
            (ModelFamily::SobolevSequence { n: 6 }, Single(3), Structure::Prefix(3)),
        ]
    }

    #[test]
    fn moves_are_reversible() {
        for (f, tau0, z0) in move_families() {
            check_structure(&f, tau0, &z0).unwrap();
            let mut rng = stream(7);
            let (mut tau, mut z) = (tau0, z0.clone());
            let mut moved = 0;
            for _ in 0..10_000 {
                let p = propose_move(&f, tau, &z, &mut rng);
                if p.is_self(tau, &z) {
                    continue;
                }
                moved += 1;
                let fwd = proposal_log_prob(&f, (tau, &z), (p.tau, &p.structure));
                let rev = proposal_log_prob(&f, (p.tau, &p.structure), (tau, &z));
                assert!(fwd.is_finite() && rev.is_finite(), "{:?}: {:?} -> {:?}", f.kind(), z, p.structure);
                assert!((p.log_ratio - (rev - fwd)).abs() < 1e-12);
                // The reverse move carries the negated ratio.
                let reverse_ratio = fwd - rev;
                assert!((p.log_ratio + reverse_ratio).abs() < 1e-12);
                // Random walk restricted to valid states keeps the test covering the space.
                if f.contains_index(p.tau)
                    && check_structure(&f, p.tau, &p.structure).is_ok()
                    && is_full_rank(&f, p.tau, &p.structure).unwrap()
                {
                    tau = p.tau;
                    z = p.structure;
                }
            }
            assert!(moved > 1000, "{:?} moved only {moved}", f.kind());
        }
    }

    #[test]
    fn empirical_proposal_frequencies_match() {
        for (f, tau, z) in move_families() {
            let mut rng = stream(13);
            let draws = 60_000;
            let mut counts: HashMap<(ModelIndex, Structure), usize> = HashMap::new();
            for _ in 0..draws {
                let p = propose_move(&f, tau, &z, &mut rng);
                if !p.is_self(tau, &z) {
                    *counts.entry((p.tau, p.structure)).or_insert(0) += 1;
                }
            }
            for ((t2, z2), c) in counts {
                let q = proposal_log_prob(&f, (tau, &z), (t2, &z2)).exp();
                let se = (q * (1.0 - q) / draws as f64).sqrt();
                let freq = c as f64 / draws as f64;
                assert!((freq - q).abs() < 5.0 * se + 1e-4, "{:?} {:?}: {freq} vs {q}", f.kind(), z2);
            }
        }
    }

    #[test]
    fn label_moves_connect_small_sbm_space() {
        // Every valid SBM state at n = 5 is reachable from the one-block state.
        let f = ModelFamily::sbm(5);
        let mut valid = 0;
        for tau in f.index_set() {
            if let Ok(e) = enumerate_structures(&f, tau, 10_000) {
                valid += e.iter().filter(|v| v.full_rank).count();
            }
        }
        let mut seen = std::collections::HashSet::new();
        let mut rng = stream(3);
        let (mut tau, mut z) = (Single(1), Structure::Labels(vec![0; 5]));
        for _ in 0..200_000 {
            seen.insert((tau, z.clone()));
            let p = propose_move(&f, tau, &z, &mut rng);
            if f.contains_index(p.tau) && is_full_rank(&f, p.tau, &p.structure).unwrap() {
                tau = p.tau;
                z = p.structure;
            }
        }
        assert_eq!(seen.len(), valid);
    }
}
