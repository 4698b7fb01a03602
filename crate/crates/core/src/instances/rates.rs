//! Effective sparsity of weak `l_q` balls and the aggregation rate table.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `ceil(x*)` with `x* = max{0 <= x <= p : x <= k (n / ln(e p / x))^{q/2}}`.
///
/// `x / (n / ln(ep/x))^{q/2}` is strictly increasing on `(0, p]` for
/// `q <= 1`, so the feasible set is an interval and bisection applies.
pub fn effective_sparsity(q: f64, k: f64, p: usize, n: usize) -> usize {
    assert!((0.0..=1.0).contains(&q), "q must lie in [0, 1]");
    assert!(p >= 1 && n >= 1 && k >= 0.0, "p, n >= 1 and k >= 0 required");
    if k == 0.0 {
        return 0;
    }
    let (pf, nf) = (p as f64, n as f64);
    let slack = |x: f64| -> f64 { x.ln() - 0.5 * q * (nf.ln() - (1.0 + (pf / x).ln()).ln()) - k.ln() };
    if slack(pf) <= 0.0 {
        return p;
    }
    let (mut lo, mut hi) = (0.0f64, pf);
    while hi - lo > 1e-9 {
        let mid = 0.5 * (lo + hi);
        if mid > 0.0 && slack(mid) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo.ceil() as usize).min(p)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AggregationClass {
    /// Model selection.
    MS,
    /// Convex.
    C,
    /// Linear.
    L,
    /// Sparse linear.
    Ls,
    /// Sparse convex.
    Cs,
}

/// Optimal aggregation rate for the class.
pub fn aggregation_rate(class: AggregationClass, n: usize, p: usize, r: usize, s_star: usize) -> Result<f64> {
    if n == 0 || p == 0 {
        return Err(Error::domain("aggregation_rate: n and p must be positive"));
    }
    let (nf, pf) = (n as f64, p as f64);
    let convex = || (1.0 + pf / nf.sqrt()).ln().sqrt() / nf.sqrt();
    let sparse = || -> Result<f64> {
        if s_star == 0 || s_star > p {
            return Err(Error::domain("aggregation_rate: s* must lie in [1, p]"));
        }
        let s = s_star as f64;
        Ok(s * (1.0 + (pf / s).ln()) / nf)
    };
    Ok(match class {
        AggregationClass::MS => pf.ln() / nf,
        AggregationClass::C => convex(),
        AggregationClass::L => {
            if r == 0 || r > n.min(p) {
                return Err(Error::domain("aggregation_rate: r must lie in [1, min(n, p)]"));
            }
            r as f64 / nf
        }
        AggregationClass::Ls => sparse()?,
        AggregationClass::Cs => convex().min(sparse()?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent oracle: scan x on a 1e-4 grid.
    fn grid_oracle(q: f64, k: f64, p: usize, n: usize) -> usize {
        let (pf, nf) = (p as f64, n as f64);
        let mut best = 0.0;
        let steps = (pf / 1e-4).round() as usize;
        for i in 1..=steps {
            let x = i as f64 * 1e-4;
            if x <= k * (nf / (std::f64::consts::E * pf / x).ln()).powf(q / 2.0) {
                best = x;
            }
        }
        (best as f64).ceil() as usize
    }

    #[test]
    fn exact_sparse_case() {
        assert_eq!(effective_sparsity(0.0, 3.0, 50, 100), 3);
        assert_eq!(effective_sparsity(0.5, 0.0, 50, 100), 0);
        assert_eq!(effective_sparsity(0.0, 80.0, 50, 100), 50);
    }

    #[test]
    fn matches_grid_oracle() {
        assert_eq!(grid_oracle(1.0, 1.0, 100, 100), 6);
        assert_eq!(effective_sparsity(1.0, 1.0, 100, 100), 6);
        for &(q, k, p, n) in &[(0.5, 1.0, 50, 80), (1.0, 0.3, 40, 200), (0.25, 2.0, 30, 30), (0.8, 1.5, 64, 64)] {
            assert_eq!(effective_sparsity(q, k, p, n), grid_oracle(q, k, p, n), "{q} {k} {p} {n}");
        }
    }

    #[test]
    fn monotone_in_k_and_q() {
        for &(p, n) in &[(20usize, 50usize), (100, 100)] {
            let ks = [0.1, 0.5, 1.0, 2.0, 4.0];
            let qs = [0.0, 0.25, 0.5, 0.75, 1.0];
            for &q in &qs {
                let v: Vec<usize> = ks.iter().map(|&k| effective_sparsity(q, k, p, n)).collect();
                assert!(v.windows(2).all(|w| w[0] <= w[1]));
            }
            // (n / ln(ep/x))^{q/2} >= 1 grows with q whenever n >= ln(ep/x).
            for &k in &ks {
                let v: Vec<usize> = qs.iter().map(|&q| effective_sparsity(q, k, p, n)).collect();
                assert!(v.windows(2).all(|w| w[0] <= w[1]), "{k}: {v:?}");
            }
        }
    }

    #[test]
    fn rate_table() {
        assert!((aggregation_rate(AggregationClass::L, 100, 20, 10, 1).unwrap() - 0.1).abs() < 1e-15);
        assert!((aggregation_rate(AggregationClass::MS, 100, 10, 10, 1).unwrap() - 0.023_025_850_929_940_46).abs() < 1e-12);
        let c = aggregation_rate(AggregationClass::C, 100, 100, 10, 1).unwrap();
        assert!((c - (11f64.ln() / 100.0).sqrt()).abs() < 1e-15);
        assert!((c - 0.154_853).abs() < 2e-6);
        let cs = aggregation_rate(AggregationClass::Cs, 100, 100, 10, 2).unwrap();
        let c = aggregation_rate(AggregationClass::C, 100, 100, 10, 2).unwrap();
        let ls = aggregation_rate(AggregationClass::Ls, 100, 100, 10, 2).unwrap();
        assert_eq!(cs, c.min(ls));
        assert!(aggregation_rate(AggregationClass::L, 10, 20, 11, 1).is_err());
    }
}
