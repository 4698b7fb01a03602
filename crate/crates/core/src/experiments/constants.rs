use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::instances::checked_cholesky;
use crate::special::ln_binomial;

/// Support-times-sign-pattern budget for exact enumeration.
const ENUMERATION_CAP: u64 = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RestrictedConstants {
    /// Compatibility constant.
    pub kappa1: f64,
    /// Restricted eigenvalue constant.
    pub kappa2: f64,
    /// Support size `floor((2 + delta) s*)`, capped at `p`.
    pub support_size: usize,
}

/// Exact restricted constants over all supports of size `t = floor((2 + delta) s*)`:
/// `kappa2 = min_T sqrt(lambda_min(X_T^T X_T) / n)` and
/// `kappa1 = min_T min_b sqrt(s*) ||X_T b|| / (sqrt(n) ||b||_1)`.
///
/// For fixed `T` and sign pattern `sigma`, `min ||X_T b||` over `sigma^T b = 1`
/// is `(sigma^T G^{-1} sigma)^{-1/2}`, and every `b` lies on such a plane with
/// `sigma = sign(b)`, so the inner minimum is `(max_sigma sigma^T G^{-1} sigma)^{-1/2}`.
pub fn restricted_constants(x: &DMatrix<f64>, s_star: usize, delta: f64) -> Result<RestrictedConstants> {
    let (n, p) = (x.nrows(), x.ncols());
    if s_star == 0 || n == 0 || p == 0 || !(delta >= 0.0) {
        return Err(Error::domain("restricted_constants needs s* >= 1, delta >= 0 and a nonempty design"));
    }
    let t = (((2.0 + delta) * s_star as f64).floor() as usize).min(p);
    let log_work = ln_binomial(p as u64, t as u64) + (t.saturating_sub(1)) as f64 * std::f64::consts::LN_2;
    if log_work > (ENUMERATION_CAP as f64).ln() {
        return Err(Error::CapExceeded { count: format!("{:.0}", log_work.exp()), cap: ENUMERATION_CAP });
    }
    let nf = n as f64;
    let mut kappa1 = f64::INFINITY;
    let mut kappa2 = f64::INFINITY;
    crate::instances::for_each_combination(p, t, |cols| {
        let xt = x.select_columns(cols);
        let gram = xt.transpose() * &xt;
        let lmin = gram.clone().symmetric_eigen().eigenvalues.min().max(0.0);
        kappa2 = kappa2.min((lmin / nf).sqrt());
        let Some(chol) = checked_cholesky(gram) else {
            kappa1 = 0.0;
            return;
        };
        let inv = chol.inverse();
        let mut worst = 0.0f64;
        // sigma and -sigma give the same quadratic form; fix sigma_0 = +1.
        for mask in 0u64..(1u64 << (t - 1)) {
            let sign = |i: usize| if i == 0 || mask >> (i - 1) & 1 == 0 { 1.0 } else { -1.0 };
            let mut v = 0.0;
            for i in 0..t {
                for j in 0..t {
                    v += sign(i) * sign(j) * inv[(i, j)];
                }
            }
            worst = worst.max(v);
        }
        kappa1 = kappa1.min((s_star as f64 / nf).sqrt() / worst.sqrt());
    });
    Ok(RestrictedConstants { kappa1, kappa2, support_size: t })
}
