//! Fixed designs and the desk-scale families used by the theory checks.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::family::ModelFamily;
use crate::rng::substream;

const DESIGN_STREAM: u64 = 0x6465_7369_676e;

/// i.i.d. standard normal design with every column rescaled to squared norm `n`.
pub fn gaussian_design(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = substream(seed, &[DESIGN_STREAM, n as u64, p as u64]);
    let mut x = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
    let scale = (n as f64).sqrt();
    for mut col in x.column_iter_mut() {
        let norm = col.norm();
        if norm > 0.0 {
            col *= scale / norm;
        }
    }
    x
}

/// Design with orthogonal columns of squared norm `n` (`X^T X = n I`); needs `p <= n`.
pub fn orthogonal_design(n: usize, p: usize, seed: u64) -> Result<DMatrix<f64>> {
    if p > n {
        return Err(Error::config(format!("orthogonal design needs p <= n, got p = {p}, n = {n}")));
    }
    let g = gaussian_design(n, p, seed ^ 0x5eed);
    let q = g.qr().q();
    Ok(q.columns(0, p).into_owned() * (n as f64).sqrt())
}

/// One desk-scale representative per family.
pub fn shipped_families() -> Vec<ModelFamily> {
    vec![
        ModelFamily::sbm(10),
        ModelFamily::Biclustering { n: 6, m: 6, k_max: 6, l_max: 6 },
        ModelFamily::sparse_regression(gaussian_design(20, 10, 1)),
        ModelFamily::GroupSparsity { design: Arc::new(gaussian_design(20, 8, 2)), m: 4, s_max: 8 },
        ModelFamily::GroupTwoLevel { p: 6, m: 4, s_max: 6 },
        ModelFamily::MultiTask { design: Arc::new(gaussian_design(10, 3, 3)), m: 6, k_max: 6 },
        ModelFamily::Dictionary { n: 3, d: 4, p_max: 3 },
        ModelFamily::SobolevSequence { n: 50 },
        ModelFamily::BesovLevel { level: 5 },
        ModelFamily::aggregation(gaussian_design(8, 10, 4)).expect("generic design spans"),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthogonal_columns() {
        let x = orthogonal_design(12, 5, 3).unwrap();
        let g = x.transpose() * &x;
        assert!((g - DMatrix::identity(5, 5) * 12.0).abs().max() < 1e-10);
        assert!(orthogonal_design(3, 5, 1).is_err());
    }

    #[test]
    fn gaussian_columns_normalized_and_reproducible() {
        let a = gaussian_design(9, 4, 7);
        let b = gaussian_design(9, 4, 7);
        assert_eq!(a, b);
        for c in a.column_iter() {
            assert!((c.norm_squared() - 9.0).abs() < 1e-10);
        }
    }
}
