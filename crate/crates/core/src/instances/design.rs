//! Design operators `X_Z`, full-rank verification and projections onto the
//! column space of `X_Z`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::{check_structure, Structure};
use crate::error::{Error, Result};
use crate::family::{ModelFamily, ModelIndex};

/// Relative pivot tolerance for the rank test.
const PIVOT_TOL: f64 = 1e-10;

/// Cholesky factorization that also rejects pivots below
/// `1e-10 * max(diag(gram))`.
pub fn checked_cholesky(gram: DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    let max_diag = gram.diagonal().iter().copied().fold(0.0, f64::max);
    if !(max_diag > 0.0) || gram.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let chol = Cholesky::new(gram)?;
    let l = chol.l_dirty();
    if (0..l.nrows()).all(|i| l[(i, i)] * l[(i, i)] > PIVOT_TOL * max_diag) {
        Some(chol)
    } else {
        None
    }
}

/// The matrix `X_Z` (`N x ell`) with a cached Gram factorization
/// `X^T X = L L^T`.
#[derive(Clone, Debug)]
pub struct DesignOperator {
    pub matrix: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    pub log_det_gram: f64,
}

impl DesignOperator {
    pub fn new(matrix: DMatrix<f64>, label: impl FnOnce() -> String) -> Result<Self> {
        let gram = matrix.transpose() * &matrix;
        let chol = checked_cholesky(gram).ok_or_else(|| Error::CollinearStructure { structure: label() })?;
        let log_det_gram = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(Self { matrix, chol, log_det_gram })
    }

    pub fn ell(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    /// Lower Cholesky factor `L` of the Gram matrix; `G = L^T` satisfies `G^T G = X^T X`.
    pub fn gram_factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    fn check_len(&self, got: usize, expected: usize) -> Result<()> {
        if got == expected {
            Ok(())
        } else {
            Err(Error::DimensionMismatch { expected, got })
        }
    }

    /// `X_Z q`.
    pub fn apply(&self, q: &[f64]) -> Result<DVector<f64>> {
        self.check_len(q.len(), self.ell())?;
        Ok(&self.matrix * DVector::from_column_slice(q))
    }

    /// Coordinates of `P_Z y` in an orthonormal basis of the column space: `L^{-1} X^T y`.
    pub fn whiten(&self, y: &[f64]) -> Result<DVector<f64>> {
        self.check_len(y.len(), self.nrows())?;
        let xty = self.matrix.tr_mul(&DVector::from_column_slice(y));
        Ok(self.chol.l_dirty().solve_lower_triangular(&xty).expect("nonsingular factor"))
    }

    /// Solves `L^T q = w`, mapping whitened coordinates back to parameters.
    pub fn unwhiten(&self, w: &DVector<f64>) -> DVector<f64> {
        self.chol.l_dirty().tr_solve_lower_triangular(w).expect("nonsingular factor")
    }

    /// Least-squares coefficients `(X^T X)^{-1} X^T y`.
    pub fn least_squares(&self, y: &[f64]) -> Result<DVector<f64>> {
        let w = self.whiten(y)?;
        Ok(self.unwhiten(&w))
    }

    /// `P_Z y`.
    pub fn project(&self, y: &[f64]) -> Result<DVector<f64>> {
        let b = self.least_squares(y)?;
        Ok(&self.matrix * b)
    }

    /// `||P_Z y||`.
    pub fn projected_norm(&self, y: &[f64]) -> Result<f64> {
        Ok(self.whiten(y)?.norm())
    }

    /// `||(I - P_Z) y||^2`, computed from the explicit residual.
    pub fn residual_norm_sq(&self, y: &[f64]) -> Result<f64> {
        let py = self.project(y)?;
        Ok(y.iter().zip(py.iter()).map(|(a, b)| (a - b) * (a - b)).sum())
    }
}

fn label(z: &Structure) -> impl FnOnce() -> String + '_ {
    move || z.to_json()
}

/// Build the explicit `N x ell` matrix realizing the family's signal map for `z`.
pub fn design_matrix(family: &ModelFamily, tau: ModelIndex, z: &Structure) -> Result<DMatrix<f64>> {
    check_structure(family, tau, z)?;
    let n_rows = family.data_len();
    let ell = family.ell(tau)?;
    let mut x = DMatrix::zeros(n_rows, ell);
    use ModelIndex::*;
    match (family, tau, z) {
        (ModelFamily::Sbm { n, .. }, Single(k), Structure::Labels(v)) => {
            let mut row = 0;
            for i in 0..*n {
                for j in 0..*n {
                    if i != j {
                        x[(row, v[i] * k + v[j])] = 1.0;
                        row += 1;
                    }
                }
            }
        }
        (ModelFamily::Biclustering { n, m, .. }, Pair(_, l), Structure::LabelPair(a, b)) => {
            for i in 0..*n {
                for j in 0..*m {
                    x[(i * m + j, a[i] * l + b[j])] = 1.0;
                }
            }
        }
        (ModelFamily::SparseRegression { design, .. }, _, Structure::Support(s))
        | (ModelFamily::AggregationRegression { design, .. }, _, Structure::Support(s)) => {
            for (a, &j) in s.iter().enumerate() {
                x.set_column(a, &design.column(j));
            }
        }
        (ModelFamily::GroupSparsity { design, m, .. }, _, Structure::Support(s)) => {
            let n = design.nrows();
            for j in 0..*m {
                for (a, &col) in s.iter().enumerate() {
                    for i in 0..n {
                        x[(i + n * j, a + s.len() * j)] = design[(i, col)];
                    }
                }
            }
        }
        (ModelFamily::GroupTwoLevel { m, .. }, _, Structure::Cells(c)) => {
            for (a, &(i, j)) in c.iter().enumerate() {
                x[(i * m + j, a)] = 1.0;
            }
        }
        (ModelFamily::MultiTask { design, m, .. }, _, Structure::Labels(v)) => {
            let (n, p) = design.shape();
            for j in 0..*m {
                for a in 0..p {
                    for i in 0..n {
                        x[(i + n * j, a + p * v[j])] = design[(i, a)];
                    }
                }
            }
        }
        (ModelFamily::Dictionary { n, d, .. }, Pair(p, _), Structure::Signs(rows)) => {
            for j in 0..*d {
                for a in 0..p {
                    let zaj = rows[a][j] as f64;
                    if zaj != 0.0 {
                        for i in 0..*n {
                            x[(i + n * j, i + n * a)] = zaj;
                        }
                    }
                }
            }
        }
        (ModelFamily::SobolevSequence { .. }, _, Structure::Prefix(k)) => {
            for a in 0..*k {
                x[(a, a)] = 1.0;
            }
        }
        (ModelFamily::BesovLevel { .. }, _, Structure::Support(s)) => {
            for (a, &j) in s.iter().enumerate() {
                x[(j, a)] = 1.0;
            }
        }
        _ => unreachable!("structure validated"),
    }
    Ok(x)
}

/// `build_design`: the verified design operator for `z`, or `CollinearStructure`.
pub fn build_design(family: &ModelFamily, tau: ModelIndex, z: &Structure) -> Result<DesignOperator> {
    let x = design_matrix(family, tau, z)?;
    DesignOperator::new(x, label(z))
}

fn label_sizes(v: &[usize], k: usize) -> Vec<usize> {
    let mut c = vec![0; k];
    for &x in v {
        c[x] += 1;
    }
    c
}

fn support_gram(design: &DMatrix<f64>, s: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(s.len(), s.len(), |a, b| design.column(s[a]).dot(&design.column(s[b])))
}

fn sign_gram(rows: &[Vec<i8>]) -> DMatrix<f64> {
    let p = rows.len();
    DMatrix::from_fn(p, p, |a, b| {
        rows[a].iter().zip(&rows[b]).map(|(&x, &y)| (x as i32 * y as i32) as f64).sum()
    })
}

/// Whether `z` lies in `Zbar_tau` (`det(X_Z^T X_Z) > 0`), using structural
/// shortcuts where the Gram matrix has a closed form.
pub fn is_full_rank(family: &ModelFamily, tau: ModelIndex, z: &Structure) -> Result<bool> {
    check_structure(family, tau, z)?;
    use ModelIndex::*;
    Ok(match (family, tau, z) {
        // Block (u, v) has cells iff both clusters are nonempty and, for u = v,
        // the cluster holds two nodes.
        (ModelFamily::Sbm { .. }, Single(k), Structure::Labels(v)) => {
            label_sizes(v, k).iter().all(|&c| c >= 2)
        }
        (ModelFamily::Biclustering { .. }, Pair(k, l), Structure::LabelPair(a, b)) => {
            label_sizes(a, k).iter().all(|&c| c >= 1) && label_sizes(b, l).iter().all(|&c| c >= 1)
        }
        (ModelFamily::MultiTask { .. }, Single(k), Structure::Labels(v)) => {
            label_sizes(v, k).iter().all(|&c| c >= 1)
        }
        (ModelFamily::GroupTwoLevel { .. }, _, _)
        | (ModelFamily::SobolevSequence { .. }, _, _)
        | (ModelFamily::BesovLevel { .. }, _, _) => true,
        (ModelFamily::SparseRegression { design, .. }, _, Structure::Support(s))
        | (ModelFamily::GroupSparsity { design, .. }, _, Structure::Support(s))
        | (ModelFamily::AggregationRegression { design, .. }, _, Structure::Support(s)) => {
            checked_cholesky(support_gram(design, s)).is_some()
        }
        (ModelFamily::Dictionary { .. }, _, Structure::Signs(rows)) => {
            checked_cholesky(sign_gram(rows)).is_some()
        }
        _ => unreachable!("structure validated"),
    })
}

/// Inner products `<P_Z a, P_Z b>` among a list of data vectors, together
/// with `ell`.
#[derive(Clone, Debug)]
pub struct Projection {
    pub ell: usize,
    pub inner: DMatrix<f64>,
}

fn collinear(z: &Structure) -> Error {
    Error::CollinearStructure { structure: z.to_json() }
}

/// Inner products of projections through whitened coordinates `w_v` (one column per vector).
fn gram_of(w: &[DVector<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(w.len(), w.len(), |a, b| w[a].dot(&w[b]))
}

/// Accumulates `sum_g <P a_g, P b_g>` over groups sharing one factorization.
fn add_inner(acc: &mut DMatrix<f64>, w: &[DVector<f64>]) {
    for a in 0..w.len() {
        for b in 0..w.len() {
            acc[(a, b)] += w[a].dot(&w[b]);
        }
    }
}

/// `<P_Z a, P_Z b>` for all pairs among `vectors`, with closed forms for
/// the label and coordinate families. Fails with `CollinearStructure` for
/// `z` outside `Zbar_tau`.
pub fn projected_inner(
    family: &ModelFamily,
    tau: ModelIndex,
    z: &Structure,
    vectors: &[&[f64]],
) -> Result<Projection> {
    check_structure(family, tau, z)?;
    let n_data = family.data_len();
    for v in vectors {
        if v.len() != n_data {
            return Err(Error::DimensionMismatch { expected: n_data, got: v.len() });
        }
    }
    let ell = family.ell(tau)?;
    let nv = vectors.len();
    let mut inner = DMatrix::zeros(nv, nv);
    use ModelIndex::*;
    match (family, tau, z) {
        (ModelFamily::Sbm { n, .. }, Single(k), Structure::Labels(lab)) => {
            let mut sums = vec![0.0; k * k * nv];
            let mut counts = vec![0usize; k * k];
            let mut row = 0;
            for i in 0..*n {
                for j in 0..*n {
                    if i != j {
                        let b = lab[i] * k + lab[j];
                        counts[b] += 1;
                        for (c, v) in vectors.iter().enumerate() {
                            sums[b * nv + c] += v[row];
                        }
                        row += 1;
                    }
                }
            }
            block_inner(&mut inner, &sums, &counts, nv).ok_or_else(|| collinear(z))?;
        }
        (ModelFamily::Biclustering { n, m, .. }, Pair(k, l), Structure::LabelPair(a, b)) => {
            let mut sums = vec![0.0; k * l * nv];
            let mut counts = vec![0usize; k * l];
            for i in 0..*n {
                for j in 0..*m {
                    let blk = a[i] * l + b[j];
                    counts[blk] += 1;
                    for (c, v) in vectors.iter().enumerate() {
                        sums[blk * nv + c] += v[i * m + j];
                    }
                }
            }
            block_inner(&mut inner, &sums, &counts, nv).ok_or_else(|| collinear(z))?;
        }
        (ModelFamily::GroupTwoLevel { m, .. }, _, Structure::Cells(c)) => {
            let idx: Vec<usize> = c.iter().map(|&(i, j)| i * m + j).collect();
            coordinate_inner(&mut inner, &idx, vectors);
        }
        (ModelFamily::SobolevSequence { .. }, _, Structure::Prefix(k)) => {
            let idx: Vec<usize> = (0..*k).collect();
            coordinate_inner(&mut inner, &idx, vectors);
        }
        (ModelFamily::BesovLevel { .. }, _, Structure::Support(s)) => {
            coordinate_inner(&mut inner, s, vectors);
        }
        (ModelFamily::SparseRegression { design, .. }, _, Structure::Support(s))
        | (ModelFamily::AggregationRegression { design, .. }, _, Structure::Support(s)) => {
            let chol = checked_cholesky(support_gram(design, s)).ok_or_else(|| collinear(z))?;
            let w: Vec<DVector<f64>> = vectors
                .iter()
                .map(|v| {
                    let xtv = DVector::from_fn(s.len(), |a, _| {
                        design.column(s[a]).iter().zip(v.iter()).map(|(x, y)| x * y).sum()
                    });
                    chol.l_dirty().solve_lower_triangular(&xtv).expect("nonsingular factor")
                })
                .collect();
            inner = gram_of(&w);
        }
        (ModelFamily::GroupSparsity { design, m, .. }, _, Structure::Support(s)) => {
            let chol = checked_cholesky(support_gram(design, s)).ok_or_else(|| collinear(z))?;
            let n = design.nrows();
            for j in 0..*m {
                let w: Vec<DVector<f64>> = vectors
                    .iter()
                    .map(|v| {
                        let col = &v[n * j..n * (j + 1)];
                        let xtv = DVector::from_fn(s.len(), |a, _| {
                            design.column(s[a]).iter().zip(col).map(|(x, y)| x * y).sum()
                        });
                        chol.l_dirty().solve_lower_triangular(&xtv).expect("nonsingular factor")
                    })
                    .collect();
                add_inner(&mut inner, &w);
            }
        }
        (ModelFamily::MultiTask { design, m, .. }, Single(k), Structure::Labels(lab)) => {
            let n = design.nrows();
            let sizes = label_sizes(lab, k);
            if sizes.iter().any(|&c| c == 0) {
                return Err(collinear(z));
            }
            let chol = checked_cholesky(design.transpose() * design.as_ref()).ok_or_else(|| collinear(z))?;
            for (c, &size) in sizes.iter().enumerate() {
                // Tasks sharing a label share one coefficient column, so the
                // projection acts on the cluster sum scaled by 1/sqrt(size).
                let w: Vec<DVector<f64>> = vectors
                    .iter()
                    .map(|v| {
                        let mut sum = DVector::zeros(n);
                        for j in (0..*m).filter(|&j| lab[j] == c) {
                            sum += DVector::from_column_slice(&v[n * j..n * (j + 1)]);
                        }
                        let xtv = design.tr_mul(&sum) / (size as f64).sqrt();
                        chol.l_dirty().solve_lower_triangular(&xtv).expect("nonsingular factor")
                    })
                    .collect();
                add_inner(&mut inner, &w);
            }
        }
        (ModelFamily::Dictionary { n, d, .. }, _, Structure::Signs(rows)) => {
            let chol = checked_cholesky(sign_gram(rows)).ok_or_else(|| collinear(z))?;
            let p = rows.len();
            for i in 0..*n {
                // Row i of the n x d signal is regressed on the rows of Z.
                let w: Vec<DVector<f64>> = vectors
                    .iter()
                    .map(|v| {
                        let zr = DVector::from_fn(p, |a, _| {
                            (0..*d).map(|j| rows[a][j] as f64 * v[i + n * j]).sum()
                        });
                        chol.l_dirty().solve_lower_triangular(&zr).expect("nonsingular factor")
                    })
                    .collect();
                add_inner(&mut inner, &w);
            }
        }
        _ => unreachable!("structure validated"),
    }
    Ok(Projection { ell, inner })
}

fn block_inner(inner: &mut DMatrix<f64>, sums: &[f64], counts: &[usize], nv: usize) -> Option<()> {
    for (b, &c) in counts.iter().enumerate() {
        if c == 0 {
            return None;
        }
        let c = c as f64;
        for x in 0..nv {
            for y in 0..nv {
                inner[(x, y)] += sums[b * nv + x] * sums[b * nv + y] / c;
            }
        }
    }
    Some(())
}

fn coordinate_inner(inner: &mut DMatrix<f64>, idx: &[usize], vectors: &[&[f64]]) {
    for (a, va) in vectors.iter().enumerate() {
        for (b, vb) in vectors.iter().enumerate() {
            inner[(a, b)] = idx.iter().map(|&i| va[i] * vb[i]).sum();
        }
    }
}

/// Generic projection through the explicit design matrix.
pub fn projected_inner_generic(
    family: &ModelFamily,
    tau: ModelIndex,
    z: &Structure,
    vectors: &[&[f64]],
) -> Result<Projection> {
    let op = build_design(family, tau, z)?;
    let w: Vec<DVector<f64>> = vectors.iter().map(|v| op.whiten(v)).collect::<Result<_>>()?;
    Ok(Projection { ell: op.ell(), inner: gram_of(&w) })
}
