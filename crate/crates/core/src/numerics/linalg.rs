//! Small dense symmetric linear algebra: Cholesky, the symmetric-definite
//! generalized eigenproblem, and an SPD matrix carrier.

use nalgebra::{DMatrix, DVector};

use crate::error::{domain, Error, Result};

const SYMMETRY_TOL: f64 = 1e-12;

/// Symmetric matrix carrier for covariance-like quantities.
///
/// Construction checks squareness and symmetry (to 1e-12 relative) and
/// stores the exactly symmetrized matrix. Definiteness is checked only by
/// the operations that need it.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix(DMatrix<f64>);

impl SpdMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch { expected: m.nrows(), found: m.ncols() });
        }
        let scale = m.amax().max(f64::MIN_POSITIVE);
        for i in 0..m.nrows() {
            for j in 0..i {
                let diff = (m[(i, j)] - m[(j, i)]).abs();
                if !(diff <= SYMMETRY_TOL * scale) {
                    return Err(domain(format!(
                        "matrix is not symmetric: |m[{i},{j}] - m[{j},{i}]| = {diff:e}"
                    )));
                }
            }
        }
        Ok(Self::symmetrized(m))
    }

    /// Replaces `m` by `(m + mᵀ)/2` without checking.
    pub fn symmetrized(m: DMatrix<f64>) -> Self {
        let t = m.transpose();
        SpdMatrix((m + t) * 0.5)
    }

    pub fn identity(dim: usize) -> Self {
        SpdMatrix(DMatrix::identity(dim, dim))
    }

    pub fn zeros(dim: usize) -> Self {
        SpdMatrix(DMatrix::zeros(dim, dim))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        SpdMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn from_row_slice(dim: usize, entries: &[f64]) -> Result<Self> {
        if entries.len() != dim * dim {
            return Err(Error::DimensionMismatch { expected: dim * dim, found: entries.len() });
        }
        Self::new(DMatrix::from_row_slice(dim, dim, entries))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.0.diagonal().iter().copied().collect()
    }

    /// True when Cholesky succeeds.
    pub fn is_positive_definite(&self) -> bool {
        cholesky(self).is_ok()
    }
}

impl std::ops::Index<(usize, usize)> for SpdMatrix {
    type Output = f64;
    fn index(&self, idx: (usize, usize)) -> &f64 {
        &self.0[idx]
    }
}

/// Lower-triangular `L` with `L·Lᵀ = m`.
pub fn cholesky(m: &SpdMatrix) -> Result<DMatrix<f64>> {
    let a = m.as_matrix();
    let n = a.nrows();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut pivot = a[(j, j)];
        for k in 0..j {
            pivot -= l[(j, k)] * l[(j, k)];
        }
        if !(pivot > 0.0) || !pivot.is_finite() {
            return Err(Error::NotPositiveDefinite { pivot: j, value: pivot });
        }
        let ljj = pivot.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// Inverse of a positive definite matrix through its Cholesky factor.
pub fn spd_inverse(m: &SpdMatrix) -> Result<SpdMatrix> {
    let l = cholesky(m)?;
    let n = m.dim();
    let l_inv = l
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or(Error::Singular)?;
    Ok(SpdMatrix::symmetrized(l_inv.transpose() * l_inv))
}

/// General square inverse (LU).
pub fn inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch { expected: m.nrows(), found: m.ncols() });
    }
    m.clone().try_inverse().ok_or(Error::Singular)
}

/// Eigen-pairs of a diagonalizable matrix with real spectrum.
///
/// `vectors` holds unit-norm eigenvectors as columns, matched to `values`
/// (descending). `inverse` is `vectors⁻¹`, carried along because it is
/// available exactly from the construction in [`pair_eigen`].
#[derive(Debug, Clone, PartialEq)]
pub struct EigenPairs {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
    pub inverse: DMatrix<f64>,
}

impl EigenPairs {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// `U · diag(values) · U⁻¹` for replacement eigenvalues.
    pub fn reconstruct(&self, values: &[f64]) -> DMatrix<f64> {
        assert_eq!(values.len(), self.dim());
        let mut scaled = self.vectors.clone();
        for (j, &v) in values.iter().enumerate() {
            scaled.column_mut(j).scale_mut(v);
        }
        scaled * &self.inverse
    }
}

/// Eigen-decomposition of `w⁻¹·b` through the generalized problem
/// `b·u = λ·w·u`.
///
/// With `w = L·Lᵀ`, the symmetric matrix `L⁻¹·b·L⁻ᵀ` has the same spectrum,
/// so the eigenvalues are real, and non-negative whenever `b` is
/// semidefinite. Eigenvectors are `L⁻ᵀ·v`, normalized to unit length.
pub fn pair_eigen(w: &SpdMatrix, b: &SpdMatrix) -> Result<EigenPairs> {
    let n = w.dim();
    if b.dim() != n {
        return Err(Error::DimensionMismatch { expected: n, found: b.dim() });
    }
    if n == 1 {
        let (w0, b0) = (w[(0, 0)], b[(0, 0)]);
        if !(w0 > 0.0) {
            return Err(Error::NotPositiveDefinite { pivot: 0, value: w0 });
        }
        let one = DMatrix::from_element(1, 1, 1.0);
        return Ok(EigenPairs { values: vec![b0 / w0], vectors: one.clone(), inverse: one });
    }
    let l = cholesky(w)?;
    let left = l.solve_lower_triangular(b.as_matrix()).ok_or(Error::Singular)?;
    let reduced = l
        .solve_lower_triangular(&left.transpose())
        .ok_or(Error::Singular)?;
    let reduced = SpdMatrix::symmetrized(reduced);
    let (values, v) = symmetric_eigen(reduced.as_matrix());

    let lt = l.transpose();
    let mut vectors = lt.solve_upper_triangular(&v).ok_or(Error::Singular)?;
    let mut norms = Vec::with_capacity(n);
    for j in 0..n {
        let norm = vectors.column(j).norm();
        vectors.column_mut(j).unscale_mut(norm);
        norms.push(norm);
    }
    let mut inverse = v.transpose() * lt;
    for (i, &norm) in norms.iter().enumerate() {
        inverse.row_mut(i).scale_mut(norm);
    }
    Ok(EigenPairs { values, vectors, inverse })
}

/// Cyclic Jacobi eigensolver for a symmetric matrix.
///
/// Returns eigenvalues in descending order (stable for ties) and the
/// orthonormal eigenvectors as matching columns.
pub fn symmetric_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let mut a = m.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    let scale = a.norm_squared().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        if off <= 1e-32 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = if theta == 0.0 {
                    1.0
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].partial_cmp(&a[(i, i)]).unwrap_or(std::cmp::Ordering::Equal));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    (values, vectors)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(dim: usize, rows: &[f64]) -> SpdMatrix {
        SpdMatrix::from_row_slice(dim, rows).unwrap()
    }

    #[test]
    fn cholesky_examples() {
        let l = cholesky(&SpdMatrix::identity(3)).unwrap();
        assert_eq!(l, DMatrix::identity(3, 3));

        let l = cholesky(&spd(2, &[4.0, 2.0, 2.0, 5.0])).unwrap();
        assert_eq!(l, DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 1.0, 2.0]));

        match cholesky(&spd(2, &[1.0, 2.0, 2.0, 1.0])) {
            Err(Error::NotPositiveDefinite { pivot: 1, .. }) => {}
            other => panic!("expected NotPositiveDefinite, got {other:?}"),
        }
    }

    #[test]
    fn rejects_asymmetric() {
        assert!(SpdMatrix::from_row_slice(2, &[1.0, 0.5, 0.4, 1.0]).is_err());
        assert!(SpdMatrix::new(DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn pair_eigen_diagonal_cases() {
        let e = pair_eigen(&SpdMatrix::identity(2), &SpdMatrix::from_diagonal(&[0.3, 0.1])).unwrap();
        assert_eq!(e.values, vec![0.3, 0.1]);
        assert!((e.vectors[(0, 0)].abs() - 1.0).abs() < 1e-15);
        assert!(e.vectors[(1, 0)].abs() < 1e-15);

        let e = pair_eigen(&SpdMatrix::from_diagonal(&[2.0, 4.0]), &SpdMatrix::identity(2)).unwrap();
        assert!((e.values[0] - 0.5).abs() < 1e-15);
        assert!((e.values[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn ties_keep_index_order() {
        let (values, vectors) = symmetric_eigen(&DMatrix::identity(3, 3));
        assert_eq!(values, vec![1.0, 1.0, 1.0]);
        assert_eq!(vectors, DMatrix::identity(3, 3));
    }

    #[test]
    fn spd_inverse_matches_lu() {
        let m = spd(3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let a = spd_inverse(&m).unwrap();
        let b = inverse(m.as_matrix()).unwrap();
        assert!((a.as_matrix() - b).amax() < 1e-14);
    }
}
