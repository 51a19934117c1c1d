//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{DMatrix, DVector};

/// Modified Gram-Schmidt with a second re-orthogonalization pass.
/// Returns the orthonormal columns that survive; dependent columns
/// (relative norm below `tol`) are dropped.
pub fn orthonormalize_columns(cols: &[DVector<f64>], tol: f64) -> Vec<DVector<f64>> {
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(cols.len());
    for c in cols {
        let scale = c.norm();
        if scale == 0.0 {
            continue;
        }
        let mut v = c / scale;
        for _pass in 0..2 {
            for b in &basis {
                let d = b.dot(&v);
                v -= b * d;
            }
        }
        let n = v.norm();
        if n > tol {
            basis.push(v / n);
        }
    }
    basis
}

/// Orthonormal basis of the orthogonal complement of `basis` (orthonormal
/// columns) inside the ambient space, deterministically completed from the
/// standard basis.
pub fn orthogonal_complement(basis: &[DVector<f64>], ambient: usize) -> Vec<DVector<f64>> {
    let want = ambient - basis.len();
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(want);
    for j in 0..ambient {
        if out.len() == want {
            break;
        }
        let mut v = DVector::zeros(ambient);
        v[j] = 1.0;
        for _pass in 0..2 {
            for b in basis {
                let d = b.dot(&v);
                v -= b * d;
            }
            for b in &out {
                let d = b.dot(&v);
                v -= b * d;
            }
        }
        let n = v.norm();
        if n > 1e-10 {
            out.push(v / n);
        }
    }
    out
}

pub fn columns_to_matrix(cols: &[DVector<f64>], rows: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols.len());
    for (j, c) in cols.iter().enumerate() {
        m.set_column(j, c);
    }
    m
}

pub fn matrix_columns(m: &DMatrix<f64>) -> Vec<DVector<f64>> {
    (0..m.ncols()).map(|j| m.column(j).into_owned()).collect()
}

/// Numerical rank: singular values above `tol * sigma_max`.
pub fn numerical_rank(m: &DMatrix<f64>, tol: f64) -> usize {
    let sv = m.clone().singular_values();
    let smax = sv.max();
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > tol * smax).count()
}

/// Smallest and largest singular values of a matrix.
pub fn extreme_singular_values(m: &DMatrix<f64>) -> (f64, f64) {
    let sv = m.clone().singular_values();
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for &s in sv.iter() {
        lo = lo.min(s);
        hi = hi.max(s);
    }
    if m.nrows() > m.ncols() || m.ncols() > m.nrows() {
        // singular_values returns min(n,m) values; the rank-deficient
        // direction of a rectangular matrix is not among them, which is the
        // convention we want (smallest singular value of the column system).
    }
    if !lo.is_finite() {
        lo = 0.0;
    }
    (lo, hi)
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    extreme_singular_values(m).1
}

/// Symmetric positive-definite square root via eigendecomposition.
pub fn spd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut d = DMatrix::zeros(m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        d[(i, i)] = eig.eigenvalues[i].max(0.0).sqrt();
    }
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// Matrix exponential of a symmetric matrix via eigendecomposition.
pub fn sym_exp(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut d = DMatrix::zeros(m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        d[(i, i)] = eig.eigenvalues[i].exp();
    }
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Row-major nested-array encoding used by every JSON interface.
pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn rows_to_matrix(rows: &[Vec<f64>]) -> Option<DMatrix<f64>> {
    let nrows = rows.len();
    if nrows == 0 {
        return None;
    }
    let ncols = rows[0].len();
    if ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return None;
    }
    let mut m = DMatrix::zeros(nrows, ncols);
    for (i, r) in rows.iter().enumerate() {
        for (j, &v) in r.iter().enumerate() {
            if !v.is_finite() {
                return None;
            }
            m[(i, j)] = v;
        }
    }
    Some(m)
}

pub fn vec_to_dvector(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    #[test]
    fn complement_completes_basis() {
        let b = vec![
            DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0]),
            DVector::from_vec(vec![0.0, 1.0 / 2f64.sqrt(), 1.0 / 2f64.sqrt(), 0.0]),
        ];
        let c = orthogonal_complement(&b, 4);
        assert_eq!(c.len(), 2);
        for v in &c {
            for u in &b {
                assert!(u.dot(v).abs() < 1e-12);
            }
            assert!((v.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn spd_sqrt_squares_back() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let r = spd_sqrt(&a);
        let back = &r * &r;
        assert!(frobenius(&(back - a)) < 1e-10);
    }

    #[test]
    fn rank_detects_projector() {
        let mut p = DMatrix::zeros(4, 4);
        p[(0, 0)] = 1.0;
        p[(1, 1)] = 1.0;
        assert_eq!(numerical_rank(&p, 1e-8), 2);
    }
}
