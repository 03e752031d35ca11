//! Small dense helpers shared by the cone, KKT and problem modules.
//!
//! Symmetric matrices are stored through `svec`: the lower triangle in
//! column-major order with off-diagonal entries scaled by `sqrt(2)`, so the
//! Euclidean inner product of two `svec` images equals the trace inner
//! product of the matrices.

use nalgebra::{DMatrix, SymmetricEigen};

pub(crate) const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Length of the symmetric vectorization of a `d x d` matrix.
pub fn svec_len(d: usize) -> usize {
    d * (d + 1) / 2
}

/// Recovers `d` from an `svec` length, if the length is triangular.
pub fn svec_order(len: usize) -> Option<usize> {
    let d = ((((8 * len + 1) as f64).sqrt() - 1.0) / 2.0).round() as usize;
    (svec_len(d) == len).then_some(d)
}

/// Symmetric vectorization of a square matrix (only the lower triangle is read).
pub fn svec(m: &DMatrix<f64>) -> Vec<f64> {
    let d = m.nrows();
    let mut out = Vec::with_capacity(svec_len(d));
    for j in 0..d {
        out.push(m[(j, j)]);
        for i in (j + 1)..d {
            out.push(SQRT_2 * m[(i, j)]);
        }
    }
    out
}

/// Writes `svec(m)` into `out`.
pub fn svec_into(m: &DMatrix<f64>, out: &mut [f64]) {
    let d = m.nrows();
    debug_assert_eq!(out.len(), svec_len(d));
    let mut p = 0;
    for j in 0..d {
        out[p] = m[(j, j)];
        p += 1;
        for i in (j + 1)..d {
            out[p] = SQRT_2 * m[(i, j)];
            p += 1;
        }
    }
}

/// Inverse of [`svec`]: rebuilds the full symmetric `d x d` matrix.
pub fn smat(v: &[f64], d: usize) -> DMatrix<f64> {
    debug_assert_eq!(v.len(), svec_len(d));
    let mut m = DMatrix::zeros(d, d);
    let mut p = 0;
    for j in 0..d {
        m[(j, j)] = v[p];
        p += 1;
        for i in (j + 1)..d {
            let x = v[p] / SQRT_2;
            m[(i, j)] = x;
            m[(j, i)] = x;
            p += 1;
        }
    }
    m
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Symmetric eigendecomposition with eigenvalues in ascending order.
pub fn sym_eigen(m: &DMatrix<f64>) -> SymmetricEigen<f64, nalgebra::Dyn> {
    let mut eig = SymmetricEigen::new(m.clone());
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = nalgebra::DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    eig.eigenvalues = values;
    eig.eigenvectors = vectors;
    eig
}

/// `U diag(f(lambda)) U^T` for a symmetric matrix with eigenpairs `(lambda, U)`.
pub fn spectral_apply(
    eig: &SymmetricEigen<f64, nalgebra::Dyn>,
    f: impl Fn(f64) -> f64,
) -> DMatrix<f64> {
    let u = &eig.eigenvectors;
    let mut scaled = u.clone();
    for (j, &lam) in eig.eigenvalues.iter().enumerate() {
        let s = f(lam);
        scaled.column_mut(j).scale_mut(s);
    }
    &scaled * u.transpose()
}

/// Principal square root of a symmetric PSD matrix. Returns `None` when an
/// eigenvalue is negative beyond `tol * max(1, |lambda_max|)`.
pub fn sym_sqrt(m: &DMatrix<f64>, tol: f64) -> Option<DMatrix<f64>> {
    let eig = sym_eigen(m);
    let scale = eig.eigenvalues.iter().fold(1.0_f64, |a, &l| a.max(l.abs()));
    if eig.eigenvalues.iter().any(|&l| l < -tol * scale) {
        return None;
    }
    Some(spectral_apply(&eig, |l| l.max(0.0).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svec_preserves_trace_inner_product() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, -0.5, 1.0, 3.0, 0.25, -0.5, 0.25, 1.0]);
        let b = DMatrix::from_row_slice(3, 3, &[1.0, -2.0, 0.0, -2.0, 0.5, 4.0, 0.0, 4.0, -1.0]);
        let trace = (&a * &b).trace();
        assert!((dot(&svec(&a), &svec(&b)) - trace).abs() < 1e-12);
        assert_eq!(smat(&svec(&a), 3), a);
    }

    #[test]
    fn svec_order_roundtrip() {
        for d in 1..20 {
            assert_eq!(svec_order(svec_len(d)), Some(d));
        }
        assert_eq!(svec_order(4), None);
    }

    #[test]
    fn sqrt_of_spd_squares_back() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let r = sym_sqrt(&m, 1e-12).unwrap();
        assert!((&r * &r - &m).norm() < 1e-12);
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(sym_sqrt(&indefinite, 1e-12).is_none());
    }
}
