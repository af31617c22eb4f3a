//! Small dense helpers for Hermitian matrices.

use nalgebra::linalg::{Cholesky, SymmetricEigen};
use nalgebra::Dyn;
use nalgebra::{DMatrix, DVector};

use crate::{CMatrix, CVector, C64};

/// Returns (A + A^H) / 2.
pub fn hermitize(a: &CMatrix) -> CMatrix {
    (a + a.adjoint()) * C64::new(0.5, 0.0)
}

/// Largest entrywise modulus of A − A^H.
pub fn hermitian_defect(a: &CMatrix) -> f64 {
    (a - a.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Re Tr(A B) for Hermitian A, B.
pub fn trace_product(a: &CMatrix, b: &CMatrix) -> f64 {
    debug_assert_eq!(a.ncols(), b.nrows());
    let mut acc = 0.0;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            acc += (a[(i, j)] * b[(j, i)]).re;
        }
    }
    acc
}

pub fn trace(a: &CMatrix) -> f64 {
    (0..a.nrows()).map(|i| a[(i, i)].re).sum()
}

/// Eigendecomposition of a Hermitian matrix with eigenvalues in ascending order.
pub struct HermitianEigen {
    pub values: DVector<f64>,
    pub vectors: CMatrix,
}

impl HermitianEigen {
    pub fn new(a: &CMatrix) -> Self {
        let eig = SymmetricEigen::new(hermitize(a));
        let n = eig.eigenvalues.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
        let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
        let mut vectors = CMatrix::zeros(n, n);
        for (dst, &src) in order.iter().enumerate() {
            vectors.set_column(dst, &eig.eigenvectors.column(src));
        }
        Self { values, vectors }
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// Unit eigenvector of the largest eigenvalue.
    pub fn principal_vector(&self) -> CVector {
        self.vectors.column(self.values.len() - 1).into_owned()
    }

    /// Rebuilds V diag(f(λ)) V^H.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> CMatrix {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for j in 0..n {
            let s = C64::new(f(self.values[j]), 0.0);
            for i in 0..n {
                scaled[(i, j)] *= s;
            }
        }
        hermitize(&(scaled * self.vectors.adjoint()))
    }
}

/// Cholesky factor of a Hermitian positive definite matrix, `None` otherwise.
///
/// nalgebra's complex square root never fails, so an indefinite input would
/// yield a factor with imaginary pivots instead of `None`; those are rejected
/// here.
pub fn hermitian_cholesky(a: &CMatrix) -> Option<Cholesky<C64, Dyn>> {
    let chol = Cholesky::new(a.clone())?;
    let ok = chol.l_dirty().diagonal().iter().all(|d| d.re > 0.0 && d.im.abs() <= 1e-10 * d.re);
    ok.then_some(chol)
}

/// Lifts a real matrix to a complex one.
pub fn complexify(a: &DMatrix<f64>) -> CMatrix {
    a.map(|x| C64::new(x, 0.0))
}

/// Outer product x x^H.
pub fn outer(x: &CVector) -> CMatrix {
    x * x.adjoint()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_rejects_indefinite() {
        let pd = CMatrix::from_row_slice(2, 2, &[C64::new(2.0, 0.0), C64::new(0.0, 1.0), C64::new(0.0, -1.0), C64::new(2.0, 0.0)]);
        assert!(hermitian_cholesky(&pd).is_some());
        let indefinite = CMatrix::from_row_slice(2, 2, &[C64::new(1.0, 0.0), C64::new(3.0, 0.0), C64::new(3.0, 0.0), C64::new(1.0, 0.0)]);
        assert!(hermitian_cholesky(&indefinite).is_none());
        assert!(hermitian_cholesky(&CMatrix::zeros(2, 2)).is_none());
    }

    #[test]
    fn eigen_sorted_and_reconstructs() {
        let a = CMatrix::from_row_slice(
            2,
            2,
            &[C64::new(2.0, 0.0), C64::new(0.0, 1.0), C64::new(0.0, -1.0), C64::new(2.0, 0.0)],
        );
        let e = HermitianEigen::new(&a);
        assert!((e.min() - 1.0).abs() < 1e-12);
        assert!((e.max() - 3.0).abs() < 1e-12);
        let back = e.map(|x| x);
        assert!((back - a).norm() < 1e-12);
    }

    #[test]
    fn trace_product_matches_dense() {
        let a = CMatrix::from_fn(3, 3, |i, j| C64::new((i + j) as f64, i as f64 - j as f64));
        let b = CMatrix::from_fn(3, 3, |i, j| C64::new((i * j) as f64 + 1.0, j as f64 - i as f64));
        let dense = (&a * &b).trace().re;
        assert!((trace_product(&a, &b) - dense).abs() < 1e-12);
    }
}
