//! Dense helpers shared by the modules; eigen work goes through nalgebra.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;

pub fn dagger(a: &Array2<C64>) -> Array2<C64> {
    a.t().mapv(|v| v.conj())
}

pub fn frobenius(a: &Array2<C64>) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

pub fn trace(a: &Array2<C64>) -> C64 {
    a.diag().sum()
}

fn to_na(a: &Array2<C64>) -> DMatrix<C64> {
    let (r, c) = a.dim();
    DMatrix::from_fn(r, c, |i, j| a[[i, j]])
}

/// Largest singular value.
pub fn spectral_norm(a: &Array2<C64>) -> f64 {
    let sv = to_na(a).singular_values();
    sv.iter().cloned().fold(0.0, f64::max)
}

/// Eigenvalues of the Hermitian part `(a + a^H)/2`, ascending.
pub fn hermitian_eigenvalues(a: &Array2<C64>) -> Vec<f64> {
    let m = to_na(a);
    let herm = (&m + m.adjoint()) * C64::new(0.5, 0.0);
    let mut ev: Vec<f64> = herm.symmetric_eigenvalues().iter().cloned().collect();
    ev.sort_by(|x, y| x.total_cmp(y));
    ev
}

/// Orthogonal eigendecomposition of a real symmetric matrix: `a = V diag(λ) Vᵀ`.
pub fn symmetric_eigen(a: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let (n, _) = a.dim();
    let m = DMatrix::from_fn(n, n, |i, j| 0.5 * (a[[i, j]] + a[[j, i]]));
    let eig = m.symmetric_eigen();
    let values = Array1::from_iter(eig.eigenvalues.iter().cloned());
    let vectors = Array2::from_shape_fn((n, n), |(i, j)| eig.eigenvectors[(i, j)]);
    (values, vectors)
}

/// `a · b` for real `a` and complex `b`.
pub fn real_dot(a: &Array2<f64>, b: &Array2<C64>) -> Array2<C64> {
    let re = a.dot(&b.mapv(|v| v.re));
    let im = a.dot(&b.mapv(|v| v.im));
    Array2::from_shape_fn(re.dim(), |(i, j)| C64::new(re[[i, j]], im[[i, j]]))
}

/// `b · a` for complex `b` and real `a`.
pub fn dot_real(b: &Array2<C64>, a: &Array2<f64>) -> Array2<C64> {
    let re = b.mapv(|v| v.re).dot(a);
    let im = b.mapv(|v| v.im).dot(a);
    Array2::from_shape_fn(re.dim(), |(i, j)| C64::new(re[[i, j]], im[[i, j]]))
}
