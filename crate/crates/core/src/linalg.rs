use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::C64;

/// `H diag(powers) H^H` for a channel matrix whose columns are user channels.
pub(crate) fn weighted_gram(channels: &DMatrix<C64>, powers: &[f64]) -> DMatrix<C64> {
    debug_assert_eq!(channels.ncols(), powers.len());
    let mut scaled = channels.clone();
    for (mut col, &p) in scaled.column_iter_mut().zip(powers) {
        col *= C64::from(p.max(0.0).sqrt());
    }
    &scaled * scaled.adjoint()
}

/// Real diagonal of a Hermitian matrix.
pub(crate) fn real_diagonal(m: &DMatrix<C64>) -> DVector<f64> {
    DVector::from_iterator(m.nrows(), (0..m.nrows()).map(|n| m[(n, n)].re))
}

pub(crate) fn add_to_diagonal(m: &mut DMatrix<C64>, diag: &DVector<f64>, scale: f64) {
    for (n, d) in diag.iter().enumerate() {
        m[(n, n)] += C64::from(scale * d);
    }
}

/// Cholesky factorization of a Hermitian positive definite matrix.
pub(crate) fn cholesky(m: DMatrix<C64>) -> Option<Cholesky<C64, Dyn>> {
    Cholesky::new(m)
}

/// `x^H diag(d) x`.
pub(crate) fn quad_form_diag(diag: &DVector<f64>, x: &DVector<C64>) -> f64 {
    diag.iter().zip(x.iter()).map(|(d, v)| d * v.norm_sqr()).sum()
}

/// Elementwise `|h|^2` of a complex matrix.
pub(crate) fn abs_sq(m: &DMatrix<C64>) -> DMatrix<f64> {
    m.map(|v| v.norm_sqr())
}
