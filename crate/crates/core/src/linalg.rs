//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

/// Column means of an `n x p` matrix.
pub fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows().max(1) as f64;
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n))
}

/// Sample covariance (divisor `n - 1`) of the rows of `x`.
pub fn sample_covariance(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let mean = column_means(x);
    let mut centered = x.clone();
    for (j, mut col) in centered.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
    }
    let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
    let mut cov = centered.transpose() * &centered / denom;
    symmetrize(&mut cov);
    cov
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Cholesky after adding `rel * trace / n` to the diagonal.
pub fn ridged_cholesky(m: &DMatrix<f64>, rel: f64) -> Option<Cholesky<f64, Dyn>> {
    let n = m.nrows();
    if n == 0 {
        return None;
    }
    let eps = rel * m.trace().abs() / n as f64;
    let mut a = m.clone();
    for i in 0..n {
        a[(i, i)] += eps;
    }
    Cholesky::new(a)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigen().eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

pub fn ones(n: usize) -> DVector<f64> {
    DVector::from_element(n, 1.0)
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
