//! Dense linear-algebra helpers shared by the estimators.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

// Off-diagonal convergence threshold relative to machine epsilon; far below
// the 1e-10 reconstruction tolerance the estimators rely on.
const EIGEN_EPS: f64 = f64::EPSILON;
const EIGEN_MAX_ITER: usize = 10_000;

/// Replaces `m` by `(m + m') / 2`.
pub fn symmetrize(m: &mut Matrix) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn ensure_square(m: &Matrix, what: &str) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::shape(
            format!("square {what}"),
            format!("{}x{}", m.nrows(), m.ncols()),
        ));
    }
    Ok(m.nrows())
}

/// Maximum absolute asymmetry `|m_ij - m_ji|`.
pub fn asymmetry(m: &Matrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted in
/// nonincreasing order. Ties keep the solver's original index order and each
/// eigenvector is signed so that its largest-magnitude entry is positive.
pub fn sym_eigen(m: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let n = ensure_square(m, "matrix")?;
    if n == 0 {
        return Ok((Vec::new(), Matrix::zeros(0, 0)));
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    if asymmetry(m) > 1e-10 * scale {
        return Err(Error::Data("matrix is not symmetric".into()));
    }
    let eig = SymmetricEigen::try_new(m.clone(), EIGEN_EPS, EIGEN_MAX_ITER)
        .ok_or_else(|| Error::Numerical("symmetric eigen-solver did not converge".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let values: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let col = eig.eigenvectors.column(src);
        let mut pivot = 0;
        for r in 1..n {
            if col[r].abs() > col[pivot].abs() + 1e-14 {
                pivot = r;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..n {
            vectors[(r, dst)] = sign * col[r];
        }
    }
    Ok((values, vectors))
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &Matrix) -> Result<f64> {
    let n = ensure_square(m, "matrix")?;
    if n == 0 {
        return Ok(f64::INFINITY);
    }
    if n == 1 {
        return Ok(m[(0, 0)]);
    }
    let vals = SymmetricEigen::try_new(m.clone(), EIGEN_EPS, EIGEN_MAX_ITER)
        .ok_or_else(|| Error::Numerical("symmetric eigen-solver did not converge".into()))?
        .eigenvalues;
    Ok(vals.iter().copied().fold(f64::INFINITY, f64::min))
}

/// True when `m - margin * I` admits a Cholesky factorization, i.e. the
/// smallest eigenvalue of `m` exceeds `margin`.
pub fn exceeds_eigenvalue(m: &Matrix, margin: f64) -> bool {
    let n = m.nrows();
    let mut shifted = m.clone();
    for i in 0..n {
        shifted[(i, i)] -= margin;
    }
    Cholesky::new(shifted).is_some()
}

/// Positive-definiteness test used for full covariance estimates: the
/// minimum eigenvalue must exceed `1e-10 * tr(m) / p`.
pub fn is_numerically_pd(m: &Matrix) -> bool {
    let n = m.nrows();
    if n == 0 {
        return true;
    }
    let margin = 1e-10 * m.trace().abs() / n as f64;
    exceeds_eigenvalue(m, margin)
}

/// Solves `m x = rhs` for a symmetric positive-definite `m`.
pub fn spd_solve(m: &Matrix, rhs: &Vector) -> Result<Vector> {
    let chol = Cholesky::new(m.clone()).ok_or(Error::NotPositiveDefinite {
        min_eigenvalue: min_eigenvalue(m).unwrap_or(f64::NAN),
    })?;
    Ok(chol.solve(rhs))
}

/// Subtracts each row's mean from that row.
pub fn center_rows(values: &Matrix) -> Matrix {
    let mut out = values.clone();
    let t = values.ncols() as f64;
    for mut row in out.row_iter_mut() {
        let mean = row.sum() / t;
        row.add_scalar_mut(-mean);
    }
    out
}

/// `(T-1)`-denominator covariance of the rows of a `p x T` matrix, exactly
/// symmetric.
pub fn row_covariance(values: &Matrix) -> Result<Matrix> {
    let t = values.ncols();
    if t < 2 {
        return Err(Error::Data(format!(
            "covariance needs at least 2 observations, got {t}"
        )));
    }
    let centered = center_rows(values);
    let mut cov = &centered * centered.transpose();
    cov /= (t - 1) as f64;
    symmetrize(&mut cov);
    Ok(cov)
}

/// Selects columns `cols` of `m`.
pub fn select_columns(m: &Matrix, cols: &[usize]) -> Matrix {
    Matrix::from_fn(m.nrows(), cols.len(), |r, c| m[(r, cols[c])])
}

/// Selects rows `rows` of `m`.
pub fn select_rows(m: &Matrix, rows: &[usize]) -> Matrix {
    Matrix::from_fn(rows.len(), m.ncols(), |r, c| m[(rows[r], c)])
}

/// Principal submatrix on `idx`.
pub fn submatrix(m: &Matrix, idx: &[usize]) -> Matrix {
    Matrix::from_fn(idx.len(), idx.len(), |r, c| m[(idx[r], idx[c])])
}

/// Diagonal matrix holding the diagonal of `m`.
pub fn diagonal_part(m: &Matrix) -> Matrix {
    Matrix::from_diagonal(&m.diagonal())
}

/// Applies a row/column permutation: `out[i][j] = m[perm[i]][perm[j]]`.
pub fn permute_symmetric(m: &Matrix, perm: &[usize]) -> Matrix {
    submatrix(m, perm)
}
