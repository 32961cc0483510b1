use nalgebra::DMatrix;

use super::matrix::{gemm, Matrix, Transpose};
use crate::{Error, Result};

/// Gram matrices with a larger 2-norm condition number are rejected when no
/// ridge is requested.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Solves `min_W Σ_i ‖y_i − Wᵀ x_i‖² + ridge·‖W‖²_F` over the rows of
/// `regressors` (N×p) and `targets` (N×q), returning `W` (p×q).
///
/// The normal equations `(XᵀX + ridge·I) W = XᵀY` are solved by Cholesky with
/// one step of iterative refinement. With `ridge == 0` the Gram matrix must
/// have condition number at most [`CONDITION_LIMIT`]; no regularization is
/// ever added implicitly.
pub fn solve_least_squares(regressors: &Matrix, targets: &Matrix, ridge: f64) -> Result<Matrix> {
    if regressors.rows() != targets.rows() {
        return Err(Error::dims(
            "least-squares sample count",
            regressors.rows(),
            targets.rows(),
        ));
    }
    if !(ridge >= 0.0) || !ridge.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "ridge must be finite and nonnegative, got {ridge}"
        )));
    }
    let p = regressors.cols();
    if p == 0 {
        return Ok(Matrix::zeros(0, targets.cols()));
    }
    if ridge == 0.0 && regressors.rows() < p {
        return Err(Error::SingularGram {
            condition: f64::INFINITY,
        });
    }

    let mut gram = Matrix::zeros(p, p);
    gemm(1.0, regressors, Transpose::Yes, regressors, Transpose::No, 0.0, &mut gram);
    for i in 0..p {
        gram[(i, i)] += ridge;
    }
    if ridge == 0.0 {
        let condition = gram_condition_number(&gram);
        if !(condition <= CONDITION_LIMIT) {
            return Err(Error::SingularGram { condition });
        }
    }

    let mut rhs = Matrix::zeros(p, targets.cols());
    gemm(1.0, regressors, Transpose::Yes, targets, Transpose::No, 0.0, &mut rhs);

    let chol = cholesky(&gram).ok_or(Error::SingularGram {
        condition: f64::INFINITY,
    })?;
    let mut w = cholesky_solve(&chol, &rhs);

    // refinement: W += G⁻¹ (XᵀY − G W)
    let mut residual = rhs;
    gemm(-1.0, &gram, Transpose::No, &w, Transpose::No, 1.0, &mut residual);
    let delta = cholesky_solve(&chol, &residual);
    for (wi, di) in w.as_mut_slice().iter_mut().zip(delta.as_slice()) {
        *wi += di;
    }

    if !w.is_finite() {
        return Err(Error::SingularGram {
            condition: f64::INFINITY,
        });
    }
    Ok(w)
}

/// Ratio of the extreme eigenvalues of a symmetric positive semidefinite
/// matrix; `inf` when the smallest is not positive.
pub fn gram_condition_number(gram: &Matrix) -> f64 {
    let n = gram.rows();
    if n == 0 {
        return 1.0;
    }
    let m = DMatrix::from_row_slice(n, gram.cols(), gram.as_slice());
    let eig = m.symmetric_eigenvalues();
    let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min > 0.0) || !max.is_finite() {
        return f64::INFINITY;
    }
    max / min
}

/// Lower-triangular Cholesky factor, or `None` if the matrix is not
/// numerically positive definite.
fn cholesky(a: &Matrix) -> Option<Matrix> {
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) {
            return None;
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Some(l)
}

fn cholesky_solve(l: &Matrix, b: &Matrix) -> Matrix {
    let n = l.rows();
    let mut x = b.clone();
    for c in 0..b.cols() {
        for i in 0..n {
            let mut s = x[(i, c)];
            for k in 0..i {
                s -= l[(i, k)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = x[(i, c)];
            for k in i + 1..n {
                s -= l[(k, i)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn random(rng: &mut Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_vec(r, c, rng.uniform(-1.0, 1.0, r * c).unwrap()).unwrap()
    }

    #[test]
    fn identity_regressors_return_targets() {
        let y = Matrix::from_rows(&[[1.0, -2.0], [3.5, 0.25], [-7.0, 9.0]]).unwrap();
        let w = solve_least_squares(&Matrix::identity(3), &y, 0.0).unwrap();
        assert!(w.sub(&y).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn noiseless_linear_model_is_recovered() {
        let mut rng = Rng::new(42);
        let x = random(&mut rng, 50, 4);
        let w0 = random(&mut rng, 4, 3);
        let y = x.matmul(&w0).unwrap();
        let w = solve_least_squares(&x, &y, 0.0).unwrap();
        assert!(w.sub(&w0).unwrap().max_abs() < 1e-9);
    }

    #[test]
    fn duplicated_column_is_singular() {
        let mut rng = Rng::new(7);
        let base = random(&mut rng, 30, 3);
        let x = Matrix::from_fn(30, 4, |i, j| base[(i, j.min(2))]);
        let y = random(&mut rng, 30, 1);
        assert!(matches!(
            solve_least_squares(&x, &y, 0.0),
            Err(Error::SingularGram { .. })
        ));
        // an explicit ridge makes it solvable
        assert!(solve_least_squares(&x, &y, 1e-6).is_ok());
    }

    #[test]
    fn underdetermined_without_ridge_is_singular() {
        let mut rng = Rng::new(8);
        let x = random(&mut rng, 2, 3);
        let y = random(&mut rng, 2, 1);
        assert!(matches!(
            solve_least_squares(&x, &y, 0.0),
            Err(Error::SingularGram { .. })
        ));
    }

    #[test]
    fn ridge_matches_closed_form() {
        let mut rng = Rng::new(9);
        let x = random(&mut rng, 12, 2);
        let y = random(&mut rng, 12, 1);
        let lambda = 0.7;
        let w = solve_least_squares(&x, &y, lambda).unwrap();
        // 2x2 closed form inverse
        let g = x.transpose().matmul(&x).unwrap();
        let (a, b, c, d) = (g[(0, 0)] + lambda, g[(0, 1)], g[(1, 0)], g[(1, 1)] + lambda);
        let det = a * d - b * c;
        let r = x.transpose().matmul(&y).unwrap();
        let w0 = (d * r[(0, 0)] - b * r[(1, 0)]) / det;
        let w1 = (-c * r[(0, 0)] + a * r[(1, 0)]) / det;
        assert!((w[(0, 0)] - w0).abs() < 1e-12);
        assert!((w[(1, 0)] - w1).abs() < 1e-12);
    }

    #[test]
    fn rejects_negative_ridge() {
        let x = Matrix::identity(2);
        assert!(matches!(
            solve_least_squares(&x, &x, -1.0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn residuals_are_orthogonal_to_regressors() {
        let mut rng = Rng::new(10);
        for trial in 0..10 {
            let n = 20 + trial * 7;
            let x = random(&mut rng, n, 5);
            let y = random(&mut rng, n, 2);
            let w = solve_least_squares(&x, &y, 0.0).unwrap();
            let resid = y.sub(&x.matmul(&w).unwrap()).unwrap();
            let xt_r = x.transpose().matmul(&resid).unwrap();
            let xt_y = x.transpose().matmul(&y).unwrap();
            assert!(xt_r.max_abs() <= 1e-8 * xt_y.max_abs());
        }
    }
}
