//! Continuous-time LQR via Newton–Kleinman iteration.

use super::{inverse, Matrix};
use crate::error::{Error, Result};

const MAX_ITERATIONS: usize = 100;
const RESIDUAL_TOL: f64 = 1e-8;

/// Solve `AᵀX + XA + M = 0` through the Kronecker form
/// `(I ⊗ Aᵀ + Aᵀ ⊗ I) vec(X) = -vec(M)` (column-major vec).
pub fn solve_lyapunov(a: &Matrix, m: &Matrix) -> Result<Matrix> {
    let n = a.nrows();
    if !a.is_square() || m.shape() != (n, n) {
        return Err(Error::Dimension("lyapunov operands must be square and equal size".into()));
    }
    let at = a.transpose();
    let mut kron = Matrix::zeros(n * n, n * n);
    for j in 0..n {
        for i in 0..n {
            let row = j * n + i;
            // (I ⊗ Aᵀ) vec(X): Σ_k Aᵀ[i,k] X[k,j]
            for k in 0..n {
                kron[(row, j * n + k)] += at[(i, k)];
            }
            // (Aᵀ ⊗ I) vec(X): Σ_k X[i,k] A[k,j]
            for k in 0..n {
                kron[(row, k * n + i)] += a[(k, j)];
            }
        }
    }
    let rhs = -Matrix::from_column_slice(n * n, 1, m.as_slice());
    let sol = kron
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("lyapunov operator".into()))?;
    let x = Matrix::from_column_slice(n, n, sol.as_slice());
    Ok((&x + x.transpose()) * 0.5)
}

/// Relative Frobenius residual of the CARE at `P`.
pub fn care_residual(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix, p: &Matrix) -> Result<f64> {
    let rinv = inverse(r)?;
    let atp = a.transpose() * p;
    let pa = p * a;
    let quad = p * b * &rinv * b.transpose() * p;
    let res = &atp + &pa - &quad + q;
    let scale = atp.norm() + pa.norm() + quad.norm() + q.norm();
    Ok(if scale > 0.0 { res.norm() / scale } else { res.norm() })
}

fn max_real_eig(a: &Matrix) -> f64 {
    a.complex_eigenvalues().iter().map(|c| c.re).fold(f64::NEG_INFINITY, f64::max)
}

/// Stabilizing initial gain. Zero if `A` is already Hurwitz, otherwise the
/// eigenvalue-shift construction: with `λ > ‖A‖`, solve
/// `(A+λI)Z + Z(A+λI)ᵀ = 2BBᵀ` and take `K = BᵀZ⁻¹`, which places the
/// closed-loop spectrum on `Re s = -λ` for controllable `(A, B)`.
fn initial_gain(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let n = a.nrows();
    if max_real_eig(a) < 0.0 {
        return Ok(Matrix::zeros(b.ncols(), n));
    }
    let lambda = a.norm() + 1.0;
    let shifted = -(a + Matrix::identity(n, n) * lambda).transpose();
    let z = solve_lyapunov(&shifted, &(b * b.transpose() * 2.0))?;
    let zinv = inverse(&z).map_err(|_| Error::Singular("(A, B) is not controllable".into()))?;
    Ok(b.transpose() * zinv)
}

/// Stabilizing solution of `AᵀP + PA − PBR⁻¹BᵀP + Q = 0`.
pub fn solve_care(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix) -> Result<Matrix> {
    let n = a.nrows();
    let m = b.ncols();
    if !a.is_square() || b.nrows() != n || q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(Error::Dimension("CARE operands have inconsistent shapes".into()));
    }
    let rinv = inverse(r)?;
    let mut k = initial_gain(a, b)?;
    let mut p = Matrix::zeros(n, n);
    for it in 0..MAX_ITERATIONS {
        let acl = a - b * &k;
        let rhs = q + k.transpose() * r * &k;
        let next = solve_lyapunov(&acl, &rhs)?;
        let delta = (&next - &p).norm();
        p = next;
        k = &rinv * b.transpose() * &p;
        if delta <= 1e-14 * p.norm().max(1.0) && it > 0 {
            break;
        }
    }
    let residual = care_residual(a, b, q, r, &p)?;
    if !residual.is_finite() || residual > RESIDUAL_TOL {
        return Err(Error::CareFailed {
            residual,
            iterations: MAX_ITERATIONS,
        });
    }
    Ok(p)
}

/// `K = R⁻¹BᵀP` for the stabilizing CARE solution.
pub fn lqr_gain(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix) -> Result<Matrix> {
    let p = solve_care(a, b, q, r)?;
    Ok(inverse(r)? * b.transpose() * p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn scalar_integrator() {
        for (q, r) in [(1.0, 1.0), (10.0, 1.0), (2.0, 0.5)] {
            let k = lqr_gain(
                &Matrix::zeros(1, 1),
                &Matrix::identity(1, 1),
                &Matrix::from_element(1, 1, q),
                &Matrix::from_element(1, 1, r),
            )
            .unwrap();
            assert_relative_eq!(k[(0, 0)], (q / r as f64).sqrt(), epsilon = 1e-10);
        }
    }

    #[test]
    fn double_integrator() {
        let a = Matrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let b = Matrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let k = lqr_gain(&a, &b, &Matrix::identity(2, 2), &Matrix::identity(1, 1)).unwrap();
        assert_relative_eq!(k[(0, 0)], 1.0, epsilon = 1e-8);
        assert_relative_eq!(k[(0, 1)], 3f64.sqrt(), epsilon = 1e-8);
        let p = solve_care(&a, &b, &Matrix::identity(2, 2), &Matrix::identity(1, 1)).unwrap();
        let s3 = 3f64.sqrt();
        assert_relative_eq!(p, Matrix::from_row_slice(2, 2, &[s3, 1.0, 1.0, s3]), epsilon = 1e-8);
    }

    #[test]
    fn closed_loop_hurwitz_and_residual_small() {
        // Chain of three integrators plus a coupled unstable mode.
        let a = Matrix::from_row_slice(4, 4, &[
            0.0, 1.0, 0.0, 0.0,
            0.0, 0.0, 1.0, 0.0,
            0.0, 0.0, 0.0, 0.0,
            0.3, 0.0, 0.0, 0.5,
        ]);
        let b = Matrix::from_row_slice(4, 2, &[0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        let q = Matrix::identity(4, 4) * 10.0;
        let r = Matrix::identity(2, 2);
        let p = solve_care(&a, &b, &q, &r).unwrap();
        assert!(care_residual(&a, &b, &q, &r, &p).unwrap() < 1e-8);
        let k = lqr_gain(&a, &b, &q, &r).unwrap();
        assert!(max_real_eig(&(&a - &b * k)) < 0.0);
    }

    #[test]
    fn lyapunov_solution_satisfies_equation() {
        let a = Matrix::from_row_slice(3, 3, &[-1.0, 2.0, 0.0, 0.0, -3.0, 1.0, 0.5, 0.0, -2.0]);
        let m = Matrix::identity(3, 3);
        let x = solve_lyapunov(&a, &m).unwrap();
        let res = a.transpose() * &x + &x * &a + &m;
        assert!(res.norm() < 1e-12);
    }

    #[test]
    fn uncontrollable_pair_is_rejected() {
        let a = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let b = Matrix::from_column_slice(2, 1, &[1.0, 0.0]);
        assert!(lqr_gain(&a, &b, &Matrix::identity(2, 2), &Matrix::identity(1, 1)).is_err());
    }
}
