//! Dense numerical kernels shared by the rest of the crate.

mod lqr;
mod rng;

pub use lqr::{care_residual, lqr_gain, solve_care, solve_lyapunov};
pub use rng::Rng;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Default inner integration step in seconds.
pub const DEFAULT_INNER_STEP: f64 = 1e-3;

const NILPOTENT_TOL: f64 = 1e-12;

pub fn is_finite(v: &Vector) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Classical RK4 with `substeps` uniform steps over `[0, dt]`, control held
/// constant (zero-order hold).
pub fn integrate_rk4<F>(field: F, x0: &Vector, u: &Vector, dt: f64, substeps: usize) -> Result<Vector>
where
    F: Fn(&Vector, &Vector) -> Vector,
{
    if !(dt > 0.0) || substeps == 0 {
        return Err(Error::InvalidParameter(format!(
            "rk4 needs dt > 0 and substeps >= 1 (dt = {dt}, substeps = {substeps})"
        )));
    }
    let h = dt / substeps as f64;
    let mut x = x0.clone();
    for i in 0..substeps {
        let k1 = field(&x, u);
        let k2 = field(&(&x + &k1 * (0.5 * h)), u);
        let k3 = field(&(&x + &k2 * (0.5 * h)), u);
        let k4 = field(&(&x + &k3 * h), u);
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        if !is_finite(&x) {
            return Err(Error::IntegrationDiverged {
                time: (i + 1) as f64 * h,
            });
        }
    }
    Ok(x)
}

/// Number of inner steps of at most `max_step` needed to cover `dt`.
pub fn substeps_for(dt: f64, max_step: f64) -> usize {
    ((dt / max_step) - 1e-9).ceil().max(1.0) as usize
}

/// Smallest `m` with `A^m = 0` (within tolerance relative to `‖A‖`).
pub fn nilpotency_index(a: &Matrix) -> Result<usize> {
    if !a.is_square() {
        return Err(Error::Dimension(format!("expected square matrix, got {}x{}", a.nrows(), a.ncols())));
    }
    let n = a.nrows();
    let scale = a.norm().max(1.0);
    let mut power = Matrix::identity(n, n);
    for m in 1..=n.max(1) {
        power = &power * a;
        if power.norm() <= NILPOTENT_TOL * scale.powi(m as i32) {
            return Ok(m);
        }
    }
    Err(Error::NotNilpotent { residual: power.norm() })
}

/// `e^{At}` for nilpotent `A`, as the exact truncated power series.
pub fn expm_nilpotent(a: &Matrix, t: f64) -> Result<Matrix> {
    let m = nilpotency_index(a)?;
    let n = a.nrows();
    let mut term = Matrix::identity(n, n);
    let mut sum = term.clone();
    for k in 1..m {
        term = &term * a * (t / k as f64);
        sum += &term;
    }
    Ok(sum)
}

/// `∫₀^dt e^{As} B ds` for nilpotent `A`: `Σ_{k<m} A^k B dt^{k+1}/(k+1)!`.
pub fn zoh_input_matrix(a: &Matrix, b: &Matrix, dt: f64) -> Result<Matrix> {
    if b.nrows() != a.nrows() {
        return Err(Error::Dimension(format!("B has {} rows, A is {}x{}", b.nrows(), a.nrows(), a.ncols())));
    }
    let m = nilpotency_index(a)?;
    let mut term = b * dt;
    let mut sum = term.clone();
    for k in 1..m {
        term = a * &term * (dt / (k + 1) as f64);
        sum += &term;
    }
    Ok(sum)
}

/// Central-difference gradient of a scalar function.
pub fn finite_diff_gradient<F>(f: F, x: &Vector, h: f64) -> Result<Vector>
where
    F: Fn(&Vector) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::InvalidParameter(format!("step must be positive, got {h}")));
    }
    let mut grad = Vector::zeros(x.len());
    let mut probe = x.clone();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let fp = f(&probe);
        probe[i] = x[i] - h;
        let fm = f(&probe);
        probe[i] = x[i];
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite(format!("function value near coordinate {i}")));
        }
        grad[i] = (fp - fm) / (2.0 * h);
    }
    Ok(grad)
}

/// Central-difference Jacobian of a vector function (rows = outputs).
pub fn finite_diff_jacobian<F>(f: F, x: &Vector, h: f64) -> Result<Matrix>
where
    F: Fn(&Vector) -> Vector,
{
    if !(h > 0.0) {
        return Err(Error::InvalidParameter(format!("step must be positive, got {h}")));
    }
    let f0 = f(x);
    let mut jac = Matrix::zeros(f0.len(), x.len());
    let mut probe = x.clone();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let fp = f(&probe);
        probe[i] = x[i] - h;
        let fm = f(&probe);
        probe[i] = x[i];
        if !is_finite(&fp) || !is_finite(&fm) {
            return Err(Error::NonFinite(format!("function value near coordinate {i}")));
        }
        jac.set_column(i, &((fp - fm) / (2.0 * h)));
    }
    Ok(jac)
}

/// 2-norm condition number via singular values.
pub fn condition_number(a: &Matrix) -> f64 {
    let sv = a.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Solve `A x = b` by LU.
pub fn solve(a: &Matrix, b: &Vector) -> Result<Vector> {
    a.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::Singular(format!("{}x{} linear solve", a.nrows(), a.ncols())))
}

pub fn inverse(a: &Matrix) -> Result<Matrix> {
    a.clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular(format!("{}x{} inverse", a.nrows(), a.ncols())))
}

/// Block-diagonal assembly.
pub fn block_diag(blocks: &[Matrix]) -> Matrix {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Rank via SVD with relative threshold.
pub fn rank(a: &Matrix, rel_tol: f64) -> usize {
    let sv = a.clone().singular_values();
    let max = sv.max();
    sv.iter().filter(|&&s| s > rel_tol * max).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn integrator() -> Matrix {
        Matrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0])
    }

    #[test]
    fn rk4_zero_field_is_fixed_point() {
        let x0 = Vector::from_vec(vec![1.0, 2.0]);
        let x = integrate_rk4(|x, _| Vector::zeros(x.len()), &x0, &Vector::zeros(0), 0.1, 7).unwrap();
        assert_eq!(x, x0);
    }

    #[test]
    fn rk4_exact_on_integrator_chain() {
        let a = integrator();
        let x0 = Vector::from_vec(vec![0.0, 1.0]);
        let x = integrate_rk4(|x, _| &a * x, &x0, &Vector::zeros(0), 0.05, 1).unwrap();
        assert_relative_eq!(x[0], 0.05, epsilon = 1e-15);
        assert_relative_eq!(x[1], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn rk4_exact_for_nilpotent_index_four() {
        // Single step on x' = A x with A^4 = 0 matches e^{A dt} x0.
        let mut a = Matrix::zeros(4, 4);
        for i in 0..3 {
            a[(i, i + 1)] = 1.3;
        }
        let x0 = Vector::from_vec(vec![0.2, -1.0, 0.7, 2.0]);
        let dt = 0.37;
        let x = integrate_rk4(|x, _| &a * x, &x0, &Vector::zeros(0), dt, 1).unwrap();
        let exact = expm_nilpotent(&a, dt).unwrap() * &x0;
        assert_relative_eq!(x, exact, epsilon = 1e-14);
    }

    #[test]
    fn rk4_reports_divergence() {
        let x0 = Vector::from_vec(vec![1.0]);
        let err = integrate_rk4(|x, _| x.map(|v| v * v * 1e200), &x0, &Vector::zeros(0), 1.0, 10).unwrap_err();
        assert!(matches!(err, Error::IntegrationDiverged { .. }));
    }

    #[test]
    fn expm_of_zero_is_identity() {
        for n in 1..5 {
            assert_eq!(expm_nilpotent(&Matrix::zeros(n, n), 1.0).unwrap(), Matrix::identity(n, n));
        }
    }

    #[test]
    fn expm_integrator_block() {
        let e = expm_nilpotent(&integrator(), 0.05).unwrap();
        assert_eq!(e, Matrix::from_row_slice(2, 2, &[1.0, 0.05, 0.0, 1.0]));
    }

    #[test]
    fn expm_block_structure() {
        let a = block_diag(&[integrator(), integrator()]);
        let e = expm_nilpotent(&a, 0.05).unwrap();
        let blk = Matrix::from_row_slice(2, 2, &[1.0, 0.05, 0.0, 1.0]);
        assert_eq!(e, block_diag(&[blk.clone(), blk]));
    }

    #[test]
    fn expm_rejects_non_nilpotent() {
        let a = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(expm_nilpotent(&a, 1.0), Err(Error::NotNilpotent { .. })));
    }

    #[test]
    fn expm_semigroup() {
        let mut a = Matrix::zeros(5, 5);
        for i in 0..4 {
            a[(i, i + 1)] = 0.5 + i as f64;
        }
        let (s, t) = (0.3, 1.7);
        let lhs = expm_nilpotent(&a, s).unwrap() * expm_nilpotent(&a, t).unwrap();
        let rhs = expm_nilpotent(&a, s + t).unwrap();
        assert!((lhs - rhs).norm() < 1e-12);
    }

    #[test]
    fn zoh_closed_forms() {
        let b = zoh_input_matrix(&Matrix::zeros(3, 3), &Matrix::identity(3, 3), 0.05).unwrap();
        assert_relative_eq!(b, Matrix::identity(3, 3) * 0.05, epsilon = 1e-16);

        let b = zoh_input_matrix(&integrator(), &Matrix::from_column_slice(2, 1, &[0.0, 1.0]), 0.05).unwrap();
        assert_relative_eq!(b[(0, 0)], 0.00125, epsilon = 1e-16);
        assert_relative_eq!(b[(1, 0)], 0.05, epsilon = 1e-16);
    }

    #[test]
    fn zoh_matches_quadrature() {
        // Composite Simpson on the integrand e^{As} B for a two-block model.
        let a = block_diag(&[integrator(), integrator()]);
        let mut b = Matrix::zeros(4, 2);
        b[(1, 0)] = 1.0;
        b[(3, 1)] = 1.0;
        let dt = 0.05;
        let n = 2000;
        let h = dt / n as f64;
        let mut acc = Matrix::zeros(4, 2);
        for i in 0..=n {
            let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            // e^{As} built directly from the 2x2 closed form.
            let s = i as f64 * h;
            let mut e = Matrix::identity(4, 4);
            e[(0, 1)] = s;
            e[(2, 3)] = s;
            acc += (e * &b) * w;
        }
        acc *= h / 3.0;
        let exact = zoh_input_matrix(&a, &b, dt).unwrap();
        assert!((acc - exact).norm() < 1e-12);
    }

    #[test]
    fn finite_differences() {
        let x = Vector::from_vec(vec![1.0, 2.0]);
        let g = finite_diff_gradient(|_| 3.0, &x, 1e-4).unwrap();
        assert_eq!(g, Vector::zeros(2));
        let g = finite_diff_gradient(|x| x.norm_squared(), &x, 1e-4).unwrap();
        assert_relative_eq!(g[0], 2.0, epsilon = 1e-7);
        assert_relative_eq!(g[1], 4.0, epsilon = 1e-7);
        assert!(finite_diff_gradient(|_| f64::NAN, &x, 1e-4).is_err());
    }
}
