//! Shared numerical kernels: rotation constructors, pseudo-inverse with a
//! relative tolerance, Lyapunov and continuous-time algebraic Riccati solvers,
//! and spectral utilities.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::{Error, Result};

/// Rotation about the x-axis.
pub fn rot_x(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

/// Rotation about the y-axis.
pub fn rot_y(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

/// Rotation about the z-axis.
pub fn rot_z(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Skew-symmetric cross-product matrix: `skew(a) * b == a × b`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Minimum-norm Moore–Penrose pseudo-inverse with singular values below
/// `rel_tol * σ_max` treated as zero.
pub fn pinv(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = if smax > 0.0 { rel_tol * smax } else { rel_tol };
    svd.pseudo_inverse(eps)
        .expect("SVD vectors were requested")
}

/// Rank of a matrix with singular values below `rel_tol * σ_max` treated as
/// zero.
pub fn rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let svd = m.clone().svd(false, false);
    let smax = svd.singular_values.max();
    if smax <= 0.0 {
        return 0;
    }
    svd.singular_values.iter().filter(|&&s| s > rel_tol * smax).count()
}

/// 2-norm condition number.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let svd = m.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smin <= 0.0 {
        f64::INFINITY
    } else {
        smax / smin
    }
}

/// Largest real part over the eigenvalues of `m`.
pub fn spectral_abscissa(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|l| l.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// True when every eigenvalue of `m` has a strictly negative real part.
pub fn is_hurwitz(m: &DMatrix<f64>) -> bool {
    spectral_abscissa(m) < 0.0
}

/// Solves the continuous Lyapunov equation `Aᵀ P + P A = −Q` for symmetric
/// `P` via the Kronecker-product linear system.
///
/// # Errors
/// [`Error::NotStabilizable`] when the linear system is singular (eigenvalue
/// pair of `A` summing to zero).
pub fn lyapunov_solve(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    assert_eq!(a.ncols(), n, "A must be square");
    assert_eq!(q.shape(), (n, n), "Q must match A");
    // vec(Aᵀ P) = (I ⊗ Aᵀ) vec(P);  vec(P A) = (Aᵀ ⊗ I) vec(P)
    let at = a.transpose();
    let eye = DMatrix::<f64>::identity(n, n);
    let kron = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = DVector::from_iterator(n * n, q.iter().map(|x| -x));
    let sol = kron
        .lu()
        .solve(&rhs)
        .ok_or(Error::NotStabilizable { iterations: 0, residual: f64::INFINITY })?;
    let p = DMatrix::from_iterator(n, n, sol.iter().copied());
    // Symmetrize: the exact solution is symmetric for symmetric Q.
    Ok((&p + p.transpose()) * 0.5)
}

/// Frobenius norm of the Riccati residual
/// `Aᵀ P + P A − P B R⁻¹ Bᵀ P + Q`.
pub fn care_residual(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r_inv: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> f64 {
    let res = a.transpose() * p + p * a - p * b * r_inv * b.transpose() * p + q;
    res.norm()
}

/// Solves the continuous algebraic Riccati equation
/// `Aᵀ P + P A − P B R⁻¹ Bᵀ P + Q = 0` for the stabilizing `P ⪰ 0` and
/// returns `(P, K)` with `K = R⁻¹ Bᵀ P`, so `u = −K x` is the optimal law and
/// `A − B K` is Hurwitz.
///
/// The stable invariant subspace of the Hamiltonian is extracted with the
/// matrix sign function (globally convergent, no initial guess), then the
/// solution is polished with Newton–Kleinman iterations toward residual
/// `1e-10`, stopping at the floating-point floor when the weights are large.
///
/// # Errors
/// [`Error::NotStabilizable`] when the sign iteration fails to converge
/// within 200 iterations, the polished residual exceeds `1e-8·max(1, ‖Q‖)`,
/// or the closed loop is not Hurwitz — in practice this means `(A, B)` is
/// not stabilizable or `(A, Q)` not detectable for the supplied weights.
pub fn care_solve(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    assert_eq!(a.ncols(), n, "A must be square");
    assert_eq!(b.nrows(), n, "B row count must match A");
    assert_eq!(q.shape(), (n, n), "Q must match A");
    assert_eq!(r.shape(), (b.ncols(), b.ncols()), "R must match B columns");

    let r_inv = r
        .clone()
        .try_inverse()
        .ok_or(Error::NotStabilizable { iterations: 0, residual: f64::INFINITY })?;

    // Hamiltonian H = [[A, −B R⁻¹ Bᵀ], [−Q, −Aᵀ]].
    let g = b * &r_inv * b.transpose();
    let mut h = DMatrix::<f64>::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(a);
    h.view_mut((0, n), (n, n)).copy_from(&(-&g));
    h.view_mut((n, 0), (n, n)).copy_from(&(-q));
    h.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));

    // Matrix sign iteration with determinant scaling.
    let mut z = h;
    let max_sign_iters = 200;
    let mut converged = false;
    for _ in 0..max_sign_iters {
        let lu = z.clone().lu();
        let det: f64 = lu.determinant();
        let z_inv = lu
            .try_inverse()
            .ok_or(Error::NotStabilizable { iterations: 0, residual: f64::INFINITY })?;
        let c = det.abs().powf(1.0 / (2.0 * n as f64)).max(1e-300);
        let z_next = (&z / c + z_inv * c) * 0.5;
        let delta = (&z_next - &z).norm();
        let scale = z_next.norm().max(1.0);
        z = z_next;
        if delta <= 1e-13 * scale {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NotStabilizable { iterations: max_sign_iters, residual: f64::INFINITY });
    }

    // Stable subspace: range of (I − sign(H))/2, basis via column-pivoted QR.
    let proj = (DMatrix::<f64>::identity(2 * n, 2 * n) - &z) * 0.5;
    let qr = proj.col_piv_qr();
    let basis = qr.q().columns(0, n).into_owned();
    let u1 = basis.view((0, 0), (n, n)).into_owned();
    let u2 = basis.view((n, 0), (n, n)).into_owned();
    let u1_inv = u1
        .lu()
        .try_inverse()
        .ok_or(Error::NotStabilizable { iterations: 0, residual: f64::INFINITY })?;
    let p0 = u2 * u1_inv;
    let mut p = (&p0 + p0.transpose()) * 0.5;

    // Newton–Kleinman polish: with K_k stabilizing, solve the Lyapunov
    // equation (A − B K_k)ᵀ P + P (A − B K_k) = −(Q + K_kᵀ R K_k). Iterations
    // stop early once the residual hits its floating-point floor (no factor-2
    // improvement), keeping the best iterate; the acceptance gate scales with
    // the weight magnitude, since the attainable absolute residual grows with
    // ‖Q‖.
    let tol = 1e-10;
    let max_newton = 200;
    let mut residual = care_residual(a, b, q, &r_inv, &p);
    for _ in 0..max_newton {
        if residual < tol {
            break;
        }
        let k = &r_inv * b.transpose() * &p;
        let a_cl = a - b * &k;
        let rhs = q + k.transpose() * r * &k;
        let p_next = lyapunov_solve(&a_cl, &rhs)?;
        let next = care_residual(a, b, q, &r_inv, &p_next);
        if next < residual {
            p = p_next;
            residual = next;
        }
        if next >= residual * 0.5 {
            break;
        }
    }
    let scale = q.norm().max(1.0);
    if residual.is_nan() || residual >= 1e-8 * scale {
        return Err(Error::NotStabilizable { iterations: max_newton, residual });
    }

    let k = &r_inv * b.transpose() * &p;
    if !is_hurwitz(&(a - b * &k)) {
        return Err(Error::NotStabilizable { iterations: max_newton, residual });
    }
    Ok((p, k))
}
