//! Small dense linear-algebra helpers shared by the learners.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// A matrix is numerically rank-deficient when its smallest-to-largest
/// singular value ratio falls below this.
pub const RANK_TOL: f64 = 1e-10;

/// `‖P x‖ / ‖x‖` below this marks `x` as dependent on the stored span.
pub const DEPENDENCE_TOL: f64 = 1e-8;

/// Symmetry tolerance for covariance-like inputs.
pub const SYMMETRY_TOL: f64 = 1e-12;

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

pub fn symmetrized(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    symmetrize(&mut out);
    out
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    symmetrized(m)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn max_asymmetry(m: &Matrix) -> f64 {
    (m - m.transpose()).amax()
}

/// Checks symmetry within [`SYMMETRY_TOL`] (relative to the largest entry)
/// and a minimum eigenvalue above `floor`.
pub fn check_covariance(m: &Matrix, name: &str, floor: f64) -> Result<()> {
    if !m.is_square() {
        return Err(Error::InvalidModel(format!("{name} is not square")));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidModel(format!("{name} has non-finite entries")));
    }
    let scale = m.amax().max(1.0);
    if max_asymmetry(m) > SYMMETRY_TOL * scale {
        return Err(Error::InvalidModel(format!("{name} is not symmetric")));
    }
    let lo = min_eigenvalue(m);
    if lo < floor {
        return Err(Error::InvalidModel(format!("{name} has minimum eigenvalue {lo:e}")));
    }
    Ok(())
}

/// Cholesky-based inverse; `None` when `m` is not numerically positive definite.
pub fn spd_inverse(m: &Matrix) -> Option<Matrix> {
    let chol = symmetrized(m).cholesky()?;
    Some(chol.inverse())
}

/// `(smallest, largest)` singular values.
pub fn singular_extremes(m: &Matrix) -> (f64, f64) {
    if m.is_empty() {
        return (0.0, 0.0);
    }
    let sv = m.clone().singular_values();
    let hi = sv.iter().copied().fold(0.0, f64::max);
    let lo = sv.iter().copied().fold(f64::INFINITY, f64::min);
    (lo, hi)
}

/// Errors unless `x` (d×t) has full column rank `t ≤ d` within [`RANK_TOL`].
pub fn require_full_column_rank(x: &Matrix) -> Result<()> {
    let (d, t) = x.shape();
    if t > d {
        return Err(Error::invalid(format!("{t} constraints exceed dimension {d}")));
    }
    if t == 0 {
        return Ok(());
    }
    let (lo, hi) = singular_extremes(x);
    let ratio = if hi > 0.0 { lo / hi } else { 0.0 };
    if ratio < RANK_TOL {
        return Err(Error::RankDeficient { sigma_min: lo, ratio });
    }
    Ok(())
}

/// Euclidean projection of `theta` onto `{θ : Xᵀθ = y}` for full-column-rank
/// `x`: `θ − X(XᵀX)⁻¹(Xᵀθ − y)`, evaluated through a thin QR of `x`.
pub fn project_affine(theta: &Vector, x: &Matrix, y: &Vector) -> Result<Vector> {
    if x.ncols() == 0 {
        return Ok(theta.clone());
    }
    let residual = x.tr_mul(theta) - y;
    let qr = x.clone().qr();
    let q = qr.q();
    let r = qr.r();
    let z = r
        .transpose()
        .solve_lower_triangular(&residual)
        .ok_or(Error::RankDeficient {
            sigma_min: 0.0,
            ratio: 0.0,
        })?;
    Ok(theta - q * z)
}

/// Stacks vectors as the columns of a matrix.
pub fn columns(vs: &[Vector], d: usize) -> Matrix {
    let mut m = Matrix::zeros(d, vs.len());
    for (j, v) in vs.iter().enumerate() {
        m.set_column(j, v);
    }
    m
}

/// Largest absolute entry of `a − b`.
pub fn max_abs_diff(a: &Vector, b: &Vector) -> f64 {
    (a - b).amax()
}

/// Symmetric square root factor `L` with `L Lᵀ = m` for PSD `m`; negative
/// eigenvalues from rounding are clamped to zero.
pub fn psd_sqrt(m: &Matrix) -> Matrix {
    let eig = symmetrized(m).symmetric_eigen();
    let n = m.nrows();
    let mut scaled = eig.eigenvectors.clone();
    for j in 0..n {
        let s = eig.eigenvalues[j].max(0.0).sqrt();
        scaled.column_mut(j).scale_mut(s);
    }
    scaled
}

/// Central-difference step used for numerical derivatives: `1e-6·(1 + |θ_j|)`.
pub fn fd_step(v: f64) -> f64 {
    1e-6 * (1.0 + v.abs())
}

/// Central-difference gradient of a scalar function.
pub fn central_gradient<F: Fn(&Vector) -> f64>(f: F, at: &Vector) -> Vector {
    let mut probe = at.clone();
    Vector::from_fn(at.len(), |j, _| {
        let h = fd_step(at[j]);
        probe[j] = at[j] + h;
        let up = f(&probe);
        probe[j] = at[j] - h;
        let down = f(&probe);
        probe[j] = at[j];
        (up - down) / (2.0 * h)
    })
}

/// Central-difference Jacobian (`rows = output dimension`).
pub fn central_jacobian<F: Fn(&Vector) -> Vector>(f: F, at: &Vector) -> Matrix {
    let out = f(at).len();
    let mut jac = Matrix::zeros(out, at.len());
    let mut probe = at.clone();
    for j in 0..at.len() {
        let h = fd_step(at[j]);
        probe[j] = at[j] + h;
        let up = f(&probe);
        probe[j] = at[j] - h;
        let down = f(&probe);
        probe[j] = at[j];
        jac.set_column(j, &((up - down) / (2.0 * h)));
    }
    jac
}
