//! Exponentially weighted recursive least squares.
//!
//! RLS-(β, λ) minimizes `λ‖θ‖² + Σ_i (y_i − x_iᵀθ)² / β^i`. The recursion
//! carries the inverse Hessian `Φ_t = (λI + Σ_i x_i x_iᵀ / β^i)⁻¹` and updates
//! it with a rank-one Woodbury step per task. β < 1 forgets old tasks, β > 1
//! emphasizes them, and β = 0 turns every task into a hard constraint.

mod drls;
mod layerwise;

pub use drls::{drls_batch_solve, DrlsState};
pub use layerwise::{layerwise_rls_train, LayerStep, LayerwiseRls};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector, DEPENDENCE_TOL};
use crate::projection::{IclState, Learner};
use crate::stream::ScalarTask;

const RENORM_LO: f64 = 1e-100;
const RENORM_HI: f64 = 1e100;

/// `(Φ + X B⁻¹ Xᵀ)⁻¹` evaluated as `Φ⁻¹ − Φ⁻¹X(B + XᵀΦ⁻¹X)⁻¹XᵀΦ⁻¹`.
pub fn woodbury(phi: &Matrix, x: &Matrix, b: &Matrix) -> Result<Matrix> {
    let n = phi.nrows();
    if !phi.is_square() || !b.is_square() || x.nrows() != n || x.ncols() != b.nrows() {
        return Err(Error::invalid("woodbury: incompatible shapes"));
    }
    let phi_inv = linalg::spd_inverse(phi).ok_or_else(|| Error::invalid("woodbury: Φ is not positive definite"))?;
    if linalg::spd_inverse(b).is_none() {
        return Err(Error::invalid("woodbury: B is not positive definite"));
    }
    let px = &phi_inv * x;
    let inner = b + x.tr_mul(&px);
    let inner_inv = linalg::spd_inverse(&inner).ok_or_else(|| Error::invalid("woodbury: B + XᵀΦ⁻¹X is singular"))?;
    Ok(&phi_inv - &px * inner_inv * px.transpose())
}

/// Inverse Hessian of the weighted ridge objective, shared by RLS, D-RLS and
/// layer-wise RLS.
///
/// The matrix is stored as a square-root factor `S` with `sΦ = SSᵀ`, updated
/// in Potter's form, which keeps `Φ` positive semidefinite and roughly halves
/// the digits lost to ill-conditioning. The common factor `s` is kept as
/// `ln s`; scaling the whole objective by `1/s` leaves its minimizer
/// unchanged, so `s` is chosen to keep `S` near unit scale and `β^t` is only
/// ever formed relative to it.
#[derive(Clone, Debug)]
pub struct InverseHessian {
    factor: Matrix,
    log_scale: f64,
    beta: f64,
    lambda: f64,
    t: usize,
}

/// Quantities of one rank-one update, needed by the model update.
#[derive(Clone, Debug)]
pub struct RankOne {
    /// `Φ_{t−1} x` (scaled).
    pub phi_x: Vector,
    /// `β^t + xᵀΦ_{t−1}x` (scaled).
    pub denom: f64,
}

impl InverseHessian {
    pub fn new(d: usize, beta: f64, lambda: f64) -> Result<Self> {
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(Error::invalid(format!("β = {beta} must be finite and nonnegative")));
        }
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::invalid(format!("λ = {lambda} must be positive")));
        }
        Ok(Self {
            factor: Matrix::identity(d, d) / lambda.sqrt(),
            log_scale: 0.0,
            beta,
            lambda,
            t: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.factor.nrows()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn tasks(&self) -> usize {
        self.t
    }

    fn scaled(&self) -> Matrix {
        &self.factor * self.factor.transpose()
    }

    /// `Φ_t` in the original scale.
    pub fn phi(&self) -> Matrix {
        if self.t == 0 {
            // exact, where (1/√λ)² may be off by an ulp
            let d = self.dim();
            return Matrix::identity(d, d) / self.lambda;
        }
        if self.log_scale == 0.0 {
            self.scaled()
        } else {
            self.scaled() * (-self.log_scale).exp()
        }
    }

    /// `Φ_t M` in the original scale.
    pub fn apply(&self, m: &Matrix) -> Matrix {
        let out = &self.factor * self.factor.tr_mul(m);
        if self.log_scale == 0.0 {
            out
        } else {
            out * (-self.log_scale).exp()
        }
    }

    /// 2-norm condition number of `Φ_t`.
    pub fn condition_number(&self) -> f64 {
        let (lo, hi) = linalg::singular_extremes(&self.factor);
        (hi / lo).powi(2)
    }

    /// Scaled weight `s β^{t+1}` of the next task. It may be 0 or +∞ when
    /// the true ratio to `Φ` lies outside the double range; both are the
    /// exact limits of the update.
    fn next_weight(&self) -> f64 {
        if self.beta == 0.0 {
            return 0.0;
        }
        ((self.t + 1) as f64 * self.beta.ln() + self.log_scale).exp()
    }

    /// Rescales the factor so the largest diagonal entry of `SSᵀ` is 1 once
    /// it drifts outside `[1e-100, 1e100]`.
    /// With β = 0 the scale is irrelevant and `Φ` may reach 0 exactly.
    fn renormalize(&mut self) -> Result<()> {
        if self.beta == 0.0 {
            return Ok(());
        }
        let m = self.factor.row_iter().map(|r| r.norm_squared()).fold(0.0, f64::max);
        if !(m > 0.0) || !m.is_finite() {
            return Err(Error::NumericRange(format!(
                "inverse Hessian collapsed (largest diagonal {m:e}) at task {}",
                self.t
            )));
        }
        if !(RENORM_LO..=RENORM_HI).contains(&m) {
            self.factor /= m.sqrt();
            self.log_scale -= m.ln();
        }
        Ok(())
    }

    /// `xᵀΦx / ‖x‖²·λ`, the squared relative residual `‖Px‖²/‖x‖²` when β = 0.
    pub fn residual_ratio_sq(&self, x: &Vector) -> f64 {
        let n2 = x.norm_squared();
        if n2 == 0.0 {
            return 0.0;
        }
        self.factor.tr_mul(x).norm_squared() * self.lambda * (-self.log_scale).exp() / n2
    }

    /// With β = 0 an input in the span of the earlier ones gives a zero
    /// denominator.
    pub fn is_dependent(&self, x: &Vector) -> bool {
        self.beta == 0.0 && self.residual_ratio_sq(x) < DEPENDENCE_TOL * DEPENDENCE_TOL
    }

    /// Rank-one Woodbury update
    /// `Φ_t = Φ_{t−1} − Φ_{t−1}x xᵀΦ_{t−1} / (β^t + xᵀΦ_{t−1}x)`.
    ///
    /// With `u = Sᵀx` and `n = ‖u‖²` the factor becomes `S(I + α u uᵀ)` where
    /// `α = −1 / ((w + n)(1 + √(w / (w + n))))`, so that
    /// `(I + α u uᵀ)² = I − u uᵀ / (w + n)`.
    ///
    /// Callers must check [`Self::is_dependent`] first when β = 0.
    pub fn update(&mut self, x: &Vector) -> Result<RankOne> {
        let w = self.next_weight();
        let u = self.factor.tr_mul(x);
        let phi_x = &self.factor * &u;
        let n = u.norm_squared();
        let denom = w + n;
        if !(denom > 0.0) {
            return Err(Error::NumericRange(format!(
                "RLS denominator {denom:e} at task {}",
                self.t + 1
            )));
        }
        self.t += 1;
        if denom.is_finite() {
            let alpha = -1.0 / (denom * (1.0 + (w / denom).sqrt()));
            self.factor.ger(alpha, &phi_x, &u, 1.0);
            self.renormalize()?;
        }
        Ok(RankOne { phi_x, denom })
    }

    /// Counts a task without touching `Φ` (used when a dependent input is
    /// skipped at β = 0).
    pub fn skip(&mut self) {
        self.t += 1;
    }
}

#[derive(Clone, Debug)]
pub struct RlsState {
    pub theta: Vector,
    pub hessian: InverseHessian,
}

impl RlsState {
    /// `θ⁰ = 0`, `Φ₀ = I/λ`.
    pub fn new(d: usize, beta: f64, lambda: f64) -> Result<Self> {
        Ok(Self {
            theta: Vector::zeros(d),
            hessian: InverseHessian::new(d, beta, lambda)?,
        })
    }

    pub fn phi(&self) -> Matrix {
        self.hessian.phi()
    }

    pub fn tasks(&self) -> usize {
        self.hessian.tasks()
    }
}

impl Learner for RlsState {
    fn theta(&self) -> &Vector {
        &self.theta
    }

    fn step(&mut self, task: &ScalarTask) -> Result<()> {
        if task.x.len() != self.theta.len() {
            return Err(Error::invalid("task dimension does not match the model"));
        }
        let err = task.x.dot(&self.theta) - task.y;
        if self.hessian.is_dependent(&task.x) {
            return Err(if err.abs() <= DEPENDENCE_TOL * task.y.abs().max(1.0) {
                Error::DependentTask { residual: -err }
            } else {
                Error::Infeasible { residual: -err }
            });
        }
        let r = self.hessian.update(&task.x)?;
        self.theta.axpy(-err / r.denom, &r.phi_x, 1.0);
        Ok(())
    }
}

/// Direct minimizer of `λ‖θ‖² + Σ_i (y_i − x_iᵀθ)² / β^i` over `tasks`.
///
/// Solved as the stacked least-squares problem `[W^{1/2}Xᵀ; √λ I] θ ≈ [W^{1/2}y; 0]`
/// by QR, which avoids squaring the condition number.
pub fn batch_rls_solve(tasks: &[ScalarTask], d: usize, beta: f64, lambda: f64) -> Result<Vector> {
    if !(beta > 0.0) || !(lambda > 0.0) {
        return Err(Error::invalid("batch RLS needs β > 0 and λ > 0"));
    }
    let n = tasks.len();
    // log-weights −i ln β, shifted so the largest weight (or λ) is 1
    let log_w: Vec<f64> = (1..=n).map(|i| -(i as f64) * beta.ln()).collect();
    let shift = log_w.iter().copied().fold(lambda.ln(), f64::max);
    let mut a = Matrix::zeros(n + d, d);
    let mut b = Vector::zeros(n + d);
    for (k, task) in tasks.iter().enumerate() {
        if task.x.len() != d {
            return Err(Error::invalid("task dimension mismatch"));
        }
        let s = (0.5 * (log_w[k] - shift)).exp();
        for j in 0..d {
            a[(k, j)] = s * task.x[j];
        }
        b[k] = s * task.y;
    }
    let sl = (0.5 * (lambda.ln() - shift)).exp();
    for j in 0..d {
        a[(n + j, j)] = sl;
    }
    let qr = a.qr();
    let rhs = qr.q().tr_mul(&b);
    qr.r()
        .solve_upper_triangular(&rhs)
        .ok_or_else(|| Error::NumericRange("batch RLS system is singular".into()))
}

/// Outcome of running RLS with β = 0 beside ICL.
#[derive(Clone, Debug)]
pub struct LimitReport {
    /// `max_i |θ_ICL − θ_RLS|` after each task (index 0 is the initial model).
    pub theta_diff: Vec<f64>,
    /// `‖P_t − λΦ_t‖_F` for `t = 0..T`.
    pub projector_diff: Vec<f64>,
    pub first_violation: Option<usize>,
}

impl LimitReport {
    pub fn pass(&self) -> bool {
        self.first_violation.is_none()
    }

    pub fn max_theta_diff(&self) -> f64 {
        self.theta_diff.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_projector_diff(&self) -> f64 {
        self.projector_diff.iter().copied().fold(0.0, f64::max)
    }
}

pub const LIMIT_THETA_TOL: f64 = 1e-8;
pub const LIMIT_PROJECTOR_TOL: f64 = 1e-7;

/// Runs RLS with β = 0 and ICL side by side and compares `θ` and `P_t`
/// against `λΦ_t` after every task.
pub fn rls_icl_limit_check(tasks: &[ScalarTask], d: usize, lambda: f64) -> Result<LimitReport> {
    let mut rls = RlsState::new(d, 0.0, lambda)?;
    let mut icl = IclState::new(d);
    let mut report = LimitReport {
        theta_diff: Vec::with_capacity(tasks.len() + 1),
        projector_diff: Vec::with_capacity(tasks.len() + 1),
        first_violation: None,
    };
    for t in 0..=tasks.len() {
        if t > 0 {
            let task = &tasks[t - 1];
            rls.step(task).map_err(|e| e.at_task(t))?;
            icl.step(task).map_err(|e| e.at_task(t))?;
        }
        let dt = linalg::max_abs_diff(&rls.theta, &icl.theta);
        let dp = (icl.proj.matrix() - rls.phi() * lambda).norm();
        report.theta_diff.push(dt);
        report.projector_diff.push(dp);
        if report.first_violation.is_none() && (dt > LIMIT_THETA_TOL || dp > LIMIT_PROJECTOR_TOL) {
            report.first_violation = Some(t);
        }
    }
    Ok(report)
}
