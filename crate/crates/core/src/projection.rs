//! LMS, APA, ICL, OGD and ORFit, and the orthogonal projector they share.
//!
//! All learners project the previous model onto (some of) the constraints
//! `y_i = x_iᵀθ`. They differ in which constraints they keep: LMS only the
//! current one, APA a ring buffer of recent ones, and ICL/ORFit every past
//! constraint through the projector `P_t` onto `Span(x_1, …, x_t)^⊥`.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector, DEPENDENCE_TOL};
use crate::metrics::ModelTrajectory;
use crate::stream::{ScalarTask, TaskStream};

/// Orthonormal basis `U` of the span of the ingested inputs; the projector
/// is `P = I − UUᵀ`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectorState {
    d: usize,
    basis: Vec<Vector>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ingest {
    Added,
    /// `‖Px‖/‖x‖` fell below [`DEPENDENCE_TOL`]; the basis is unchanged.
    Dependent,
}

impl ProjectorState {
    pub fn new(d: usize) -> Self {
        Self { d, basis: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn rank(&self) -> usize {
        self.basis.len()
    }

    pub fn is_saturated(&self) -> bool {
        self.rank() == self.d
    }

    pub fn basis(&self) -> Matrix {
        linalg::columns(&self.basis, self.d)
    }

    /// `P v = v − U(Uᵀv)`.
    pub fn apply(&self, v: &Vector) -> Vector {
        let mut out = v.clone();
        for u in &self.basis {
            let c = u.dot(v);
            out.axpy(-c, u, 1.0);
        }
        out
    }

    /// `P M`, column by column.
    pub fn apply_matrix(&self, m: &Matrix) -> Matrix {
        if self.basis.is_empty() {
            return m.clone();
        }
        let u = self.basis();
        m - &u * u.tr_mul(m)
    }

    pub fn matrix(&self) -> Matrix {
        let u = self.basis();
        Matrix::identity(self.d, self.d) - &u * u.transpose()
    }

    /// Relative norm `‖Px‖/‖x‖` (zero for the zero vector).
    pub fn residual_ratio(&self, x: &Vector) -> f64 {
        let n = x.norm();
        if n == 0.0 {
            return 0.0;
        }
        self.apply(x).norm() / n
    }

    /// Gram-Schmidt step with one re-orthogonalization pass.
    pub fn ingest(&mut self, x: &Vector) -> Ingest {
        assert_eq!(x.len(), self.d, "projector dimension mismatch");
        let n = x.norm();
        if n == 0.0 {
            return Ingest::Dependent;
        }
        let mut v = self.apply(x);
        if v.norm() / n < DEPENDENCE_TOL {
            return Ingest::Dependent;
        }
        v = self.apply(&v);
        let vn = v.norm();
        self.basis.push(v / vn);
        Ingest::Added
    }

    /// Replaces the basis; columns must be orthonormal.
    pub(crate) fn from_basis(d: usize, basis: Vec<Vector>) -> Self {
        Self { d, basis }
    }
}

/// Rank-one form of the projector update:
/// `P − P x xᵀ P / (xᵀ P x)`.
pub fn dense_projector_update(p: &Matrix, x: &Vector) -> Matrix {
    let px = p * x;
    let denom = x.dot(&px);
    p - (&px * px.transpose()) / denom
}

/// Per-task stepsizes for LMS.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepSchedule {
    Constant(f64),
    /// 1 on odd tasks and `even` on even tasks.
    Alternating {
        even: f64,
    },
}

impl StepSchedule {
    /// Stepsize of task `t` (1-based).
    pub fn at(&self, t: usize) -> f64 {
        match *self {
            StepSchedule::Constant(g) => g,
            StepSchedule::Alternating { even } => {
                if t.is_multiple_of(2) {
                    even
                } else {
                    1.0
                }
            }
        }
    }
}

/// Alternating schedule that reaches θ* at task 3 on two recurring unit
/// inputs with `c = (x₁ᵀx₂)²`.
pub fn alternating_stepsize_schedule(c: f64) -> Result<StepSchedule> {
    if !(c >= 0.0) {
        return Err(Error::invalid(format!("c = {c} must be a nonnegative squared cosine")));
    }
    if c >= 1.0 {
        return Err(Error::DegenerateTask(c));
    }
    if c == 0.0 {
        return Ok(StepSchedule::Constant(1.0));
    }
    Ok(StepSchedule::Alternating { even: 1.0 / (1.0 - c) })
}

/// A learner that consumes single-sample tasks in order.
pub trait Learner {
    fn theta(&self) -> &Vector;
    fn step(&mut self, task: &ScalarTask) -> Result<()>;
}

/// Applies `learner` to every task of `stream` and records the model after
/// each one.
pub fn run_learner<L: Learner + ?Sized>(learner: &mut L, stream: &TaskStream) -> Result<ModelTrajectory> {
    let tasks = stream.scalar_tasks()?;
    let mut traj = ModelTrajectory::new(learner.theta().clone());
    for (k, task) in tasks.iter().enumerate() {
        learner.step(task).map_err(|e| e.at_task(k + 1))?;
        traj.push(learner.theta().clone());
    }
    Ok(traj)
}

fn check_dim(theta: &Vector, task: &ScalarTask) -> Result<()> {
    if theta.len() != task.x.len() {
        return Err(Error::invalid(format!(
            "task dimension {} does not match model dimension {}",
            task.x.len(),
            theta.len()
        )));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct LmsState {
    pub theta: Vector,
    pub schedule: StepSchedule,
    pub t: usize,
}

impl LmsState {
    /// Constant stepsize with `1 − γ ∈ (−1, 1)`.
    pub fn new(d: usize, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 2.0) {
            return Err(Error::invalid(format!("LMS stepsize {gamma} outside (0, 2)")));
        }
        Ok(Self::with_schedule(Vector::zeros(d), StepSchedule::Constant(gamma)))
    }

    pub fn with_schedule(theta: Vector, schedule: StepSchedule) -> Self {
        Self { theta, schedule, t: 0 }
    }
}

/// `θ ← θ − γ (xᵀθ − y) x`.
pub fn lms_update(theta: &Vector, task: &ScalarTask, gamma: f64) -> Vector {
    let err = task.x.dot(theta) - task.y;
    theta - gamma * err * &task.x
}

impl Learner for LmsState {
    fn theta(&self) -> &Vector {
        &self.theta
    }

    fn step(&mut self, task: &ScalarTask) -> Result<()> {
        check_dim(&self.theta, task)?;
        let gamma = self.schedule.at(self.t + 1);
        self.theta = lms_update(&self.theta, task, gamma);
        self.t += 1;
        Ok(())
    }
}

/// How APA treats a constraint block without full column rank.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum RankPolicy {
    #[default]
    Reject,
    /// Drops buffered constraints that depend on newer ones.
    DropDependent,
}

/// Affine projection with a buffer of the `b` most recent tasks; `b = None`
/// keeps every task (APA†).
#[derive(Clone, Debug)]
pub struct ApaState {
    pub theta: Vector,
    buffer: VecDeque<ScalarTask>,
    capacity: Option<usize>,
    pub policy: RankPolicy,
}

impl ApaState {
    pub fn new(d: usize, buffer: usize) -> Self {
        Self {
            theta: Vector::zeros(d),
            buffer: VecDeque::new(),
            capacity: Some(buffer),
            policy: RankPolicy::Reject,
        }
    }

    /// Keeps all past tasks in the constraint set.
    pub fn unbounded(d: usize) -> Self {
        Self {
            capacity: None,
            ..Self::new(d, 0)
        }
    }

    pub fn with_policy(mut self, policy: RankPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn buffer(&self) -> impl Iterator<Item = &ScalarTask> {
        self.buffer.iter()
    }

    pub fn buffered(&self) -> usize {
        self.buffer.len()
    }

    /// Constraints (newest first) that survive the rank policy.
    fn constraint_block(&self, task: &ScalarTask) -> Result<(Matrix, Vector)> {
        let d = self.theta.len();
        let ordered: Vec<&ScalarTask> = std::iter::once(task).chain(self.buffer.iter().rev()).collect();
        let chosen: Vec<&ScalarTask> = match self.policy {
            RankPolicy::Reject => ordered,
            RankPolicy::DropDependent => {
                let mut kept = Vec::new();
                let mut span = ProjectorState::new(d);
                for t in ordered {
                    if span.ingest(&t.x) == Ingest::Added {
                        kept.push(t);
                    }
                }
                kept
            }
        };
        let xs: Vec<Vector> = chosen.iter().map(|t| t.x.clone()).collect();
        let x = linalg::columns(&xs, d);
        let y = Vector::from_iterator(chosen.len(), chosen.iter().map(|t| t.y));
        linalg::require_full_column_rank(&x)?;
        Ok((x, y))
    }
}

impl Learner for ApaState {
    fn theta(&self) -> &Vector {
        &self.theta
    }

    fn step(&mut self, task: &ScalarTask) -> Result<()> {
        check_dim(&self.theta, task)?;
        let (x, y) = self.constraint_block(task)?;
        self.theta = linalg::project_affine(&self.theta, &x, &y)?;
        if self.capacity != Some(0) {
            if Some(self.buffer.len()) == self.capacity {
                self.buffer.pop_front();
            }
            self.buffer.push_back(task.clone());
        }
        Ok(())
    }
}

/// Incremental ICL: minimizes the current loss subject to exact fits of all
/// earlier tasks.
#[derive(Clone, Debug)]
pub struct IclState {
    pub theta: Vector,
    pub proj: ProjectorState,
}

impl IclState {
    pub fn new(d: usize) -> Self {
        Self::with_initial(Vector::zeros(d))
    }

    pub fn with_initial(theta: Vector) -> Self {
        let d = theta.len();
        Self {
            theta,
            proj: ProjectorState::new(d),
        }
    }
}

fn dependent_error(residual: f64, scale: f64) -> Error {
    if residual.abs() <= DEPENDENCE_TOL * scale.max(1.0) {
        Error::DependentTask { residual }
    } else {
        Error::Infeasible { residual }
    }
}

impl Learner for IclState {
    fn theta(&self) -> &Vector {
        &self.theta
    }

    fn step(&mut self, task: &ScalarTask) -> Result<()> {
        check_dim(&self.theta, task)?;
        let xbar = self.proj.apply(&task.x);
        let xn = task.x.norm();
        let err = task.x.dot(&self.theta) - task.y;
        if xn == 0.0 || xbar.norm() / xn < DEPENDENCE_TOL {
            return Err(dependent_error(-err, task.y.abs()));
        }
        self.theta.axpy(-err / xbar.norm_squared(), &xbar, 1.0);
        self.proj.ingest(&task.x);
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OgdStep {
    Fixed(f64),
    /// `γ_t = 1 / (xᵀ P x)`.
    Orfit,
}

/// Orthogonal gradient descent on the squared loss `(xᵀθ − y)²/2`.
#[derive(Clone, Debug)]
pub struct OgdState {
    pub theta: Vector,
    pub proj: ProjectorState,
    pub stepsize: OgdStep,
}

impl OgdState {
    pub fn new(d: usize, stepsize: OgdStep) -> Self {
        Self {
            theta: Vector::zeros(d),
            proj: ProjectorState::new(d),
            stepsize,
        }
    }

    pub fn orfit(d: usize) -> Self {
        Self::new(d, OgdStep::Orfit)
    }
}

impl Learner for OgdState {
    fn theta(&self) -> &Vector {
        &self.theta
    }

    fn step(&mut self, task: &ScalarTask) -> Result<()> {
        check_dim(&self.theta, task)?;
        let px = self.proj.apply(&task.x);
        let err = task.x.dot(&self.theta) - task.y;
        let gamma = match self.stepsize {
            OgdStep::Fixed(g) => g,
            OgdStep::Orfit => {
                let xn = task.x.norm();
                if xn == 0.0 || px.norm() / xn < DEPENDENCE_TOL {
                    return Err(dependent_error(-err, task.y.abs()));
                }
                // xᵀPx = ‖Px‖², without the cancellation in x·Px
                1.0 / px.norm_squared()
            }
        };
        self.theta.axpy(-gamma * err, &px, 1.0);
        self.proj.ingest(&task.x);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const H: f64 = std::f64::consts::FRAC_1_SQRT_2;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    fn two_tasks() -> [ScalarTask; 2] {
        [
            ScalarTask::from_slice(&[1.0, 0.0], 1.0),
            ScalarTask::from_slice(&[H, H], 2f64.sqrt()),
        ]
    }

    #[test]
    fn lms_examples() {
        let e1 = ScalarTask::from_slice(&[1.0, 0.0], 0.0);
        assert_eq!(lms_update(&Vector::zeros(2), &e1, 1.0), Vector::zeros(2));
        let e1 = ScalarTask::from_slice(&[1.0, 0.0], 1.0);
        assert_eq!(lms_update(&Vector::zeros(2), &e1, 1.0), v(&[1.0, 0.0]));
        let diag = ScalarTask::from_slice(&[H, H], 0.0);
        assert!(lms_update(&v(&[1.0, 1.0]), &diag, 1.0).amax() < 1e-15);
    }

    #[test]
    fn lms_closed_form_meets_relaxed_constraint() {
        let task = ScalarTask::from_slice(&[0.6, 0.8], 3.0);
        let prev = v(&[0.5, -1.0]);
        for gamma in [0.3, 1.0, 1.7] {
            let eps = task.y - task.x.dot(&prev);
            let next = lms_update(&prev, &task, gamma);
            let post = task.y - task.x.dot(&next);
            assert!((post - (1.0 - gamma) * eps).abs() < 1e-12);
        }
    }

    #[test]
    fn lms_rejects_unstable_stepsize() {
        assert!(LmsState::new(2, 0.0).is_err());
        assert!(LmsState::new(2, 2.0).is_err());
        assert!(LmsState::new(2, 1.0).is_ok());
    }

    #[test]
    fn alternating_schedule_examples() {
        assert_eq!(alternating_stepsize_schedule(0.0).unwrap(), StepSchedule::Constant(1.0));
        let s = alternating_stepsize_schedule(0.5).unwrap();
        assert_eq!((1..=4).map(|t| s.at(t)).collect::<Vec<_>>(), vec![1.0, 2.0, 1.0, 2.0]);
        let s = alternating_stepsize_schedule(0.99).unwrap();
        assert!((s.at(2) - 100.0).abs() < 1e-9);
        assert!(matches!(
            alternating_stepsize_schedule(1.0),
            Err(Error::DegenerateTask(_))
        ));
        assert!(alternating_stepsize_schedule(-0.1).is_err());
    }

    #[test]
    fn projector_examples() {
        let mut p = ProjectorState::new(3);
        assert_eq!(p.ingest(&v(&[1.0, 0.0, 0.0])), Ingest::Added);
        assert!((p.matrix() - Matrix::from_diagonal(&v(&[0.0, 1.0, 1.0]))).amax() < 1e-15);

        let mut p = ProjectorState::new(2);
        p.ingest(&v(&[1.0, 0.0]));
        let before = p.clone();
        assert_eq!(p.ingest(&v(&[1.0, 0.0])), Ingest::Dependent);
        assert_eq!(p, before);
        assert_eq!(p.ingest(&v(&[H, H])), Ingest::Added);
        assert!(p.matrix().amax() < 1e-15);
        assert!(p.is_saturated());
        assert_eq!(p.ingest(&Vector::zeros(2)), Ingest::Dependent);
    }

    #[test]
    fn dense_update_matches_basis_form() {
        let mut p = ProjectorState::new(3);
        let mut dense = Matrix::identity(3, 3);
        for x in [v(&[1.0, 2.0, 0.5]), v(&[-0.3, 1.0, 1.0])] {
            dense = dense_projector_update(&dense, &x);
            p.ingest(&x);
            assert!((p.matrix() - &dense).amax() < 1e-9);
        }
    }

    #[test]
    fn apa_without_buffer_is_unit_step_lms() {
        let mut apa = ApaState::new(2, 0);
        let mut lms = LmsState::new(2, 1.0).unwrap();
        for task in [
            ScalarTask::from_slice(&[0.6, 0.8], 1.0),
            ScalarTask::from_slice(&[1.0, 0.0], -2.0),
            ScalarTask::from_slice(&[0.6, 0.8], 0.5),
        ] {
            apa.step(&task).unwrap();
            lms.step(&task).unwrap();
            assert!((apa.theta() - lms.theta()).amax() < 1e-12);
            assert_eq!(apa.buffered(), 0);
        }
    }

    #[test]
    fn apa_feasible_point_is_fixed() {
        let mut apa = ApaState::new(2, 1);
        let [a, b] = two_tasks();
        apa.step(&a).unwrap();
        apa.step(&b).unwrap();
        let theta = apa.theta().clone();
        apa.step(&a).unwrap();
        assert!((apa.theta() - theta).amax() < 1e-12);
    }

    #[test]
    fn apa_two_constraints() {
        let mut apa = ApaState::new(2, 1);
        let [a, b] = two_tasks();
        apa.step(&a).unwrap();
        apa.step(&b).unwrap();
        assert!((apa.theta() - v(&[1.0, 1.0])).amax() < 1e-12);
        assert_eq!(apa.buffered(), 1);
        assert_eq!(apa.buffer().next().unwrap(), &b);
    }

    #[test]
    fn apa_rank_policy() {
        let a = ScalarTask::from_slice(&[1.0, 0.0, 0.0], 1.0);
        let a2 = ScalarTask::from_slice(&[1.0, 0.0, 0.0], 1.0);
        let mut apa = ApaState::new(3, 2);
        apa.step(&a).unwrap();
        assert!(matches!(apa.step(&a2), Err(Error::RankDeficient { .. })));

        let mut apa = ApaState::new(3, 2).with_policy(RankPolicy::DropDependent);
        apa.step(&a).unwrap();
        apa.step(&a2).unwrap();
        let c = ScalarTask::from_slice(&[0.0, 1.0, 0.0], 2.0);
        apa.step(&c).unwrap();
        assert!((apa.theta() - v(&[1.0, 2.0, 0.0])).amax() < 1e-12);
    }

    #[test]
    fn icl_examples() {
        let mut icl = IclState::new(2);
        let [a, b] = two_tasks();
        icl.step(&a).unwrap();
        assert!((icl.theta() - v(&[1.0, 0.0])).amax() < 1e-15);
        icl.step(&b).unwrap();
        assert!((icl.theta() - v(&[1.0, 1.0])).amax() < 1e-12);

        let mut icl = IclState::new(2);
        icl.step(&a).unwrap();
        match icl.step(&a) {
            Err(Error::DependentTask { residual }) => assert_eq!(residual, 0.0),
            other => panic!("unexpected {other:?}"),
        }
        let conflicting = ScalarTask::from_slice(&[1.0, 0.0], 3.0);
        match icl.step(&conflicting) {
            Err(Error::Infeasible { residual }) => assert_eq!(residual, 2.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ogd_examples() {
        let tasks = [
            ScalarTask::from_slice(&[1.0, 0.0, 0.0], 1.0),
            ScalarTask::from_slice(&[0.6, 0.8, 0.0], -1.0),
            ScalarTask::from_slice(&[0.0, 0.6, 0.8], 2.0),
        ];
        let mut orfit = OgdState::orfit(3);
        let mut icl = IclState::new(3);
        let mut frozen = OgdState::new(3, OgdStep::Fixed(0.0));
        let mut plain = OgdState::new(3, OgdStep::Fixed(0.7));
        for (t, task) in tasks.iter().enumerate() {
            let before = plain.theta.clone();
            orfit.step(task).unwrap();
            icl.step(task).unwrap();
            frozen.step(task).unwrap();
            plain.step(task).unwrap();
            assert!((orfit.theta() - icl.theta()).amax() < 1e-12);
            assert_eq!(frozen.theta(), &Vector::zeros(3));
            for past in &tasks[..t] {
                assert!((past.x.dot(&plain.theta) - past.x.dot(&before)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn run_learner_records_every_model() {
        let empty = TaskStream::explicit(vec![]).unwrap();
        let mut lms = LmsState::new(0, 1.0).unwrap();
        assert_eq!(run_learner(&mut lms, &empty).unwrap().thetas.len(), 1);

        let [a, _] = two_tasks();
        let stream = TaskStream::explicit(vec![a.clone(), a]).unwrap();
        let mut icl = IclState::new(2);
        let err = run_learner(&mut icl, &stream).unwrap_err();
        assert!(matches!(err, Error::AtTask { index: 2, .. }));
        assert!(matches!(err.root(), Error::DependentTask { .. }));
    }
}
