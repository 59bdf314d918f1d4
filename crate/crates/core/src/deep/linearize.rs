//! First-order linearization of nonlinear predictors and ICL on the
//! linearized constraints.

use crate::error::Result;
use crate::linalg::{self, Vector};
use crate::metrics::ModelTrajectory;
use crate::projection::{IclState, Learner};
use crate::stream::ScalarTask;

/// Scalar prediction `f(θ)` for one task.
pub trait Predictor {
    fn value(&self, theta: &Vector) -> f64;

    /// `∇f(θ)`; central finite differences unless overridden.
    fn gradient(&self, theta: &Vector) -> Vector {
        linalg::central_gradient(|t| self.value(t), theta)
    }
}

type ValueFn = Box<dyn Fn(&Vector) -> f64>;
type GradFn = Box<dyn Fn(&Vector) -> Vector>;

/// Predictor built from closures, with an optional analytic gradient.
pub struct FnPredictor {
    f: ValueFn,
    grad: Option<GradFn>,
}

impl FnPredictor {
    pub fn new(f: impl Fn(&Vector) -> f64 + 'static) -> Self {
        Self {
            f: Box::new(f),
            grad: None,
        }
    }

    pub fn with_gradient(mut self, grad: impl Fn(&Vector) -> Vector + 'static) -> Self {
        self.grad = Some(Box::new(grad));
        self
    }

    /// `f(θ) = xᵀθ`.
    pub fn linear(x: Vector) -> Self {
        let g = x.clone();
        Self::new(move |t| x.dot(t)).with_gradient(move |_| g.clone())
    }
}

impl Predictor for FnPredictor {
    fn value(&self, theta: &Vector) -> f64 {
        (self.f)(theta)
    }

    fn gradient(&self, theta: &Vector) -> Vector {
        match &self.grad {
            Some(g) => g(theta),
            None => linalg::central_gradient(|t| self.value(t), theta),
        }
    }
}

/// `f̃(θ) = f(a) + ∇f(a)ᵀ(θ − a)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffinePredictor {
    pub anchor: Vector,
    pub value_at_anchor: f64,
    pub slope: Vector,
}

impl AffinePredictor {
    /// The induced linear task `slopeᵀθ = y − f(a) + slopeᵀa`.
    pub fn task(&self, y: f64) -> ScalarTask {
        ScalarTask::new(
            self.slope.clone(),
            y - self.value_at_anchor + self.slope.dot(&self.anchor),
        )
    }
}

impl Predictor for AffinePredictor {
    fn value(&self, theta: &Vector) -> f64 {
        self.value_at_anchor + self.slope.dot(&(theta - &self.anchor))
    }

    fn gradient(&self, _theta: &Vector) -> Vector {
        self.slope.clone()
    }
}

pub fn linearize_model(f: &dyn Predictor, anchor: &Vector) -> AffinePredictor {
    AffinePredictor {
        anchor: anchor.clone(),
        value_at_anchor: f.value(anchor),
        slope: f.gradient(anchor),
    }
}

/// Nonlinear task `y = f(θ)`.
pub struct NonlinearTask {
    pub f: Box<dyn Predictor>,
    pub y: f64,
}

#[derive(Clone, Debug)]
pub struct LinearizedRun {
    pub trajectory: ModelTrajectory,
    /// `f̃_i`, linearized at `θ^{i−1}`.
    pub linearized: Vec<AffinePredictor>,
}

impl LinearizedRun {
    /// Largest `|y_i − f̃_i(θ^T)|` over all tasks.
    pub fn max_constraint_violation(&self, tasks: &[NonlinearTask]) -> f64 {
        let last = self.trajectory.last();
        self.linearized
            .iter()
            .zip(tasks)
            .map(|(l, t)| (t.y - l.value(last)).abs())
            .fold(0.0, f64::max)
    }
}

/// Linearizes each task at the current model and applies an ICL step to the
/// induced linear task.
pub fn linearized_icl_run(tasks: &[NonlinearTask], theta0: &Vector) -> Result<LinearizedRun> {
    let mut icl = IclState::with_initial(theta0.clone());
    let mut trajectory = ModelTrajectory::new(theta0.clone());
    let mut linearized = Vec::with_capacity(tasks.len());
    for (k, task) in tasks.iter().enumerate() {
        let lin = linearize_model(task.f.as_ref(), &icl.theta);
        icl.step(&lin.task(task.y)).map_err(|e| e.at_task(k + 1))?;
        trajectory.push(icl.theta.clone());
        linearized.push(lin);
    }
    Ok(LinearizedRun { trajectory, linearized })
}
