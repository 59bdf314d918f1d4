//! Class-incremental RLS: a linear classifier that grows a column per new class.

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};

use super::InverseHessian;

/// Classifier `Θ ∈ R^{d×c}` trained on one-hot targets with a shared
/// inverse Hessian. Labels of earlier samples are implicitly zero-padded
/// when new classes appear, so new columns start at zero.
#[derive(Clone, Debug)]
pub struct DrlsState {
    pub theta: Matrix,
    pub hessian: InverseHessian,
    growth: Vec<usize>,
}

impl DrlsState {
    pub fn new(d: usize, beta: f64, lambda: f64) -> Result<Self> {
        Ok(Self {
            theta: Matrix::zeros(d, 0),
            hessian: InverseHessian::new(d, beta, lambda)?,
            growth: Vec::new(),
        })
    }

    pub fn classes(&self) -> usize {
        self.theta.ncols()
    }

    /// Number of classes after each sample (`c_t`).
    pub fn class_counts(&self) -> &[usize] {
        &self.growth
    }

    pub fn step(&mut self, x: &Vector, label: usize) -> Result<()> {
        let d = self.theta.nrows();
        if x.len() != d {
            return Err(Error::invalid("feature dimension does not match the classifier"));
        }
        if label >= self.classes() {
            let old = self.classes();
            self.theta = std::mem::replace(&mut self.theta, Matrix::zeros(0, 0)).resize_horizontally(label + 1, 0.0);
            log::debug!("D-RLS grew from {old} to {} classes", label + 1);
        }
        if self.hessian.is_dependent(x) {
            return Err(Error::DependentTask { residual: 0.0 });
        }
        // row residual xᵀΘ − yᵀ
        let mut resid = self.theta.tr_mul(x);
        resid[label] -= 1.0;
        let r = self.hessian.update(x)?;
        self.theta -= (&r.phi_x * resid.transpose()) / r.denom;
        self.growth.push(self.classes());
        Ok(())
    }

    /// CSV `t,c_t`.
    pub fn write_growth_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,c_t")?;
        for (t, c) in self.growth.iter().enumerate() {
            writeln!(w, "{},{c}", t + 1)?;
        }
        Ok(())
    }
}

/// Direct solve of the class-incremental objective
/// `λ‖Θ‖_F² + Σ_i ‖y_i − Θᵀx_i‖² / β^i`, one ridge system per column.
pub fn drls_batch_solve(samples: &[(Vector, usize)], d: usize, beta: f64, lambda: f64) -> Result<Matrix> {
    let classes = samples.iter().map(|(_, l)| l + 1).max().unwrap_or(0);
    let mut theta = Matrix::zeros(d, classes);
    for k in 0..classes {
        let tasks: Vec<_> = samples
            .iter()
            .map(|(x, l)| crate::stream::ScalarTask::new(x.clone(), if *l == k { 1.0 } else { 0.0 }))
            .collect();
        theta.set_column(k, &super::batch_rls_solve(&tasks, d, beta, lambda)?);
    }
    Ok(theta)
}
